"""Per-agent circular Gaussian KDE over arrival time-of-week."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from . import _kernels
from .dataset import MobilityDataset
from .encoding import DEFAULT_WEEK_ANCHOR, time_of_week

BANDWIDTH_FLOOR_H = 0.25
BIN_WIDTH_H = 1.0
PROB_EPS = 1e-9
WEEK_HOURS = 168.0


def silverman_bandwidth(x) -> float:
    """1.06 * std * n^(-1/5) (population std), floored at 0.25 h."""
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        return BANDWIDTH_FLOOR_H
    bw = 1.06 * float(np.std(x)) * x.size ** (-0.2)
    return max(bw, BANDWIDTH_FLOOR_H)


@dataclass
class KernelSet:
    centers: np.ndarray
    bandwidth: float

    def __post_init__(self):
        self.centers = np.ascontiguousarray(self.centers, dtype=np.float64)
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be > 0")
        if self.centers.size and (self.centers.min() < 0 or self.centers.max() >= WEEK_HOURS):
            raise ValueError("kernel centers must lie in [0, 168)")

    def density(self, t) -> np.ndarray:
        return _kernels.circular_kde(np.atleast_1d(t), self.centers, self.bandwidth)


@dataclass
class ArrivalTimeModel:
    agents: dict[int, KernelSet] = field(default_factory=dict)
    population: Optional[KernelSet] = None

    def kernels_for(self, agent_id: Optional[int]) -> KernelSet:
        ks = self.agents.get(agent_id) if agent_id is not None else None
        if ks is None or ks.centers.size == 0:
            if self.population is None:
                raise ValueError("model has no population fallback")
            return self.population
        return ks

    def to_arrays(self) -> dict[str, np.ndarray]:
        ids = sorted(self.agents)
        lengths = np.array([self.agents[a].centers.size for a in ids], dtype=np.int64)
        return {
            "arrival.agent_ids": np.array(ids, dtype=np.int64),
            "arrival.lengths": lengths,
            "arrival.centers": np.concatenate([self.agents[a].centers for a in ids]) if ids else np.zeros(0),
            "arrival.bandwidths": np.array([self.agents[a].bandwidth for a in ids], dtype=np.float64),
            "arrival.population_centers": self.population.centers,
            "arrival.population_bandwidth": np.array([self.population.bandwidth]),
        }

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> "ArrivalTimeModel":
        ids = arrays["arrival.agent_ids"]
        offsets = np.concatenate([[0], np.cumsum(arrays["arrival.lengths"])])
        centers = arrays["arrival.centers"]
        agents = {
            int(a): KernelSet(centers[offsets[i]:offsets[i + 1]], float(arrays["arrival.bandwidths"][i]))
            for i, a in enumerate(ids)
        }
        pop = KernelSet(arrays["arrival.population_centers"], float(arrays["arrival.population_bandwidth"][0]))
        return cls(agents, pop)


def fit_arrival_kde(train: MobilityDataset, week_anchor: int = DEFAULT_WEEK_ANCHOR) -> ArrivalTimeModel:
    agents = {}
    pooled = []
    for aid, seq in train.agents.items():
        tow = time_of_week([sp.arrival_epoch for sp in seq.staypoints], week_anchor)
        tow = np.asarray(tow, dtype=np.float64).reshape(-1)
        pooled.append(tow)
        if tow.size:
            agents[aid] = KernelSet(tow, silverman_bandwidth(tow))
    allc = np.concatenate(pooled) if pooled else np.zeros(0)
    if allc.size == 0:
        raise ValueError("cannot fit arrival model on an empty dataset")
    return ArrivalTimeModel(agents, KernelSet(allc, silverman_bandwidth(allc)))


def arrival_density(model: ArrivalTimeModel, agent_id: Optional[int], t) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    if t.size and (t.min() < 0 or t.max() >= WEEK_HOURS):
        raise ValueError("t must lie in [0, 168)")
    return model.kernels_for(agent_id).density(t)


def arrival_probabilities(model: ArrivalTimeModel, agent_id: Optional[int], t) -> np.ndarray:
    """Density times a 1 h bin, clipped to [1e-9, 1].  ``agent_id=None`` uses the population."""
    return np.clip(arrival_density(model, agent_id, t) * BIN_WIDTH_H, PROB_EPS, 1.0)


def arrival_probability(model: ArrivalTimeModel, agent_id: Optional[int], t: float) -> float:
    return float(arrival_probabilities(model, agent_id, [t])[0])
