"""Min-max normalisation and one-hot encoding of staypoints."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataset import AgentSequence, EmptyDatasetError, MobilityDataset, Staypoint

WEEK_SECONDS = 604_800
# Unix time 0 is a Thursday; the first Monday 00:00 UTC is four days later.
FIRST_MONDAY_EPOCH = 345_600
DEFAULT_WEEK_ANCHOR = 1_704_067_200  # Monday 2024-01-01 00:00 UTC
DEGENERATE_RANGE_EPS = 1e-6


def time_of_week(arrival_epoch, week_anchor: int):
    """Hours since the most recent Monday 00:00, in [0, 168).

    Accepts scalars or arrays.
    """
    return np.mod(np.asarray(arrival_epoch, dtype=np.int64) - int(week_anchor), WEEK_SECONDS) / 3600.0


def monday_anchor(epoch: int, utc_offset_s: int = 0) -> int:
    """Epoch of the local Monday 00:00 at or before ``epoch``."""
    local = int(epoch) + utc_offset_s
    return (local - FIRST_MONDAY_EPOCH) // WEEK_SECONDS * WEEK_SECONDS + FIRST_MONDAY_EPOCH - utc_offset_s


def week_index(arrival_epoch, week_anchor: int):
    return np.floor_divide(np.asarray(arrival_epoch, dtype=np.int64) - int(week_anchor), WEEK_SECONDS)


@dataclass(frozen=True)
class NormalizationStats:
    time_min: float
    time_max: float
    duration_min: float
    duration_max: float
    vocabulary: tuple[str, ...]
    week_anchor: int

    def __post_init__(self):
        object.__setattr__(self, "vocabulary", tuple(self.vocabulary))
        if not self.time_min < self.time_max:
            raise ValueError("time_min must be < time_max")
        if not self.duration_min < self.duration_max:
            raise ValueError("duration_min must be < duration_max")
        if len(self.vocabulary) < 1:
            raise ValueError("vocabulary must not be empty")

    @property
    def n_poi(self) -> int:
        return len(self.vocabulary)

    @property
    def width(self) -> int:
        return len(self.vocabulary) + 2

    def normalize_time(self, tow):
        return np.clip((np.asarray(tow, dtype=np.float64) - self.time_min) / (self.time_max - self.time_min), 0.0, 1.0)

    def normalize_duration(self, duration):
        d = np.asarray(duration, dtype=np.float64)
        return np.clip((d - self.duration_min) / (self.duration_max - self.duration_min), 0.0, 1.0)

    def poi_indices(self, tokens: Sequence[str]) -> np.ndarray:
        lookup = {tok: i for i, tok in enumerate(self.vocabulary)}
        try:
            return np.array([lookup[t] for t in tokens], dtype=np.int64)
        except KeyError as exc:
            raise ValueError(f"poi_type {exc.args[0]!r} not in vocabulary") from None

    def to_json(self) -> dict:
        d = asdict(self)
        d["vocabulary"] = list(self.vocabulary)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "NormalizationStats":
        return cls(float(d["time_min"]), float(d["time_max"]), float(d["duration_min"]),
                   float(d["duration_max"]), tuple(d["vocabulary"]), int(d["week_anchor"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "NormalizationStats":
        return cls.from_json(json.loads(Path(path).read_text()))


def fit_normalization(train: MobilityDataset, week_anchor: int = DEFAULT_WEEK_ANCHOR) -> NormalizationStats:
    if len(train) == 0:
        raise EmptyDatasetError("cannot fit normalisation on an empty dataset")
    epochs = np.fromiter((sp.arrival_epoch for sp in train.staypoints()), dtype=np.int64)
    durations = np.fromiter((sp.duration for sp in train.staypoints()), dtype=np.float64)
    tow = time_of_week(epochs, week_anchor)
    t_lo, t_hi = float(tow.min()), float(tow.max())
    d_lo, d_hi = float(durations.min()), float(durations.max())
    if not t_hi > t_lo:
        t_hi = t_lo + DEGENERATE_RANGE_EPS
    if not d_hi > d_lo:
        d_hi = d_lo + DEGENERATE_RANGE_EPS
    return NormalizationStats(t_lo, t_hi, d_lo, d_hi, train.poi_vocabulary, int(week_anchor))


@dataclass(frozen=True)
class SequenceFeatures:
    """Column view of an encoded agent sequence (no prefix token)."""

    poi: np.ndarray  # (n,) int64 vocabulary indices
    tow: np.ndarray  # (n,) hours-of-week
    t_norm: np.ndarray  # (n,)
    d_norm: np.ndarray  # (n,)

    def __len__(self) -> int:
        return self.poi.shape[0]

    def body(self, n_poi: int) -> np.ndarray:
        out = np.zeros((len(self), n_poi + 2))
        out[np.arange(len(self)), self.poi] = 1.0
        out[:, n_poi] = self.t_norm
        out[:, n_poi + 1] = self.d_norm
        return out


def sequence_features(staypoints: Sequence[Staypoint], stats: NormalizationStats) -> SequenceFeatures:
    epochs = np.array([sp.arrival_epoch for sp in staypoints], dtype=np.int64)
    tow = time_of_week(epochs, stats.week_anchor)
    dur = np.array([sp.duration for sp in staypoints], dtype=np.float64)
    return SequenceFeatures(
        stats.poi_indices([sp.poi_type for sp in staypoints]),
        np.asarray(tow, dtype=np.float64),
        stats.normalize_time(tow),
        stats.normalize_duration(dur),
    )


def encode_staypoint(sp: Staypoint, stats: NormalizationStats) -> np.ndarray:
    """Width K+2 vector: one-hot POI, normalised time-of-week, normalised duration."""
    return sequence_features([sp], stats).body(stats.n_poi)[0]


def decode_staypoint(vec: np.ndarray, stats: NormalizationStats) -> tuple[str, float, float]:
    """Inverse of :func:`encode_staypoint`: (poi_type, hours-of-week, duration seconds)."""
    k = stats.n_poi
    poi = stats.vocabulary[int(np.argmax(vec[:k]))]
    tow = stats.time_min + float(vec[k]) * (stats.time_max - stats.time_min)
    dur = stats.duration_min + float(vec[k + 1]) * (stats.duration_max - stats.duration_min)
    return poi, tow, dur


@dataclass(frozen=True)
class EncodedSequence:
    prefix: np.ndarray  # E_0, width K+2
    body: np.ndarray  # (n, K+2)

    def __len__(self) -> int:
        return self.body.shape[0] + 1

    @property
    def n(self) -> int:
        return self.body.shape[0]

    def stacked(self) -> np.ndarray:
        return np.vstack([self.prefix[None, :], self.body])


def encode_sequence(seq: AgentSequence | Sequence[Staypoint], stats: NormalizationStats,
                    e0: Optional[np.ndarray] = None) -> EncodedSequence:
    """Encode a sequence as [E_0, E_1, ..., E_n].

    ``e0`` is the embedding model's shared prefix parameter; zeros if omitted.
    """
    sps = seq.staypoints if isinstance(seq, AgentSequence) else tuple(seq)
    if not sps:
        raise ValueError("cannot encode an empty sequence")
    body = sequence_features(sps, stats).body(stats.n_poi)
    prefix = np.zeros(stats.width) if e0 is None else np.asarray(e0, dtype=np.float64).reshape(-1)
    if prefix.shape[0] != stats.width:
        raise ValueError(f"prefix width {prefix.shape[0]} != {stats.width}")
    return EncodedSequence(prefix.copy(), body)
