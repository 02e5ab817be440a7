"""Joint probability assembly and anomaly scores."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import torch

from . import arrival as arrival_mod
from .dataset import AgentSequence, MobilityDataset, Staypoint
from .duration import LOSS_EPS, PROB_EPS, density_to_probability
from .embedding import pad_windows
from .encoding import sequence_features
from .poi import step_tensor
from .training import TrainedPipeline

# largest double below 1; 1 - joint rounds to 1.0 once joint < 2**-54
MAX_SCORE = float(np.nextafter(1.0, 0.0))
SCORE_COLUMNS = ("agent_id", "staypoint_idx", "arrival_epoch", "p_arrival", "p_poi", "p_duration", "joint", "score")


class ScoringError(ValueError):
    pass


@dataclass(frozen=True)
class AnomalyRecord:
    agent_id: int
    staypoint_idx: int
    arrival_epoch: int
    p_arrival: float
    p_poi: float
    p_duration: float
    joint: float
    score: float

    @classmethod
    def from_terms(cls, agent_id, idx, epoch, p_arrival, p_poi, p_duration) -> "AnomalyRecord":
        joint = p_arrival * p_poi * p_duration
        return cls(int(agent_id), int(idx), int(epoch), p_arrival, p_poi, p_duration, joint,
                   min(1.0 - joint, MAX_SCORE))


def clip_probability(x):
    return np.clip(x, PROB_EPS, 1.0)


@dataclass
class SequenceTerms:
    """Per-step conditional terms for one agent sequence, before ablation."""

    p_arrival: np.ndarray
    poi_probs: np.ndarray  # (n, K) full categorical distributions
    p_poi: np.ndarray
    duration_density: np.ndarray
    mixture_weights: np.ndarray  # (n, K_mix)
    poi_index: np.ndarray

    @property
    def p_duration(self) -> np.ndarray:
        return density_to_probability(self.duration_density)


def sequence_terms(pipeline: TrainedPipeline, agent_id: int, staypoints: Sequence[Staypoint],
                   use_embedding: Optional[bool] = None) -> SequenceTerms:
    """Evaluate all three conditionals for every staypoint of a sequence.

    The POI recurrent state is threaded through the sequence and reset at the
    same window boundaries used in training.
    """
    cfg = pipeline.config
    use_emb = cfg.use_embedding if use_embedding is None else use_embedding
    stats = pipeline.stats
    try:
        f = sequence_features(staypoints, stats)
    except ValueError as exc:
        raise ScoringError(f"agent {agent_id}: {exc}") from None
    n = len(f)
    h = pipeline.embedding_for(agent_id) if use_emb else np.zeros(pipeline.latent_dim)

    p_arr = arrival_mod.arrival_probabilities(pipeline.arrival, agent_id if use_emb else None, f.tow)

    net = pipeline.net
    window = net.window
    t_w, mask = pad_windows(f.t_norm[:, None], window)
    c_w, _ = pad_windows(f.poi[:, None].astype(np.float64), window)
    t_w = torch.as_tensor(t_w[..., 0])
    c_w = torch.as_tensor(c_w[..., 0]).to(torch.int64)
    hb = torch.as_tensor(h, dtype=torch.float64)[None].expand(t_w.shape[0], -1)
    with torch.no_grad():
        logits, _ = net.poi(step_tensor(hb, t_w, c_w, net.n_poi))
        probs = torch.softmax(logits, dim=-1)[torch.as_tensor(mask)].numpy()
        ht = torch.as_tensor(h, dtype=torch.float64)[None].expand(n, -1)
        d_logits = net.duration.logits(ht, torch.as_tensor(f.t_norm), torch.as_tensor(f.poi))
        log_dens = net.duration.log_density(d_logits, torch.as_tensor(f.d_norm)).numpy()
        weights = torch.softmax(d_logits, dim=-1).numpy()
    p_poi = clip_probability(probs[np.arange(n), f.poi])
    return SequenceTerms(p_arr, probs, p_poi, np.exp(log_dens), weights, f.poi)


def _records(pipeline, agent_id, staypoints, terms: SequenceTerms, start_idx=0) -> list[AnomalyRecord]:
    cfg = pipeline.config
    pa = terms.p_arrival if cfg.use_arrival else np.ones_like(terms.p_arrival)
    pc = terms.p_poi if cfg.use_poi else np.ones_like(terms.p_poi)
    pd = terms.p_duration if cfg.use_duration else np.ones_like(terms.p_poi)
    return [
        AnomalyRecord.from_terms(agent_id, start_idx + i, sp.arrival_epoch, float(pa[i]), float(pc[i]), float(pd[i]))
        for i, sp in enumerate(staypoints)
    ]


def score_sequence(pipeline: TrainedPipeline, seq: AgentSequence) -> list[AnomalyRecord]:
    if len(seq) == 0:
        return []
    terms = sequence_terms(pipeline, seq.agent_id, seq.staypoints)
    return _records(pipeline, seq.agent_id, seq.staypoints, terms)


def score_staypoint(pipeline: TrainedPipeline, agent_id: int, staypoint: Staypoint,
                    history: Sequence[Staypoint] = ()) -> AnomalyRecord:
    """Score one staypoint given the observed test history that precedes it."""
    sps = tuple(history) + (staypoint,)
    terms = sequence_terms(pipeline, agent_id, sps)
    return _records(pipeline, agent_id, sps, terms)[-1]


def score_dataset(pipeline: TrainedPipeline, test: MobilityDataset) -> list[AnomalyRecord]:
    records = []
    for seq in test.agents.values():
        records.extend(score_sequence(pipeline, seq))
    return records


def agent_score(records: Iterable[AnomalyRecord]) -> float:
    scores = [r.score for r in records]
    if not scores:
        raise ScoringError("cannot aggregate an empty record list")
    return max(scores)


def agent_scores(records: Iterable[AnomalyRecord]) -> dict[int, float]:
    grouped: dict[int, list[AnomalyRecord]] = {}
    for r in records:
        grouped.setdefault(r.agent_id, []).append(r)
    return {aid: agent_score(rs) for aid, rs in sorted(grouped.items())}


def staypoint_nll(pipeline: TrainedPipeline, seq: AgentSequence) -> np.ndarray:
    """Per-step cascade NLL, -log P(c | t, h) - log P(d | c, t, h), with the loss-time floors."""
    terms = sequence_terms(pipeline, seq.agent_id, seq.staypoints)
    poi = -np.log(np.maximum(terms.poi_probs[np.arange(len(seq)), terms.poi_index], PROB_EPS))
    dur = -np.log(np.maximum(terms.duration_density, LOSS_EPS))
    return poi + dur


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def write_scores(records: Sequence[AnomalyRecord], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SCORE_COLUMNS)
        for r in records:
            w.writerow([r.agent_id, r.staypoint_idx, r.arrival_epoch] +
                       [repr(float(getattr(r, c))) for c in SCORE_COLUMNS[3:]])


def read_scores(path) -> list[AnomalyRecord]:
    with Path(path).open(newline="") as fh:
        return [
            AnomalyRecord(int(row["agent_id"]), int(row["staypoint_idx"]), int(row["arrival_epoch"]),
                          float(row["p_arrival"]), float(row["p_poi"]), float(row["p_duration"]),
                          float(row["joint"]), float(row["score"]))
            for row in csv.DictReader(fh)
        ]


def write_agent_scores(scores: Mapping[int, float], path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("agent_id", "score"))
        for aid in sorted(scores):
            w.writerow((aid, repr(float(scores[aid]))))


def read_agent_scores(path) -> dict[int, float]:
    with Path(path).open(newline="") as fh:
        return {int(r["agent_id"]): float(r["score"]) for r in csv.DictReader(fh)}
