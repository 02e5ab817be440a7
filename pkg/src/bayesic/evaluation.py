"""Ranking metrics, curve points, the visit-rate baseline and score fusion."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .dataset import ANOMALOUS, MobilityDataset
from .encoding import week_index

VISIT_STD_EPS = 1e-6


class MetricsError(ValueError):
    pass


def _arrays(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1).astype(np.int64)
    if s.shape != y.shape:
        raise MetricsError(f"scores ({s.size}) and labels ({y.size}) are not aligned")
    if not np.isin(y, (0, 1)).all():
        raise MetricsError("labels must be 0/1")
    return s, y


def auroc(scores, labels) -> float:
    """Mann-Whitney estimate P(pos > neg) + 0.5 P(tie), via average ranks."""
    s, y = _arrays(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricsError("AUROC needs at least one positive and one negative")
    ranks = rankdata(s)  # ties get the average rank
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _descending_order(s: np.ndarray) -> np.ndarray:
    return np.argsort(-s, kind="stable")


def average_precision(scores, labels) -> float:
    """Step-wise AP: mean of precision@rank over positive ranks (stable order on ties)."""
    s, y = _arrays(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise MetricsError("average precision needs at least one positive")
    ys = y[_descending_order(s)]
    tp = np.cumsum(ys)
    ranks = np.arange(1, ys.size + 1)
    return float((tp[ys == 1] / ranks[ys == 1]).sum() / n_pos)


def _threshold_counts(s: np.ndarray, y: np.ndarray):
    """Distinct thresholds (descending) with TP/FP counts for 'score >= threshold'."""
    order = _descending_order(s)
    ss, ys = s[order], y[order]
    tp = np.cumsum(ys)
    fp = np.cumsum(1 - ys)
    last = np.r_[ss[1:] != ss[:-1], True]  # end of each tie group
    return ss[last], tp[last], fp[last]


def max_f1(scores, labels) -> tuple[float, float, float]:
    """(best F1, lowest threshold reaching it, precision at that threshold)."""
    s, y = _arrays(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise MetricsError("max F1 needs at least one positive")
    thr, tp, fp = _threshold_counts(s, y)
    precision = tp / (tp + fp)
    # 2PR/(P+R) written as one division so equal ratios give bit-equal floats; 0 when tp = 0
    f1 = 2.0 * tp / (2.0 * tp + fp + (n_pos - tp))
    best = f1.max()
    # thresholds are descending, so the last index attaining the max is the lowest threshold
    i = int(np.flatnonzero(f1 == best)[-1])
    return float(best), float(thr[i]), float(precision[i])


def roc_points(scores, labels) -> list[tuple[float, float]]:
    s, y = _arrays(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    _, tp, fp = _threshold_counts(s, y)
    pts = [(0.0, 0.0)] + [(float(f / n_neg), float(t / n_pos)) for t, f in zip(tp, fp)]
    if pts[-1] != (1.0, 1.0):
        pts.append((1.0, 1.0))
    return pts


def pr_points(scores, labels) -> list[tuple[float, float]]:
    """(recall, precision) at each distinct threshold, highest threshold first."""
    s, y = _arrays(scores, labels)
    n_pos = int(y.sum())
    _, tp, fp = _threshold_counts(s, y)
    return [(float(t / n_pos), float(t / (t + f))) for t, f in zip(tp, fp)]


@dataclass
class MetricsReport:
    level: str
    aupr: float
    auroc: float
    average_precision: float
    max_f1: float
    precision_at_max_f1: float
    threshold_at_max_f1: float
    n_pos: int
    n_neg: int
    roc_points: list = field(default_factory=list, repr=False)
    pr_points: list = field(default_factory=list, repr=False)

    def scalars(self) -> dict:
        d = asdict(self)
        d.pop("roc_points")
        d.pop("pr_points")
        return d

    def to_json(self) -> dict:
        d = asdict(self)
        d["roc_points"] = [list(p) for p in self.roc_points]
        d["pr_points"] = [list(p) for p in self.pr_points]
        return d


def evaluate(scores, labels, level: str) -> MetricsReport:
    if level not in ("agent", "staypoint"):
        raise ValueError(f"level must be 'agent' or 'staypoint', got {level!r}")
    s, y = _arrays(scores, labels)
    ap = average_precision(s, y)
    f1, thr, prec = max_f1(s, y)
    return MetricsReport(level, ap, auroc(s, y), ap, f1, prec, thr, int(y.sum()), int(y.size - y.sum()),
                         roc_points(s, y), pr_points(s, y))


def staypoint_labels(records, test: MobilityDataset) -> np.ndarray:
    """0/1 labels aligned with ``records`` (matched by agent and position)."""
    out = np.empty(len(records), dtype=np.int64)
    for i, r in enumerate(records):
        seq = test.agents.get(r.agent_id)
        if seq is None or r.staypoint_idx >= len(seq):
            raise MetricsError(f"record ({r.agent_id}, {r.staypoint_idx}) has no matching staypoint")
        sp = seq.staypoints[r.staypoint_idx]
        if sp.arrival_epoch != r.arrival_epoch:
            raise MetricsError(f"record ({r.agent_id}, {r.staypoint_idx}) arrival mismatch")
        out[i] = int(sp.label == ANOMALOUS)
    return out


def aligned_agent_arrays(agent_scores: Mapping[int, float], agent_labels: Mapping[int, str]):
    missing = set(agent_scores) ^ set(agent_labels)
    if missing:
        raise MetricsError(f"agent scores and labels differ on {len(missing)} agent(s), e.g. {min(missing)}")
    ids = sorted(agent_scores)
    return (np.array([agent_scores[a] for a in ids]),
            np.array([int(agent_labels[a] == ANOMALOUS) for a in ids]))


def write_report(report: MetricsReport, out_dir, prefix: str) -> list[Path]:
    out_dir = Path(out_dir)
    roc = out_dir / f"{prefix}_roc.csv"
    pr = out_dir / f"{prefix}_pr.csv"
    with roc.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("fpr", "tpr"))
        w.writerows((repr(a), repr(b)) for a, b in report.roc_points)
    with pr.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("recall", "precision"))
        w.writerows((repr(a), repr(b)) for a, b in report.pr_points)
    return [roc, pr]


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# visit rates
# ---------------------------------------------------------------------------


@dataclass
class VisitRateProfile:
    """Weekly visit statistics keyed by (agent_id, poi_type)."""

    train_mean: dict = field(default_factory=dict)
    train_std: dict = field(default_factory=dict)
    test_mean: dict = field(default_factory=dict)

    def agents(self) -> set[int]:
        return {a for a, _ in self.train_mean}


def _weekly_counts(dataset: MobilityDataset, week_anchor: int):
    """{(agent, poi): counts per calendar week} over the dataset's full week span."""
    epochs = [sp.arrival_epoch for sp in dataset.staypoints()]
    if not epochs:
        return {}, 0
    weeks = week_index(np.array(epochs), week_anchor)
    w0, n_weeks = int(weeks.min()), int(weeks.max() - weeks.min() + 1)
    counts: dict = {}
    for sp, w in zip(dataset.staypoints(), weeks):
        key = (sp.agent_id, sp.poi_type)
        counts.setdefault(key, np.zeros(n_weeks))[int(w) - w0] += 1
    return counts, n_weeks


def fit_visit_rates(train: MobilityDataset, test: MobilityDataset, week_anchor: int) -> VisitRateProfile:
    tr, _ = _weekly_counts(train, week_anchor)
    te, n_test_weeks = _weekly_counts(test, week_anchor)
    agents = set(train.agents) | set(test.agents)
    prof = VisitRateProfile()
    for aid in sorted(agents):
        pois = {p for a, p in tr if a == aid} | {p for a, p in te if a == aid}
        for poi in sorted(pois):
            c_tr = tr.get((aid, poi))
            c_te = te.get((aid, poi))
            prof.train_mean[aid, poi] = float(c_tr.mean()) if c_tr is not None else 0.0
            prof.train_std[aid, poi] = float(c_tr.std()) if c_tr is not None else 0.0
            prof.test_mean[aid, poi] = float(c_te.mean()) if c_te is not None else 0.0
    return prof


def visit_rate_score(profile: VisitRateProfile, agent_id: int) -> float:
    """max over POI types of |test mean - train mean| / (train std + 1e-6)."""
    keys = [k for k in profile.train_mean if k[0] == agent_id]
    if not keys:
        raise KeyError(f"agent {agent_id} not in visit-rate profile")
    return max(abs(profile.test_mean[k] - profile.train_mean[k]) / (profile.train_std[k] + VISIT_STD_EPS)
               for k in keys)


def fuse_scores(model_scores: Mapping[int, float], visit_scores: Mapping[int, float]):
    """Min-max normalise visit scores across agents and multiply into model scores.

    Returns (fused scores, metadata); a degenerate visit range normalises to 0
    and sets ``metadata["degenerate_visit_range"]``.
    """
    if set(model_scores) != set(visit_scores):
        raise MetricsError("model and visit-rate scores cover different agents")
    ids = sorted(model_scores)
    v = np.array([visit_scores[a] for a in ids], dtype=np.float64)
    lo, hi = (float(v.min()), float(v.max())) if v.size else (0.0, 0.0)
    degenerate = not hi > lo
    norm = np.zeros_like(v) if degenerate else (v - lo) / (hi - lo)
    fused = {a: float(norm[i] * model_scores[a]) for i, a in enumerate(ids)}
    return fused, {"degenerate_visit_range": degenerate, "visit_min": lo, "visit_max": hi}
