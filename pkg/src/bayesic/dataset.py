"""Staypoint data model, CSV ingestion, POI mapping and temporal splitting."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping, Optional, Sequence

import numpy as np

from . import _kernels

UNKNOWN = "unknown"
NORMAL = "normal"
ANOMALOUS = "anomalous"
LABELS = (NORMAL, ANOMALOUS)

STAYPOINT_COLUMNS = ("agent_id", "arrival_epoch", "duration_s", "poi_type", "lat", "lon", "label")
REQUIRED_COLUMNS = ("agent_id", "arrival_epoch", "duration_s", "poi_type")
POI_INDEX_COLUMNS = ("poi_id", "poi_type", "lat", "lon")
DEFAULT_POI_RADIUS_M = 15.0

_LABEL_ALIASES = {
    "": None,
    "normal": NORMAL,
    "0": NORMAL,
    "false": NORMAL,
    "anomalous": ANOMALOUS,
    "anomaly": ANOMALOUS,
    "1": ANOMALOUS,
    "true": ANOMALOUS,
}


class DatasetError(ValueError):
    """Base class for data ingestion problems."""


class SchemaError(DatasetError):
    pass


class EmptyDatasetError(DatasetError):
    pass


class RowValidationError(DatasetError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Staypoint:
    agent_id: int
    arrival_epoch: int
    duration: float
    poi_type: str
    location: Optional[tuple[float, float]] = None
    label: Optional[str] = None

    def __post_init__(self):
        if not self.duration > 0:
            raise ValueError(f"duration must be > 0, got {self.duration}")
        if self.label is not None and self.label not in LABELS:
            raise ValueError(f"label must be one of {LABELS}, got {self.label!r}")

    @property
    def is_anomalous(self) -> bool:
        return self.label == ANOMALOUS


@dataclass(frozen=True)
class AgentSequence:
    agent_id: int
    staypoints: tuple[Staypoint, ...]

    def __post_init__(self):
        object.__setattr__(self, "staypoints", tuple(self.staypoints))
        prev = None
        for sp in self.staypoints:
            if sp.agent_id != self.agent_id:
                raise ValueError(f"staypoint of agent {sp.agent_id} in sequence of agent {self.agent_id}")
            if prev is not None and sp.arrival_epoch < prev:
                raise ValueError("staypoints must be sorted by arrival_epoch")
            prev = sp.arrival_epoch

    def __len__(self) -> int:
        return len(self.staypoints)

    def __iter__(self) -> Iterator[Staypoint]:
        return iter(self.staypoints)


@dataclass(frozen=True)
class MobilityDataset:
    """Immutable collection of per-agent staypoint sequences.

    ``agent_labels`` carries agent-level ground truth when known (synthetic data
    or a labels sidecar).  ``cold_start_agents`` lists agents of a test split
    that had no staypoints in the matching training split.
    """

    agents: Mapping[int, AgentSequence]
    poi_vocabulary: tuple[str, ...]
    split_tag: str = "train"
    agent_labels: Mapping[int, str] = field(default_factory=dict)
    cold_start_agents: frozenset = frozenset()

    def __post_init__(self):
        vocab = tuple(self.poi_vocabulary)
        if not vocab or vocab[-1] != UNKNOWN or vocab.count(UNKNOWN) != 1:
            raise ValueError("poi_vocabulary must end with the single reserved token 'unknown'")
        if len(set(vocab)) != len(vocab):
            raise ValueError("poi_vocabulary has duplicates")
        if self.split_tag not in ("train", "test"):
            raise ValueError(f"split_tag must be 'train' or 'test', got {self.split_tag!r}")
        known = set(vocab)
        for seq in self.agents.values():
            for sp in seq.staypoints:
                if sp.poi_type not in known:
                    raise ValueError(f"poi_type {sp.poi_type!r} not in vocabulary")
        ordered = {aid: self.agents[aid] for aid in sorted(self.agents)}
        object.__setattr__(self, "agents", MappingProxyType(ordered))
        object.__setattr__(self, "poi_vocabulary", vocab)
        object.__setattr__(self, "agent_labels", MappingProxyType(dict(self.agent_labels)))
        object.__setattr__(self, "cold_start_agents", frozenset(self.cold_start_agents))

    @property
    def agent_count(self) -> int:
        return len(self.agents)

    @property
    def n_poi_types(self) -> int:
        return len(self.poi_vocabulary)

    def __len__(self) -> int:
        return sum(len(s) for s in self.agents.values())

    def staypoints(self) -> Iterator[Staypoint]:
        for seq in self.agents.values():
            yield from seq.staypoints

    def poi_index(self, token: str) -> int:
        return self.poi_vocabulary.index(token)

    def time_range(self) -> tuple[int, int]:
        """(first arrival, ceil of the latest stay end), in epoch seconds."""
        if len(self) == 0:
            raise EmptyDatasetError("dataset has no staypoints")
        start = min(sp.arrival_epoch for sp in self.staypoints())
        end = max(math.ceil(sp.arrival_epoch + sp.duration) for sp in self.staypoints())
        return start, end

    def with_vocabulary(self, vocabulary: Sequence[str]) -> "MobilityDataset":
        return MobilityDataset(dict(self.agents), tuple(vocabulary), self.split_tag,
                               dict(self.agent_labels), self.cold_start_agents)


def build_vocabulary(tokens: Iterable[str]) -> tuple[str, ...]:
    return tuple(sorted(set(tokens) - {UNKNOWN})) + (UNKNOWN,)


def build_dataset(
    staypoints: Iterable[Staypoint],
    vocabulary: Optional[Sequence[str]] = None,
    split_tag: str = "train",
    agent_labels: Optional[Mapping[int, str]] = None,
    cold_start_agents: Iterable[int] = (),
) -> MobilityDataset:
    """Group staypoints by agent and stable-sort each group by arrival time."""
    groups: dict[int, list[Staypoint]] = {}
    for sp in staypoints:
        groups.setdefault(sp.agent_id, []).append(sp)
    if vocabulary is None:
        vocabulary = build_vocabulary(sp.poi_type for g in groups.values() for sp in g)
    agents = {
        aid: AgentSequence(aid, tuple(sorted(g, key=lambda s: s.arrival_epoch)))
        for aid, g in groups.items()
    }
    return MobilityDataset(agents, tuple(vocabulary), split_tag, dict(agent_labels or {}),
                           frozenset(cold_start_agents))


# ---------------------------------------------------------------------------
# CSV i/o
# ---------------------------------------------------------------------------


def _parse_row(row: dict, cols: Mapping[str, str], line: int) -> Staypoint:
    def cell(name):
        col = cols.get(name)
        if col is None:
            return ""
        return (row.get(col) or "").strip()

    try:
        agent_id = int(cell("agent_id"))
        arrival = int(float(cell("arrival_epoch")))
        duration = float(cell("duration_s"))
    except ValueError as exc:
        raise RowValidationError(line, f"unparseable numeric field ({exc})") from None
    if not math.isfinite(duration) or duration <= 0:
        raise RowValidationError(line, f"duration must be > 0, got {cell('duration_s')!r}")
    poi = cell("poi_type") or UNKNOWN

    lat, lon = cell("lat"), cell("lon")
    location = None
    if lat and lon:
        try:
            location = (float(lat), float(lon))
        except ValueError:
            raise RowValidationError(line, f"bad location ({lat!r}, {lon!r})") from None
    raw_label = cell("label").lower()
    if raw_label not in _LABEL_ALIASES:
        raise RowValidationError(line, f"unknown label {cell('label')!r}")
    return Staypoint(agent_id, arrival, duration, poi, location, _LABEL_ALIASES[raw_label])


def load_staypoints(
    path,
    schema: Optional[Mapping[str, str]] = None,
    split_tag: str = "train",
    vocabulary: Optional[Sequence[str]] = None,
) -> MobilityDataset:
    """Read a staypoint CSV into a :class:`MobilityDataset`.

    ``schema`` maps canonical column names (see ``STAYPOINT_COLUMNS``) to the
    header names used in the file; unmapped columns keep their canonical name.
    Line numbers in errors are 1-based file lines (the header is line 1).
    """
    cols = {c: c for c in STAYPOINT_COLUMNS}
    cols.update(schema or {})
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if cols[c] not in header]
        if missing:
            raise SchemaError(f"{path}: missing required column(s) {', '.join(cols[c] for c in missing)}")
        present = {k: v for k, v in cols.items() if v in header}
        rows = [_parse_row(row, present, reader.line_num) for row in reader]
    if not rows:
        raise EmptyDatasetError(f"{path}: no staypoint rows")
    if vocabulary is not None:
        vocab = tuple(vocabulary)
        rows = [sp if sp.poi_type in vocab else _replace_poi(sp, UNKNOWN) for sp in rows]
    return build_dataset(rows, vocabulary, split_tag)


def _replace_poi(sp: Staypoint, poi: str) -> Staypoint:
    return Staypoint(sp.agent_id, sp.arrival_epoch, sp.duration, poi, sp.location, sp.label)


def _fmt_float(x: float) -> str:
    return repr(float(x))


def save_staypoints(dataset: MobilityDataset, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STAYPOINT_COLUMNS)
        for sp in dataset.staypoints():
            lat, lon = ("", "") if sp.location is None else tuple(_fmt_float(v) for v in sp.location)
            w.writerow([sp.agent_id, sp.arrival_epoch, _fmt_float(sp.duration), sp.poi_type,
                        lat, lon, sp.label or ""])


def save_agent_labels(labels: Mapping[int, str], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("agent_id", "label"))
        for aid in sorted(labels):
            w.writerow((aid, labels[aid]))


def load_agent_labels(path) -> dict[int, str]:
    out = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not {"agent_id", "label"} <= set(reader.fieldnames or []):
            raise SchemaError(f"{path}: expected columns agent_id,label")
        for row in reader:
            label = _LABEL_ALIASES.get(row["label"].strip().lower())
            if label is None:
                raise RowValidationError(reader.line_num, f"bad agent label {row['label']!r}")
            out[int(row["agent_id"])] = label
    return out


# ---------------------------------------------------------------------------
# POI mapping
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PoiIndex:
    """POI entries kept sorted by ``poi_id`` so the first minimum wins ties."""

    entries: tuple[tuple[int, str, float, float], ...]

    def __post_init__(self):
        entries = tuple(sorted((int(i), str(t), float(la), float(lo)) for i, t, la, lo in self.entries))
        for pid, _, la, lo in entries:
            if not -90.0 <= la <= 90.0 or not -180.0 <= lo <= 180.0:
                raise ValueError(f"poi {pid}: coordinates out of range ({la}, {lo})")
        object.__setattr__(self, "entries", entries)
        object.__setattr__(self, "_lats", np.array([e[2] for e in entries], dtype=np.float64))
        object.__setattr__(self, "_lons", np.array([e[3] for e in entries], dtype=np.float64))

    def __len__(self) -> int:
        return len(self.entries)


def load_poi_index(path) -> PoiIndex:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in POI_INDEX_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise SchemaError(f"{path}: missing required column(s) {', '.join(missing)}")
        entries = []
        for row in reader:
            try:
                entries.append((int(row["poi_id"]), row["poi_type"].strip(), float(row["lat"]), float(row["lon"])))
            except ValueError as exc:
                raise RowValidationError(reader.line_num, str(exc)) from None
    return PoiIndex(tuple(entries))


def map_poi(point: tuple[float, float], index: PoiIndex, radius: float = DEFAULT_POI_RADIUS_M) -> str:
    """POI type of the nearest index entry within ``radius`` metres, else ``unknown``."""
    if radius <= 0:
        raise ValueError("radius must be > 0")
    if len(index) == 0:
        return UNKNOWN
    j, d = _kernels.nearest_haversine(point[0], point[1], index._lats, index._lons)
    if j < 0 or d > radius:
        return UNKNOWN
    return index.entries[j][1]


def map_dataset_pois(dataset: MobilityDataset, index: PoiIndex,
                     radius: float = DEFAULT_POI_RADIUS_M) -> MobilityDataset:
    """Assign ``poi_type`` from coordinates; rows without coordinates become ``unknown``."""
    mapped = [
        _replace_poi(sp, map_poi(sp.location, index, radius) if sp.location else UNKNOWN)
        for sp in dataset.staypoints()
    ]
    vocab = build_vocabulary([e[1] for e in index.entries])
    return build_dataset(mapped, vocab, dataset.split_tag, dataset.agent_labels, dataset.cold_start_agents)


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------


def split_by_time(dataset: MobilityDataset, boundary_epoch: int) -> tuple[MobilityDataset, MobilityDataset]:
    """Half-open split: arrivals before ``boundary_epoch`` train, the rest test.

    The boundary must fall inside ``dataset.time_range()`` (inclusive).  Test
    agents with no training staypoints are recorded in the test half's
    ``cold_start_agents``.
    """
    start, end = dataset.time_range()
    if not start <= boundary_epoch <= end:
        raise ValueError(f"boundary {boundary_epoch} outside dataset time range [{start}, {end}]")
    train_sp, test_sp = [], []
    for sp in dataset.staypoints():
        (train_sp if sp.arrival_epoch < boundary_epoch else test_sp).append(sp)
    vocab = dataset.poi_vocabulary
    train = build_dataset(train_sp, vocab, "train", dataset.agent_labels)
    test_agents = {sp.agent_id for sp in test_sp}
    cold = test_agents - set(train.agents)
    test = build_dataset(test_sp, vocab, "test", dataset.agent_labels, cold)
    return train, test
