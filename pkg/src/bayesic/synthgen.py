"""Seeded synthetic staypoint generator with persona schedules and anomaly injection."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .dataset import ANOMALOUS, NORMAL, UNKNOWN, MobilityDataset, Staypoint, build_dataset, build_vocabulary
from .encoding import DEFAULT_WEEK_ANCHOR, WEEK_SECONDS, week_index

# same ordering a CSV round trip produces, so in-memory and on-disk runs train identical models
SYNTH_VOCABULARY = build_vocabulary(("home", "work", "school", "restaurant", "recreation", UNKNOWN))
ANOMALY_KINDS = ("hunger", "social", "work", "combined")
MIN_DURATION_S = 300.0
TIME_SHIFT_STD_H = 1.0
DURATION_SCALE_LOG_STD = 0.08
PROBABILITY_JITTER = 0.2

WEEKDAYS = (0, 1, 2, 3, 4)
WEEKEND = (5, 6)
EVERY_DAY = tuple(range(7))


@dataclass(frozen=True)
class ScheduleEntry:
    poi_type: str
    days: tuple[int, ...]
    hour: float  # mean arrival, hours after midnight
    hour_std: float
    duration_s: float
    duration_std_s: float
    probability: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("visit probability must be in [0, 1]")
        if not self.duration_s > 0:
            raise ValueError("mean duration must be > 0")


@dataclass(frozen=True)
class PersonaTemplate:
    name: str
    schedule: tuple[ScheduleEntry, ...]


H = 3600.0

WORKER = PersonaTemplate("worker", (
    ScheduleEntry("work", WEEKDAYS, 9.0, 0.4, 8.5 * H, 0.4 * H, 1.0),
    ScheduleEntry("restaurant", WEEKDAYS, 17.75, 0.3, 1.0 * H, 0.25 * H, 0.3),
    ScheduleEntry("recreation", WEEKDAYS, 18.0, 0.5, 1.5 * H, 0.3 * H, 0.3),
    ScheduleEntry("home", WEEKDAYS, 19.5, 0.5, 12.5 * H, 0.5 * H, 1.0),
    ScheduleEntry("recreation", (5,), 14.0, 1.0, 3.0 * H, 0.5 * H, 0.8),
    ScheduleEntry("restaurant", (5,), 19.0, 0.5, 1.5 * H, 0.3 * H, 0.6),
    ScheduleEntry("recreation", (6,), 11.0, 1.0, 2.0 * H, 0.5 * H, 0.5),
    ScheduleEntry("home", WEEKEND, 21.5, 0.5, 11.0 * H, 0.5 * H, 1.0),
))

STUDENT = PersonaTemplate("student", (
    ScheduleEntry("school", WEEKDAYS, 8.0, 0.3, 6.5 * H, 0.3 * H, 1.0),
    ScheduleEntry("recreation", WEEKDAYS, 15.0, 0.5, 2.0 * H, 0.4 * H, 0.6),
    ScheduleEntry("home", WEEKDAYS, 17.5, 0.5, 14.5 * H, 0.5 * H, 1.0),
    ScheduleEntry("restaurant", (1, 3), 12.0, 0.3, 0.75 * H, 0.2 * H, 0.5),
    ScheduleEntry("work", (5,), 10.0, 0.3, 5.0 * H, 0.3 * H, 1.0),
    ScheduleEntry("recreation", (5,), 16.0, 0.8, 3.0 * H, 0.5 * H, 0.7),
    ScheduleEntry("recreation", (6,), 13.0, 1.0, 3.0 * H, 0.5 * H, 0.7),
    ScheduleEntry("home", WEEKEND, 20.0, 0.5, 12.0 * H, 0.5 * H, 1.0),
))

FLEXIBLE = PersonaTemplate("flexible", (
    ScheduleEntry("recreation", EVERY_DAY, 10.0, 2.5, 2.5 * H, 1.0 * H, 0.5),
    ScheduleEntry("work", (1, 3), 13.0, 1.5, 4.0 * H, 1.0 * H, 0.9),
    ScheduleEntry("recreation", EVERY_DAY, 15.0, 2.0, 2.0 * H, 0.8 * H, 0.4),
    ScheduleEntry("restaurant", EVERY_DAY, 19.0, 1.5, 1.2 * H, 0.4 * H, 0.6),
    ScheduleEntry("home", EVERY_DAY, 22.0, 1.5, 11.0 * H, 1.0 * H, 1.0),
))

DEFAULT_PERSONAS = (WORKER, STUDENT, FLEXIBLE)


@dataclass(frozen=True)
class AgentTraits:
    """Per-agent perturbation of a persona, drawn once per agent."""

    persona: PersonaTemplate
    time_shift_h: float = 0.0
    duration_scale: float = 1.0
    probability_shift: tuple[float, ...] = ()


@dataclass(frozen=True)
class AnomalySpec:
    kind: str
    fraction: float
    meals_per_week: int = 3
    meal_duration_s: float = 2700.0
    meal_duration_std_s: float = 900.0

    def __post_init__(self):
        if self.kind not in ANOMALY_KINDS:
            raise ValueError(f"anomaly kind must be one of {ANOMALY_KINDS}")
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("anomaly fraction must be in [0, 1]")
        if self.meals_per_week < 0:
            raise ValueError("meals_per_week must be >= 0")


def _agent_traits(persona: PersonaTemplate, rng: np.random.Generator, personalize: bool) -> AgentTraits:
    if not personalize:
        return AgentTraits(persona, 0.0, 1.0, tuple(0.0 for _ in persona.schedule))
    shift = float(rng.normal(0.0, TIME_SHIFT_STD_H))
    scale = float(math.exp(rng.normal(0.0, DURATION_SCALE_LOG_STD)))
    dp = tuple(0.0 if e.probability in (0.0, 1.0) else float(rng.uniform(-PROBABILITY_JITTER, PROBABILITY_JITTER))
               for e in persona.schedule)
    return AgentTraits(persona, shift, scale, dp)


def _truncated_normal(rng: np.random.Generator, mean: float, std: float, low: float, tries: int = 64) -> float:
    """Gaussian draw conditioned on ``x >= low`` by resampling; avoids a point mass at the bound."""
    for _ in range(tries):
        x = rng.normal(mean, std)
        if x >= low:
            return float(x)
    return float(low)


def _simulate_agent(agent_id: int, traits: AgentTraits, weeks: range, week_anchor: int,
                    rng: np.random.Generator) -> list[Staypoint]:
    out = []
    for w in weeks:
        week_start = week_anchor + w * WEEK_SECONDS
        for e, dp in zip(traits.persona.schedule, traits.probability_shift):
            p = min(max(e.probability + dp, 0.0), 1.0)
            for day in e.days:
                if p < 1.0 and rng.random() >= p:
                    continue
                hour = e.hour + traits.time_shift_h + rng.normal(0.0, e.hour_std)
                tow_s = (day * 24.0 + hour) * 3600.0 % WEEK_SECONDS
                dur = traits.duration_scale * _truncated_normal(
                    rng, e.duration_s, e.duration_std_s, MIN_DURATION_S / traits.duration_scale)
                out.append(Staypoint(agent_id, int(week_start + round(tow_s)), float(round(dur)), e.poi_type,
                                     None, NORMAL))
    return out


def generate(
    personas: Sequence[PersonaTemplate] = DEFAULT_PERSONAS,
    n_agents: int = 200,
    weeks_train: int = 4,
    weeks_test: int = 2,
    seed: int = 0,
    week_anchor: int = DEFAULT_WEEK_ANCHOR,
    personalize: bool = True,
) -> tuple[MobilityDataset, MobilityDataset]:
    """Simulate ``n_agents`` agents; the first ``weeks_train`` weeks form the training split.

    Personas are assigned round-robin from a seeded offset.  Each agent draws
    its own traits and sampling stream from a child of ``SeedSequence(seed)``,
    so output depends only on the arguments.
    """
    if n_agents < 1 or weeks_train < 1 or weeks_test < 1:
        raise ValueError("n_agents and week counts must be >= 1")
    personas = tuple(personas)
    root = np.random.SeedSequence(seed)
    offset = int(np.random.default_rng(root).integers(len(personas)))
    children = root.spawn(n_agents)
    train_sp, test_sp = [], []
    for i in range(n_agents):
        rng = np.random.default_rng(children[i])
        traits = _agent_traits(personas[(i + offset) % len(personas)], rng, personalize)
        train_sp += _simulate_agent(i, traits, range(weeks_train), week_anchor, rng)
        test_sp += _simulate_agent(i, traits, range(weeks_train, weeks_train + weeks_test), week_anchor, rng)
    labels = {i: NORMAL for i in range(n_agents)}
    train = build_dataset(train_sp, SYNTH_VOCABULARY, "train", labels)
    test = build_dataset(test_sp, SYNTH_VOCABULARY, "test", labels)
    return train, test


def persona_assignment(n_agents: int, seed: int, personas: Sequence[PersonaTemplate] = DEFAULT_PERSONAS):
    offset = int(np.random.default_rng(np.random.SeedSequence(seed)).integers(len(personas)))
    return {i: personas[(i + offset) % len(personas)].name for i in range(n_agents)}


def inject_anomalies(test: MobilityDataset, spec: AnomalySpec, seed: int,
                     week_anchor: int = DEFAULT_WEEK_ANCHOR) -> MobilityDataset:
    """Return a copy of ``test`` with anomalies injected into a seeded agent subset.

    Added or modified staypoints are labelled anomalous; every selected agent is
    labelled anomalous even when its only change is a deletion.
    """
    ids = sorted(test.agents)
    n_sel = math.ceil(spec.fraction * len(ids) - 1e-12)
    labels = {aid: NORMAL for aid in ids}
    if n_sel == 0:
        warnings.warn("anomaly fraction selects no agents; dataset unchanged", stacklevel=2)
        return build_dataset(_relabel(test.staypoints(), NORMAL), test.poi_vocabulary, test.split_tag, labels)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    chosen = set(int(a) for a in rng.choice(np.array(ids), size=n_sel, replace=False))
    kinds = {"hunger", "social", "work"} if spec.kind == "combined" else {spec.kind}

    epochs = np.array([sp.arrival_epoch for sp in test.staypoints()])
    weeks = week_index(epochs, week_anchor)
    week_range = range(int(weeks.min()), int(weeks.max()) + 1)
    swap_to = [p for p in test.poi_vocabulary if p not in ("recreation", UNKNOWN)]

    out: list[Staypoint] = []
    for aid in ids:
        sps = list(_relabel(test.agents[aid].staypoints, NORMAL))
        if aid not in chosen:
            out += sps
            continue
        labels[aid] = ANOMALOUS
        if "work" in kinds:
            sps = [sp for sp in sps if sp.poi_type != "work"]
        if "social" in kinds:
            sps = [replace(sp, poi_type=swap_to[int(rng.integers(len(swap_to)))], label=ANOMALOUS)
                   if sp.poi_type == "recreation" else sp for sp in sps]
        if "hunger" in kinds:
            for w in week_range:
                for _ in range(spec.meals_per_week):
                    tow_s = rng.uniform(0.0, WEEK_SECONDS)
                    dur = _truncated_normal(rng, spec.meal_duration_s, spec.meal_duration_std_s, 600.0)
                    sps.append(Staypoint(aid, int(week_anchor + w * WEEK_SECONDS + round(tow_s)),
                                         float(round(dur)), "restaurant", None, ANOMALOUS))
        out += sps
    return build_dataset(out, test.poi_vocabulary, test.split_tag, labels)


def _relabel(staypoints, label):
    for sp in staypoints:
        yield sp if sp.label == label else replace(sp, label=label)
