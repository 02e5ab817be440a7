"""Command-line entry point: ``bayesic <command> [--config PATH] [--set key=value] --out-dir DIR``."""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .dataset import (ANOMALOUS, NORMAL, DatasetError, MobilityDataset, load_agent_labels, load_poi_index,
                      load_staypoints, map_dataset_pois, save_agent_labels, save_staypoints)
from .evaluation import (aligned_agent_arrays, dump_json, evaluate, fit_visit_rates, fuse_scores,
                         staypoint_labels, visit_rate_score, write_report)
from .scoring import (agent_scores, read_agent_scores, read_scores, score_dataset, write_agent_scores,
                      write_scores)
from .synthgen import AnomalySpec, generate, inject_anomalies
from .training import TrainedPipeline, train, write_training_log

log = logging.getLogger("bayesic")

ABLATIONS = ("use_arrival", "use_poi", "use_duration", "use_embedding")


class CliError(RuntimeError):
    pass


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Collects inputs/outputs of one command and writes its manifest."""

    def __init__(self, command: str, cfg: RunConfig, out_dir: Path):
        self.command = command
        self.cfg = cfg
        self.out_dir = out_dir
        self.inputs: dict[str, str] = {}
        self.outputs: list[Path] = []
        self.extra: dict = {}
        self.t0 = time.perf_counter()

    def input(self, name: str, path: Optional[str]) -> Path:
        if not path:
            raise CliError(f"{self.command}: missing input '{name}' (pass --{name.replace('_', '-')} "
                           f"or set data.{name} in the config)")
        p = Path(path)
        if not p.exists():
            raise CliError(f"{self.command}: {name} file not found: {p}")
        self.inputs[name] = str(p)
        return p

    def output(self, name: str) -> Path:
        p = self.out_dir / name
        self.outputs.append(p)
        return p

    def manifest(self) -> Path:
        path = self.out_dir / f"manifest-{self.command}.json"
        body = {
            "command": self.command,
            "version": __version__,
            "seed": self.cfg.seed,
            "config": self.cfg.to_dict(),
            "config_hash": self.cfg.digest(),
            "inputs": {k: {"path": v, "sha256": sha256_file(v)} for k, v in sorted(self.inputs.items())},
            "outputs": {str(p): sha256_file(p) for p in self.outputs if p.exists()},
            "wall_clock_s": round(time.perf_counter() - self.t0, 3),
        }
        body.update(self.extra)
        path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
        return path


# ---------------------------------------------------------------------------
# helpers shared by commands
# ---------------------------------------------------------------------------


def _load_split(run: Run, name: str, path, split_tag: str, vocabulary=None) -> MobilityDataset:
    ds = load_staypoints(run.input(name, path), split_tag=split_tag, vocabulary=vocabulary)
    if run.cfg.data.poi_index:
        index = load_poi_index(run.input("poi_index", run.cfg.data.poi_index))
        ds = map_dataset_pois(ds, index, run.cfg.data.poi_radius_m)
    return ds


def _agent_labels(run: Run, path, test: MobilityDataset) -> dict[int, str]:
    if path:
        return load_agent_labels(run.input("agent_labels", path))
    log.warning("no agent label file; an agent counts as anomalous iff one of its staypoints is")
    return {aid: ANOMALOUS if any(sp.label == ANOMALOUS for sp in seq) else NORMAL
            for aid, seq in test.agents.items()}


def _metrics(records, a_scores, test, labels) -> dict:
    """Reports per level; a level whose labels hold a single class is skipped with a warning
    (work-only anomalies, for instance, leave no anomalous staypoint rows)."""
    a_s, a_y = aligned_agent_arrays(a_scores, {a: labels[a] for a in a_scores})
    levels = {"agent": (a_s, a_y),
              "staypoint": ([r.score for r in records], staypoint_labels(records, test))}
    out = {}
    for level, (s, y) in levels.items():
        if len(set(int(v) for v in y)) < 2:
            log.warning("%s level has a single label class; skipping its metrics", level)
            continue
        out[level] = evaluate(s, y, level)
    if not out:
        raise CliError("no level has both normal and anomalous labels")
    return out


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_generate(run: Run, args) -> None:
    g = run.cfg.generate
    train_set, test = generate(n_agents=g.n_agents, weeks_train=g.weeks_train, weeks_test=g.weeks_test,
                               seed=run.cfg.seed, week_anchor=run.cfg.training.week_anchor)
    spec = AnomalySpec(g.anomaly_kind, g.anomaly_fraction, g.meals_per_week)
    test = inject_anomalies(test, spec, run.cfg.seed, run.cfg.training.week_anchor)
    save_staypoints(train_set, run.output("train.csv"))
    save_staypoints(test, run.output("test.csv"))
    save_agent_labels(test.agent_labels, run.output("test_labels.csv"))
    run.extra["summary"] = {"train_staypoints": len(train_set), "test_staypoints": len(test),
                            "anomalous_agents": sum(v == ANOMALOUS for v in test.agent_labels.values())}


def cmd_train(run: Run, args) -> None:
    train_set = _load_split(run, "train", args.train or run.cfg.data.train, "train")
    records = []
    pipeline = train(train_set, run.cfg.training, run.cfg.model, on_record=records.append)
    ckpt = run.output("checkpoint.npz")
    pipeline.save(ckpt)
    run.outputs.append(ckpt.with_suffix(".json"))
    pipeline.stats.save(run.output("stats.json"))
    write_training_log(records, run.output("train_log.jsonl"))
    run.extra["checkpoint_digest"] = pipeline.digest()


def cmd_score(run: Run, args) -> None:
    pipeline = TrainedPipeline.load(run.input("checkpoint", args.checkpoint))
    run.inputs["checkpoint_sidecar"] = str(Path(args.checkpoint).with_suffix(".json"))
    test = _load_split(run, "test", args.test or run.cfg.data.test, "test", pipeline.stats.vocabulary)
    records = score_dataset(pipeline, test)
    write_scores(records, run.output("scores.csv"))
    write_agent_scores(agent_scores(records), run.output("agent_scores.csv"))


def cmd_evaluate(run: Run, args) -> None:
    records = read_scores(run.input("scores", args.scores))
    a_scores = read_agent_scores(run.input("agent_scores", args.agent_scores))
    test = _load_split(run, "test", args.test or run.cfg.data.test, "test")
    labels = _agent_labels(run, args.agent_labels or run.cfg.data.agent_labels, test)
    reports = _metrics(records, a_scores, test, labels)
    dump_json({k: r.to_json() for k, r in reports.items()}, run.output("metrics.json"))
    for level, rep in reports.items():
        run.outputs += write_report(rep, run.out_dir, level)


def cmd_fuse(run: Run, args) -> None:
    a_scores = read_agent_scores(run.input("agent_scores", args.agent_scores))
    train_set = _load_split(run, "train", args.train or run.cfg.data.train, "train")
    test = _load_split(run, "test", args.test or run.cfg.data.test, "test")
    labels = _agent_labels(run, args.agent_labels or run.cfg.data.agent_labels, test)
    profile = fit_visit_rates(train_set, test, run.cfg.training.week_anchor)
    visit = {a: visit_rate_score(profile, a) for a in a_scores}
    fused, meta = fuse_scores(a_scores, visit)
    write_agent_scores(fused, run.output("fused_agent_scores.csv"))
    out = {"fusion": meta}
    for name, scores in (("model", a_scores), ("visit_rate", visit), ("fused", fused)):
        s, y = aligned_agent_arrays(scores, {a: labels[a] for a in scores})
        out[name] = evaluate(s, y, "agent").to_json()
    dump_json(out, run.output("fused_metrics.json"))


def cmd_ablate(run: Run, args) -> None:
    train_set = _load_split(run, "train", args.train or run.cfg.data.train, "train")
    test = _load_split(run, "test", args.test or run.cfg.data.test, "test", train_set.poi_vocabulary)
    labels = _agent_labels(run, args.agent_labels or run.cfg.data.agent_labels, test)
    rows = []
    for switch in (None,) + ABLATIONS:
        tcfg = run.cfg.training if switch is None else replace(run.cfg.training, **{switch: False})
        pipeline = train(train_set, tcfg, run.cfg.model)
        records = score_dataset(pipeline, test)
        reports = _metrics(records, agent_scores(records), test, labels)
        rows.append({
            "configuration": "full" if switch is None else f"without_{switch[4:]}",
            **{f"{level}_{k}": reports[level].scalars()[k] if level in reports else None
               for level in ("agent", "staypoint") for k in ("aupr", "auroc", "max_f1")},
        })
        log.info("ablation %s: %s", rows[-1]["configuration"], rows[-1])
    path = run.output("ablation.csv")
    with path.open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    dump_json(rows, run.output("ablation.json"))


HANDLERS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "score": cmd_score,
    "evaluate": cmd_evaluate,
    "fuse": cmd_fuse,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config (default: $BAYESIC_CONFIG)")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. --set training.epochs=5")
    common.add_argument("--out-dir", required=True, help="directory for every artifact of this run")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="bayesic", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    sub.add_parser("generate", parents=[common], help="write a synthetic train/test dataset")
    p = sub.add_parser("train", parents=[common], help="train a pipeline checkpoint")
    p.add_argument("--train")
    p = sub.add_parser("score", parents=[common], help="score a test set with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test")
    p = sub.add_parser("evaluate", parents=[common], help="metrics at staypoint and agent level")
    p.add_argument("--scores", required=True)
    p.add_argument("--agent-scores", required=True)
    p.add_argument("--test")
    p.add_argument("--agent-labels")
    p = sub.add_parser("fuse", parents=[common], help="fuse agent scores with the visit-rate baseline")
    p.add_argument("--agent-scores", required=True)
    p.add_argument("--train")
    p.add_argument("--test")
    p.add_argument("--agent-labels")
    p = sub.add_parser("ablate", parents=[common], help="retrain with each component disabled")
    p.add_argument("--train")
    p.add_argument("--test")
    p.add_argument("--agent-labels")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config or os.environ.get("BAYESIC_CONFIG"), args.overrides)
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        run = Run(args.command, cfg, out_dir)
        HANDLERS[args.command](run, args)
        run.manifest()
    except (ConfigError, DatasetError, CliError, ValueError, KeyError, OSError) as exc:
        print(f"bayesic {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
