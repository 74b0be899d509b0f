"""Command-line pipeline: ``gazefeedback <command> [--config PATH] [flags]``.

Commands read their inputs from the config's paths (defaulting to the files
``synth`` writes under ``<out>/study``) and write CSV/markdown artifacts plus
a manifest to ``<out>``. The master seed drives the synthetic study, the
validation split and every per-model seed.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from . import __version__
from .aoi import (
    AoiDwell, aggregate_dwell, all_user_stats, load_layouts, read_dwells, read_stats, write_dwells,
    write_stats,
)
from .errors import GazeFeedbackError
from .experiment import StudyData, metrics_markdown, run_experiment
from .feedback import (
    ALL_METHODS, FeedbackMethod, InclusionReport, assemble_training, inclusion_analysis, load_events,
    load_ratings, prepare_background, read_inclusion_csv,
)
from .gaze import FixationParams, detect_fixations, parse_gaze_log, read_fixations, split_by_screen, write_fixations
from .mf import SplitSpec, TrainConfig, default_grid, run_grid_search
from .ranking import RECALL_KS, compute_report, read_ranks, write_ranks
from .synth import SynthConfig, generate_study, write_study

log = logging.getLogger("gazefeedback")

COMMANDS = ("synth", "fixations", "aoi-stats", "assemble", "grid-search", "experiment", "inclusion", "report")


class MissingArtifact(GazeFeedbackError):
    def __init__(self, path: Path, producer: str):
        super().__init__(f"missing upstream artifact {path} (run `{producer}` first)")


@dataclass
class PipelineConfig:
    out: str = "run"
    seed: int = 0
    jobs: int = 1
    methods: list[str] = field(default_factory=lambda: [m.name for m in ALL_METHODS])
    paths: dict[str, str] = field(default_factory=dict)
    fixation: FixationParams = field(default_factory=FixationParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    grid: list[TrainConfig] | None = None
    split: SplitSpec = field(default_factory=SplitSpec)
    synth: SynthConfig = field(default_factory=SynthConfig)

    @classmethod
    def from_dict(cls, d: dict) -> PipelineConfig:
        cfg = cls()
        for key in ("out", "seed", "jobs", "methods"):
            if key in d:
                setattr(cfg, key, d[key])
        cfg.paths = dict(d.get("paths", {}))
        unknown = set(cfg.paths) - {"gaze", "layouts", "events", "ratings"}
        if unknown:
            raise ValueError(f"unknown paths in config: {sorted(unknown)}")
        cfg.fixation = FixationParams(**d.get("fixation", {}))
        cfg.train = TrainConfig.from_dict(d.get("train", {}))
        if d.get("grid") is not None:
            cfg.grid = [TrainConfig.from_dict(g) for g in d["grid"]]
        cfg.split = SplitSpec(**d.get("split", {}))
        cfg.synth = SynthConfig.from_dict(d.get("synth", {}))
        return cfg

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def path(self, name: str) -> Path:
        defaults = {
            "gaze": "study/gaze", "layouts": "study/layouts.json",
            "events": "study/events.csv", "ratings": "study/ratings.csv",
        }
        if name in self.paths:
            return Path(self.paths[name])
        return self.out_dir / defaults[name]

    def feedback_methods(self) -> list[FeedbackMethod]:
        return [FeedbackMethod.from_name(n) for n in self.methods]

    def effective(self) -> dict:
        """The config as echoed into manifests; run-location and worker count excluded."""
        d = {
            "seed": self.seed,
            "methods": list(self.methods),
            "paths": {k: self._rel(self.path(k)) for k in ("gaze", "layouts", "events", "ratings")},
            "fixation": asdict(self.fixation),
            "train": asdict(self.train),
            "grid": [asdict(g) for g in self.grid] if self.grid is not None else None,
            "split": asdict(self.split),
            "synth": asdict(self.synth),
        }
        return d

    def _rel(self, p: Path) -> str:
        try:
            return Path(os.path.relpath(p, self.out_dir)).as_posix()
        except ValueError:
            return p.as_posix()


# --- helpers -------------------------------------------------------------------

def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise MissingArtifact(path, producer)
    return path


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    if path.is_dir():
        for f in sorted(path.rglob("*")):
            if f.is_file():
                h.update(f.relative_to(path).as_posix().encode())
                h.update(f.read_bytes())
    else:
        h.update(path.read_bytes())
    return h.hexdigest()


def _write_manifest(cfg: PipelineConfig, command: str, inputs: list[Path], outputs: list[Path]) -> Path:
    doc = {
        "command": command,
        "version": __version__,
        "seed": cfg.seed,
        "config": cfg.effective(),
        "inputs": {cfg._rel(p): _sha256(p) for p in inputs},
        "outputs": {cfg._rel(p): _sha256(p) for p in outputs},
    }
    path = cfg.out_dir / "manifests" / f"{command}.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _open_w(path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", newline="", encoding="utf-8")


def _load_events(cfg: PipelineConfig):
    path = _require(cfg.path("events"), "synth")
    events, errors = load_events(path)
    for e in errors:
        log.warning("%s: %s", path, e)
    return events


def _load_background(cfg: PipelineConfig, events):
    path = _require(cfg.path("ratings"), "synth")
    ratings, errors = load_ratings(path)
    for e in errors:
        log.warning("%s: %s", path, e)
    return prepare_background(ratings, {m for e in events for m in e.presented})


def _detect_all_fixations(cfg: PipelineConfig) -> list:
    gaze_path = _require(cfg.path("gaze"), "synth")
    files = _gaze_files(gaze_path)
    fixes = []
    for f in files:
        samples, errors = parse_gaze_log(f)
        for e in errors:
            log.warning("%s: %s", f, e)
        for ss in split_by_screen(samples).values():
            fixes.extend(detect_fixations(ss, cfg.fixation))
    log.info("%d fixations from %d gaze files", len(fixes), len(files))
    return fixes


def _dwells_from_fixations(cfg: PipelineConfig, fixations: dict, events) -> list[AoiDwell]:
    layouts_path = _require(cfg.path("layouts"), "synth")
    layouts = load_layouts(layouts_path)
    dwells = []
    for e in events:
        if e.screen_id not in layouts:
            raise GazeFeedbackError(f"screen {e.screen_id} has no layout in {layouts_path}")
        dwells.append(aggregate_dwell(fixations.get(e.screen_id, []), layouts[e.screen_id], e.user_id))
    return dwells


def _load_study(cfg: PipelineConfig) -> tuple[StudyData, list[Path]]:
    """Study events with dwell and stats, plus the files they were read from.

    Without ``aoi-stats`` outputs the dwell is recomputed in memory from the
    gaze logs, so ``synth`` can be followed directly by ``experiment``.
    """
    events = _load_events(cfg)
    dwell_path, stats_path = cfg.out_dir / "dwell.csv", cfg.out_dir / "aoi_stats.csv"
    if dwell_path.exists() and stats_path.exists():
        dwells = read_dwells(dwell_path)
        return StudyData(events, dwells, read_stats(stats_path)), [cfg.path("events"), dwell_path, stats_path]
    log.info("no %s; deriving dwell from the gaze logs", dwell_path)
    fixations: dict = {}
    for f in _detect_all_fixations(cfg):
        fixations.setdefault(f.screen_id, []).append(f)
    dwells = _dwells_from_fixations(cfg, fixations, events)
    study = StudyData(events, {d.screen_id: d for d in dwells}, all_user_stats(dwells))
    return study, [cfg.path("events"), cfg.path("gaze"), cfg.path("layouts")]


def _gaze_files(path: Path) -> list[Path]:
    return sorted(path.glob("*.csv")) if path.is_dir() else [path]


# --- commands --------------------------------------------------------------------

def cmd_synth(cfg: PipelineConfig) -> tuple[list[Path], list[Path]]:
    synth_cfg = replace(cfg.synth, seed=cfg.seed)
    study = generate_study(synth_cfg)
    paths = write_study(study, cfg.out_dir / "study")
    log.info("synthetic study: %d users, %d screens, %d background ratings",
             synth_cfg.n_users, len(study.events), len(study.ratings))
    return [], list(paths.values())


def cmd_fixations(cfg: PipelineConfig):
    fixes = _detect_all_fixations(cfg)
    out = cfg.out_dir / "fixations.csv"
    with _open_w(out) as fh:
        write_fixations(fixes, fh)
    return [cfg.path("gaze")], [out]


def cmd_aoi_stats(cfg: PipelineConfig):
    fix_path = _require(cfg.out_dir / "fixations.csv", "fixations")
    events = _load_events(cfg)
    dwells = _dwells_from_fixations(cfg, read_fixations(fix_path), events)
    stats = all_user_stats(dwells)
    dwell_out, stats_out = cfg.out_dir / "dwell.csv", cfg.out_dir / "aoi_stats.csv"
    with _open_w(dwell_out) as fh:
        write_dwells(dwells, fh)
    with _open_w(stats_out) as fh:
        write_stats(stats.values(), fh)
    return [fix_path, cfg.path("layouts"), cfg.path("events")], [dwell_out, stats_out]


def cmd_assemble(cfg: PipelineConfig):
    study, inputs = _load_study(cfg)
    background = _load_background(cfg, study.events)
    outs = [cfg.out_dir / "interactions" / "background.csv"]
    with _open_w(outs[0]) as fh:
        background.write_csv(fh)
    for method in cfg.feedback_methods():
        train = assemble_training(method, study.events, study.dwells, study.stats, background, None)
        path = cfg.out_dir / "interactions" / f"{method.name}.csv"
        with _open_w(path) as fh:
            train.write_csv(fh)
        outs.append(path)
        log.info("%s: %d pairs (%d from the study)", method.name, len(train), len(train) - len(background))
    return inputs + [cfg.path("ratings")], outs


def cmd_grid_search(cfg: PipelineConfig):
    events = _load_events(cfg)
    background = _load_background(cfg, events)
    grid = cfg.grid if cfg.grid is not None else default_grid(cfg.train.epochs, cfg.train.neg_ratio, cfg.train.seed)
    result = run_grid_search(grid, background, replace(cfg.split, seed=cfg.seed))
    out = cfg.out_dir / "best_config.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    log.info("best config %s", result.best)
    return [cfg.path("events"), cfg.path("ratings")], [out]


def cmd_experiment(cfg: PipelineConfig):
    study, inputs = _load_study(cfg)
    background = _load_background(cfg, study.events)
    inputs.append(cfg.path("ratings"))
    train_cfg = cfg.train
    best = cfg.out_dir / "best_config.json"
    if best.exists():
        train_cfg = TrainConfig.from_dict(json.loads(best.read_text())["best"])
        inputs.append(best)
    t0 = time.perf_counter()
    result = run_experiment(cfg.feedback_methods(), study, background, train_cfg, cfg.seed, cfg.jobs)
    log.info("experiment finished in %.1f s", time.perf_counter() - t0)
    ranks, metrics, md = cfg.out_dir / "ranks.csv", cfg.out_dir / "metrics.csv", cfg.out_dir / "metrics.md"
    with _open_w(ranks) as fh:
        write_ranks(result.rank_rows(), fh)
    with _open_w(metrics) as fh:
        result.write_metrics_csv(fh)
    with open(metrics, newline="", encoding="utf-8") as fh:
        md.write_text(metrics_markdown(list(csv.DictReader(fh))), encoding="utf-8")
    for name, n in result.models.items():
        log.info("%s: %d models, %d excluded screens, %d leakage violations",
                 name, n, result.excluded_screens[name], result.leakage[name])
    return inputs, [ranks, metrics, md]


def cmd_inclusion(cfg: PipelineConfig):
    study, inputs = _load_study(cfg)
    report = inclusion_analysis(study.events, study.dwells, study.stats)
    csv_out, md_out = cfg.out_dir / "inclusion.csv", cfg.out_dir / "inclusion.md"
    with _open_w(csv_out) as fh:
        report.write_csv(fh)
    md_out.write_text(report.to_markdown(), encoding="utf-8")
    return inputs, [csv_out, md_out]


def cmd_report(cfg: PipelineConfig):
    ranks_path = _require(cfg.out_dir / "ranks.csv", "experiment")
    by_method = read_ranks(ranks_path)
    labels = {m.name: m.label for m in ALL_METHODS}
    rows = []
    for name in [m.name for m in ALL_METHODS if m.name in by_method]:
        rep = compute_report(by_method[name])
        row = {"label": labels[name], "mean_rank": rep.mean_rank, "rank_std": rep.rank_std,
               "n_screens": rep.n_screens, "n_models": len({(r.user_id, r.modality) for r in by_method[name]})}
        for k in RECALL_KS:
            row[f"recall@{k}"] = rep.recall[k]
            row[f"recall@{k}_std"] = rep.recall_std[k]
        rows.append(row)
    parts = ["# Ranking of the selected movie on held-out screens", "", metrics_markdown(rows)]
    parts.append("Recall in percent; Std is the per-screen sample standard deviation of the hit "
                 "indicator (fractions) and of the rank.\n")
    inputs = [ranks_path]
    inclusion_path = cfg.out_dir / "inclusion.csv"
    if inclusion_path.exists():
        percent = read_inclusion_csv(inclusion_path)
        md = InclusionReport(percent, {c: 0 for c in ("selected", "detailed", "seen", "all")}).to_markdown()
        parts += ["# Inclusion of movies by dwell filter", "", md.split("\n\nScreens per category")[0] + "\n"]
        inputs.append(inclusion_path)
    out = cfg.out_dir / "report.md"
    out.write_text("\n".join(parts), encoding="utf-8")
    return inputs, [out]


HANDLERS = {
    "synth": cmd_synth, "fixations": cmd_fixations, "aoi-stats": cmd_aoi_stats, "assemble": cmd_assemble,
    "grid-search": cmd_grid_search, "experiment": cmd_experiment, "inclusion": cmd_inclusion,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON pipeline config")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--methods", help="comma-separated feedback methods")
    common.add_argument("--jobs", type=int, help="worker processes (default: $GF_JOBS or 1)")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="gazefeedback", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=HANDLERS[name].__name__.replace("cmd_", ""))
    return parser


def load_config(args: argparse.Namespace) -> PipelineConfig:
    doc = {}
    if args.config is not None:
        doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
    cfg = PipelineConfig.from_dict(doc)
    if "jobs" not in doc and os.environ.get("GF_JOBS"):
        cfg.jobs = int(os.environ["GF_JOBS"])
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if args.methods is not None:
        cfg.methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if args.jobs is not None:
        cfg.jobs = args.jobs
    cfg.feedback_methods()  # validate names early
    if cfg.jobs < 1:
        raise ValueError("jobs must be >= 1")
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args)
        inputs, outputs = HANDLERS[args.command](cfg)
        manifest = _write_manifest(cfg, args.command, inputs, outputs)
    except (GazeFeedbackError, ValueError, KeyError, OSError) as exc:
        print(f"gazefeedback {args.command}: error: {exc}", file=sys.stderr)
        return 1
    for p in outputs + [manifest]:
        print(p)
    return 0


if __name__ == "__main__":
    sys.exit(main())
