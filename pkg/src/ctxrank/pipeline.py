"""End-to-end experiment: simulate, train both feature modes, evaluate, report.

Every stage is a function of its inputs and the seeds in the config, so two
runs with the same config produce byte-identical files.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .compare import compare_rankers, contextual_ranker, format_table, mmr_ranker, pointwise_ranker
from .config import AppConfig, EvalConfig
from .domain import SessionLog
from .errors import ArtifactIOError
from .evaluation import CalibrationReport, NEReport, calibration_by_bucket, default_bucket_edges, ne_report
from .model import FEATURE_MODES, ScorerModel, TrainConfig, TrainResult, train
from .reranker import RerankParams
from .simgen import World, WorldConfig, generate_world, sample_feeds, simulate_sessions

MODES = ("baseline", "contextual")


@dataclass
class EvalOutputs:
    calibration: dict = field(default_factory=dict)  # mode -> CalibrationReport
    ne: dict = field(default_factory=dict)  # mode -> NEReport
    comparison: dict | None = None


def simulate(cfg: WorldConfig) -> tuple[World, SessionLog, SessionLog]:
    world = generate_world(cfg)
    return world, simulate_sessions(world, "train"), simulate_sessions(world, "heldout")


def train_models(log: SessionLog, cfg: TrainConfig, modes=MODES) -> dict:
    return {m: train(log, cfg, m) for m in modes}


def trajectory_rows(result_or_rows) -> list[dict]:
    rows = result_or_rows.trajectory if isinstance(result_or_rows, TrainResult) else result_or_rows
    return [dataclasses.asdict(r) if dataclasses.is_dataclass(r) else dict(r) for r in rows]


def evaluate_models(
    world: World | None,
    heldout: SessionLog,
    models: dict,
    eval_cfg: EvalConfig = EvalConfig(),
    rerank: RerankParams = RerankParams(),
    objective_task: int = 0,
    trajectories: dict | None = None,
) -> EvalOutputs:
    """Calibration by similarity bucket and NE on the held-out log for each
    model; ranker comparison on fresh feeds when a world and a contextual
    model are available."""
    trajectories = trajectories or {}
    edges = default_bucket_edges(eval_cfg.n_buckets)
    out = EvalOutputs()
    order = [m for m in MODES if m in models]
    for mode in order:
        model: ScorerModel = models[mode]
        X, Y, sim, _ = heldout.matrices(mode)
        p = model.predict(X)[:, objective_task]
        y = Y[:, objective_task]
        out.calibration[mode] = calibration_by_bucket(p, y, sim, edges)
        base = out.ne.get("baseline") if mode != "baseline" else None
        out.ne[mode] = ne_report(mode, p, y, trajectory_rows(trajectories.get(mode, ())), base)

    if world is not None and "contextual" in models and eval_cfg.compare_sessions > 0:
        feeds = sample_feeds(world, eval_cfg.compare_sessions)
        rankers = {
            "pointwise": pointwise_ranker(),
            "mmr": mmr_ranker(eval_cfg.mmr_lambda, rerank.context_depth),
            "contextual": contextual_ranker(
                models["contextual"], rerank, world.cfg.feature_config(), objective_task
            ),
        }
        out.comparison = compare_rankers(world, feeds, rankers, "pointwise", objective_task)
    return out


def ne_progression(baseline: list, contextual: list) -> tuple[list, list]:
    """Per-day percent NE improvement of contextual over baseline."""
    b = {r["day"]: r["ne"] for r in baseline}
    days, pct = [], []
    for r in contextual:
        if r["day"] in b:
            days.append(r["day"])
            pct.append(100.0 * (b[r["day"]] - r["ne"]) / b[r["day"]])
    return days, pct


def _write(path: Path, text: str):
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc.strerror}") from exc


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_reports(outputs: EvalOutputs, reports_dir, figures: bool = True,
                  min_bucket_count: int = 500) -> list[Path]:
    """Write JSON/CSV/text reports (and PNG figures) into ``reports_dir``."""
    reports_dir = Path(reports_dir)
    if not reports_dir.is_dir():
        raise ArtifactIOError(f"reports directory does not exist: {reports_dir}")
    written = []
    for mode, rep in outputs.calibration.items():
        written.append(reports_dir / f"calibration_{mode}.json")
        _write(written[-1], dump_json(rep.to_dict()))
        written.append(reports_dir / f"calibration_{mode}.csv")
        _write(written[-1], rep.to_csv())
    written.append(reports_dir / "ne.json")
    _write(written[-1], dump_json({m: r.to_dict() for m, r in outputs.ne.items()}))
    if outputs.comparison is not None:
        written.append(reports_dir / "comparison.json")
        _write(written[-1], dump_json(outputs.comparison))
        written.append(reports_dir / "comparison.txt")
        _write(written[-1], format_table(outputs.comparison))

    if figures:
        from . import plotting

        if outputs.calibration:
            written.append(reports_dir / "calibration.png")
            plotting.plot_calibration(outputs.calibration, written[-1], min_bucket_count)
        if "baseline" in outputs.ne and "contextual" in outputs.ne:
            days, pct = ne_progression(outputs.ne["baseline"].trajectory,
                                       outputs.ne["contextual"].trajectory)
            if days:
                written.append(reports_dir / "ne_progression.png")
                plotting.plot_ne_progression(days, pct, written[-1])
        if outputs.comparison is not None:
            written.append(reports_dir / "ranker_comparison.png")
            plotting.plot_ranker_comparison(outputs.comparison, written[-1])
    return written


@dataclass
class ExperimentResult:
    world: World
    train_log: SessionLog
    heldout_log: SessionLog
    training: dict  # mode -> TrainResult
    outputs: EvalOutputs

    def ne_gain_pct(self) -> float:
        return self.outputs.ne["contextual"].improvement_pct

    def calibration_gap(self, min_count: int = 500) -> float:
        """Baseline calibration in the top populated bucket over the bottom one, minus 1."""
        rep: CalibrationReport = self.outputs.calibration["baseline"]
        idx = rep.populated(min_count)
        return rep.calibration[idx[-1]] / rep.calibration[idx[0]] - 1.0

    def contextual_bucket_range(self, min_count: int = 500) -> tuple[float, float]:
        rep: CalibrationReport = self.outputs.calibration["contextual"]
        cal = [rep.calibration[i] for i in rep.populated(min_count)]
        return min(cal), max(cal)


def run_experiment(cfg: AppConfig = AppConfig()) -> ExperimentResult:
    world, train_log, heldout = simulate(cfg.world)
    training = train_models(train_log, cfg.train)
    outputs = evaluate_models(
        world, heldout, {m: r.model for m, r in training.items()}, cfg.eval, cfg.rerank,
        cfg.train.objective_task, {m: r.trajectory for m, r in training.items()},
    )
    return ExperimentResult(world, train_log, heldout, training, outputs)


__all__ = [
    "EvalOutputs", "ExperimentResult", "FEATURE_MODES", "MODES", "NEReport",
    "evaluate_models", "ne_progression", "run_experiment", "simulate", "train_models",
    "trajectory_rows", "write_reports",
]
