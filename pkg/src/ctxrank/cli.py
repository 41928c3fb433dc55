"""Command line entry point.

    ctxrank [--config FILE] simulate
    ctxrank [--config FILE] train --mode baseline|contextual|both
    ctxrank [--config FILE] eval
    ctxrank [--config FILE] rerank-file --input REQ.jsonl --output RESP.jsonl
    ctxrank [--config FILE] serve

Any ``--section.key=value`` argument overrides the config file. Exit codes:
0 success, 2 configuration error, 3 data or I/O error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
from pathlib import Path

from .config import AppConfig, load_config
from .domain import SessionLog, load_corpus, load_log, load_users, save_corpus, save_log, save_users
from .errors import ArtifactIOError, ConfigError, CtxRankError, EmptyLog, InvalidConfig
from .model import load_model, save_model, train
from .pipeline import MODES, dump_json, evaluate_models, write_reports
from .service import RerankService
from .simgen import World, WorldConfig, generate_world, simulate_sessions

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3

log = logging.getLogger("ctxrank")


def _dir(cfg: AppConfig, name: str, create: bool) -> Path:
    root = Path(cfg.paths.workdir)
    if not root.is_dir():
        raise ArtifactIOError(f"working directory does not exist: {root}")
    path = cfg.paths.resolve(name)
    if create:
        try:
            path.mkdir(exist_ok=True)
        except OSError as exc:
            raise ArtifactIOError(f"cannot create {path}: {exc.strerror}") from exc
    elif not path.is_dir():
        raise ArtifactIOError(f"directory does not exist: {path}")
    return path


def _write_text(path: Path, text: str):
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc.strerror}") from exc


def _read_json(path: Path):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ArtifactIOError(f"cannot read {path}: {exc.strerror}") from exc


def day_file(day: int) -> str:
    return f"day_{day:03d}.jsonl"


def cmd_simulate(cfg: AppConfig, out=sys.stdout) -> int:
    world_dir = _dir(cfg, "world", create=True)
    logs_dir = _dir(cfg, "logs", create=True)
    world = generate_world(cfg.world)
    train_log = simulate_sessions(world, "train")
    heldout = simulate_sessions(world, "heldout")

    save_corpus(world_dir / "items.jsonl", world.items)
    save_users(world_dir / "users.jsonl", world.users)
    _write_text(world_dir / "world.json", dump_json(dataclasses.asdict(cfg.world)))
    days = train_log.days()
    for d in days:
        save_log(logs_dir / day_file(d), train_log.subset([d]))
    save_log(logs_dir / "heldout.jsonl", heldout)
    meta = dict(train_log.metadata)
    meta.pop("split", None)
    meta.pop("stream", None)
    meta["days"] = days
    meta["heldout_day"] = cfg.world.num_days
    _write_text(logs_dir / "meta.json", dump_json(meta))
    out.write(
        f"seed={cfg.world.seed} users={len(world.users)} items={len(world.items)} "
        f"days={len(days)} train_impressions={len(train_log)} "
        f"heldout_impressions={len(heldout)}\n"
    )
    return EXIT_OK


def _log_meta(cfg: AppConfig) -> dict:
    return _read_json(_dir(cfg, "logs", create=False) / "meta.json")


def load_train_log(cfg: AppConfig) -> SessionLog:
    logs_dir = _dir(cfg, "logs", create=False)
    meta = _log_meta(cfg)
    imps = []
    for d in meta.get("days", []):
        imps.extend(load_log(logs_dir / day_file(d)).impressions)
    if not imps:
        raise EmptyLog(f"no training impressions under {logs_dir}")
    return SessionLog(imps, meta)


def load_heldout_log(cfg: AppConfig) -> SessionLog:
    logs_dir = _dir(cfg, "logs", create=False)
    heldout = load_log(logs_dir / "heldout.jsonl", _log_meta(cfg))
    if len(heldout) == 0:
        raise EmptyLog(f"held-out log {logs_dir / 'heldout.jsonl'} is empty")
    return heldout


def load_world(cfg: AppConfig) -> World:
    world_dir = _dir(cfg, "world", create=False)
    wcfg = WorldConfig(**_read_json(world_dir / "world.json"))
    items = load_corpus(world_dir / "items.jsonl", wcfg.dim)
    users = load_users(world_dir / "users.jsonl", wcfg.dim)
    return World(wcfg, users, items)


def trajectory_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["day", "ne", "background_ctr", "count"])
    for r in rows:
        w.writerow([r.day, repr(r.ne), repr(r.background_ctr), r.count])
    return buf.getvalue()


def cmd_train(cfg: AppConfig, mode: str, out=sys.stdout) -> int:
    models_dir = _dir(cfg, "models", create=True)
    reports_dir = _dir(cfg, "reports", create=True)
    log_ = load_train_log(cfg)
    modes = MODES if mode == "both" else (mode,)
    for m in modes:
        result = train(log_, cfg.train, m)
        save_model(result.model, models_dir / f"{m}.json")
        _write_text(reports_dir / f"ne_{m}.csv", trajectory_csv(result.trajectory))
        last = f"{result.trajectory[-1].ne:.6f}" if result.trajectory else "n/a"
        out.write(f"mode={m} input_dim={result.model.input_dim} steps={result.steps} "
                  f"last_day_ne={last}\n")
    return EXIT_OK


def _read_trajectory(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with path.open(encoding="utf-8", newline="") as fh:
        return [
            {"day": int(r["day"]), "ne": float(r["ne"]),
             "background_ctr": float(r["background_ctr"]), "count": int(r["count"])}
            for r in csv.DictReader(fh)
        ]


def cmd_eval(cfg: AppConfig, out=sys.stdout) -> int:
    models_dir = _dir(cfg, "models", create=False)
    reports_dir = _dir(cfg, "reports", create=True)
    models = {m: load_model(models_dir / f"{m}.json")
              for m in MODES if (models_dir / f"{m}.json").exists()}
    if not models:
        raise ArtifactIOError(f"no model files found in {models_dir}")
    heldout = load_heldout_log(cfg)
    world = None
    if "contextual" in models and cfg.eval.compare_sessions > 0:
        world = load_world(cfg)
    trajectories = {m: _read_trajectory(reports_dir / f"ne_{m}.csv") for m in models}
    outputs = evaluate_models(world, heldout, models, cfg.eval, cfg.rerank,
                              cfg.service.objective_task, trajectories)
    write_reports(outputs, reports_dir, cfg.eval.figures, cfg.eval.min_bucket_count)
    for m, rep in outputs.ne.items():
        gain = "" if rep.improvement_pct is None else f" improvement_pct={rep.improvement_pct:.3f}"
        out.write(f"mode={m} heldout_ne={rep.ne:.6f}{gain}\n")
    return EXIT_OK


def _service(cfg: AppConfig, model_path: str | None) -> RerankService:
    path = Path(model_path) if model_path else cfg.paths.resolve("models") / "contextual.json"
    return RerankService(load_model(path), cfg.rerank, cfg.service.objective_task,
                         cfg.service.session_idle_limit)


def cmd_rerank_file(cfg: AppConfig, input_path: str, output_path: str,
                    model_path: str | None = None) -> int:
    svc = _service(cfg, model_path)
    try:
        with open(input_path, encoding="utf-8") as fin, \
                open(output_path, "w", encoding="utf-8", newline="\n") as fout:
            svc.serve(fin, fout)
    except OSError as exc:
        raise ArtifactIOError(f"{exc.filename}: {exc.strerror}") from exc
    return EXIT_OK


def cmd_serve(cfg: AppConfig, model_path: str | None = None,
              instream=sys.stdin, outstream=sys.stdout) -> int:
    svc = _service(cfg, model_path)
    svc.serve(instream, outstream)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctxrank", description="Contextual feed re-ranking experiments.")
    p.add_argument("--config", help="JSON config file (default: $CTXRANK_CONFIG)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", help="generate a world and logged sessions")
    t = sub.add_parser("train", help="train a scorer on the logged sessions")
    t.add_argument("--mode", choices=(*MODES, "both"), default="both")
    sub.add_parser("eval", help="calibration, NE and ranker comparison reports")
    r = sub.add_parser("rerank-file", help="answer a file of re-ranking requests")
    r.add_argument("--input", required=True)
    r.add_argument("--output", required=True)
    r.add_argument("--model")
    s = sub.add_parser("serve", help="answer re-ranking requests on stdin")
    s.add_argument("--model")
    return p


def main(argv=None, stdout=None, stdin=None) -> int:
    stdout = stdout or sys.stdout
    stdin = stdin or sys.stdin
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        bad = [e for e in extra if not (e.startswith("--") and "=" in e)]
        if bad:
            raise InvalidConfig(f"unrecognized arguments: {' '.join(bad)}")
        cfg = load_config(args.config, extra)
        if args.command == "simulate":
            return cmd_simulate(cfg, stdout)
        if args.command == "train":
            return cmd_train(cfg, args.mode, stdout)
        if args.command == "eval":
            return cmd_eval(cfg, stdout)
        if args.command == "rerank-file":
            return cmd_rerank_file(cfg, args.input, args.output, args.model)
        return cmd_serve(cfg, args.model, stdin, stdout)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CtxRankError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
