"""
Command-line workflow: synth, train, forecast, eval, noise, probe, steer.

Every command owns its run directory for its duration (lock file), writes the
resolved configuration, records its artifacts in the run manifest and prints a
one-line summary. Failures print one JSON line to stderr and exit with code 2.

Usage:
    python -m eidoslab.cli synth --kind sine --count 10 --length 512 --seed 7 --out runs/demo
    python -m eidoslab.cli train --out runs/demo --steps 2000
    python -m eidoslab.cli forecast --out runs/demo --horizon 128 --block 64
    python -m eidoslab.cli eval --out runs/demo
    python -m eidoslab.cli noise --out runs/demo --kind gaussian
    python -m eidoslab.cli probe --out runs/demo --kind trend
    python -m eidoslab.cli steer --out runs/demo --kind trend
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pandas as pd

from .checkpoint import load_checkpoint
from .config import CORPUS
from .datagen import synthesize
from .dataset_io import corpus_stats, load_records, write_jsonl
from .errors import EidosError, EmptyReportError, HashMismatchError, InputError
from .evaluate import build_eval_tasks, evaluate_model, noise_bench
from .export import export_eval_excel, write_eval_summary, write_eval_tasks, write_table
from .forecast import forecast
from .metrics import EvalReport, aggregate, compare_reports
from .manifest import load_manifest, record_artifacts, record_error, run_lock, save_manifest
from .model import EidosModel
from .paths import EVAL_TASKS_NAME, noise_path, output_paths_for_run, probe_path, steer_path
from .plots import plot_probe_curves, plot_steer_sweep
from .represent import alpha_sweep, extract_direction, make_probe_dataset, probe_sweep
from .run_config import RESOLVED_FILENAME, RunConfig, load_run_config
from .run_summary import RunMetrics, save_run_summary
from .trainer import train

log = logging.getLogger(__name__)

COMMANDS = ("synth", "train", "forecast", "eval", "noise", "probe", "steer")

# flag name -> dotted config key
FLAG_KEYS = {
    "seed": "seed",
    "out": "out",
    "kind": None,            # resolved per command
    "count": None,
    "length": "data.length",
    "steps": "train.total_steps",
    "horizon": "eval.horizon",
    "block": "eval.block",
    "levels": "noise.levels",
    "layer": "probe.layer",
    "alphas": "probe.alphas",
}
KIND_KEYS = {"synth": "data.kind", "eval": "eval.kind", "noise": "noise.kind",
             "probe": "probe.kind", "steer": "probe.kind"}
COUNT_KEYS = {"synth": "data.count", "eval": "eval.count", "probe": "probe.count", "steer": "probe.count"}


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'") from exc


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, help="JSON run configuration")
    common.add_argument("--seed", type=int, help="Global seed")
    common.add_argument("--out", type=str, help="Run directory")
    common.add_argument("--verbose", "-v", action="store_true", help="Verbose logging")

    parser = argparse.ArgumentParser(prog="eidoslab", description="Latent-predictive time-series forecasting")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="Generate a synthetic dataset")
    p.add_argument("--kind", type=str, help="sine, trend, sine+trend, noise, cauker or tsmixup")
    p.add_argument("--count", type=int, help="Number of series")
    p.add_argument("--length", type=int, help="Points per series")

    p = sub.add_parser("train", parents=[common], help="Train a model")
    p.add_argument("--steps", type=int, help="Total optimizer steps")
    p.add_argument("--dataset", type=str, help="JSONL dataset (default: <out>/dataset.jsonl if present)")
    p.add_argument("--resume", nargs="?", const="", default=None,
                   help="Resume from a checkpoint (default: <out>/checkpoint.eidos)")

    p = sub.add_parser("forecast", parents=[common], help="Forecast one series")
    p.add_argument("--checkpoint", type=str, help="Model checkpoint (default: <out>/checkpoint.eidos)")
    p.add_argument("--horizon", type=int, help="Forecast horizon H")
    p.add_argument("--block", type=int, help="Autoregressive block length")
    p.add_argument("--context-file", type=str, help="JSONL file; its first record is the context")
    p.add_argument("--series-id", type=str, help="Record id to forecast from --context-file")

    p = sub.add_parser("eval", parents=[common], help="Evaluate against seasonal naive")
    p.add_argument("--checkpoint", type=str)
    p.add_argument("--kind", type=str, help="Held-out generator kind")
    p.add_argument("--count", type=int, help="Number of held-out tasks")
    p.add_argument("--horizon", type=int)
    p.add_argument("--block", type=int)
    p.add_argument("--compare", nargs="+", metavar="RUN_DIR",
                   help="Other evaluated run directories to rank against this one")

    p = sub.add_parser("noise", parents=[common], help="Input-noise robustness sweep")
    p.add_argument("--checkpoint", type=str)
    p.add_argument("--kind", type=str, help="gaussian or impulse")
    p.add_argument("--levels", type=_float_list, help="Comma-separated levels (must include 0)")

    p = sub.add_parser("probe", parents=[common], help="Layer-wise LDR probing")
    p.add_argument("--checkpoint", type=str)
    p.add_argument("--kind", type=str, help="trend or periodicity")
    p.add_argument("--count", type=int, help="Series per class")

    p = sub.add_parser("steer", parents=[common], help="Latent steering sweep")
    p.add_argument("--checkpoint", type=str)
    p.add_argument("--kind", type=str, help="trend or periodicity")
    p.add_argument("--count", type=int, help="Series per class for the direction")
    p.add_argument("--layer", type=int, help="Target layer (default: last)")
    p.add_argument("--alphas", type=_float_list, help="Comma-separated injection ratios")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    out: dict = {}
    for flag, key in FLAG_KEYS.items():
        value = getattr(args, flag, None)
        if value is None:
            continue
        if flag == "kind":
            key = KIND_KEYS.get(args.command)
        elif flag == "count":
            key = COUNT_KEYS.get(args.command)
        if key:
            out[key] = value
    return out


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """defaults < --config file (or <out>/resolved_config.json) < flags."""
    path = args.config
    if path is None and args.out:
        previous = Path(args.out) / RESOLVED_FILENAME
        if previous.exists():
            log.info("Using %s as the base configuration", previous)
            path = previous
    return load_run_config(path, _overrides(args))


def _load_model(cfg: RunConfig, checkpoint: str | None) -> EidosModel:
    path = Path(checkpoint) if checkpoint else output_paths_for_run(cfg.out)["checkpoint"]
    ckpt = load_checkpoint(path)
    ckpt.check_model_hash(cfg.model_hash())
    log.info("Loaded %s (step %d, model %s)", path, ckpt.step, ckpt.model_hash)
    return ckpt.model()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_synth(cfg: RunConfig, args: argparse.Namespace, metrics: RunMetrics) -> list[Path]:
    d = cfg.data
    records = synthesize(d.kind, d.count, d.length, cfg.seed, {**CORPUS, "sigma": d.sigma},
                         d.tsmixup_k_max, d.tsmixup_alpha)
    path = output_paths_for_run(cfg.out)["dataset"]
    write_jsonl(path, records)
    metrics.series, metrics.points = corpus_stats(records)
    return [path]


def cmd_train(cfg: RunConfig, args: argparse.Namespace, metrics: RunMetrics) -> list[Path]:
    paths = output_paths_for_run(cfg.out)
    if args.dataset:
        cfg.data.sources = [{"path": args.dataset}]
    elif not cfg.data.sources and paths["dataset"].exists():
        log.info("Training on %s", paths["dataset"])
        cfg.data.sources = [{"path": str(paths["dataset"])}]
    resume = None
    if args.resume is not None:
        resume = Path(args.resume) if args.resume else paths["checkpoint"]
    result = train(cfg, cfg.out, resume_from=resume)
    metrics.steps = result.final_step
    return [result.checkpoint_path, result.log_path]


def _forecast_context(cfg: RunConfig, args: argparse.Namespace) -> tuple[str, np.ndarray]:
    if args.context_file:
        records = load_records(args.context_file)
        if args.series_id:
            match = [r for r in records if r.id == args.series_id]
            if not match:
                raise InputError(f"series '{args.series_id}' not found in {args.context_file}")
            return match[0].id, match[0].target
        if not records:
            raise InputError(f"{args.context_file} holds no records")
        return records[0].id, records[0].target
    task = build_eval_tasks(cfg.eval)[0]
    return task.task_id, task.context


def cmd_forecast(cfg: RunConfig, args: argparse.Namespace, metrics: RunMetrics) -> list[Path]:
    model = _load_model(cfg, args.checkpoint)
    series_id, context = _forecast_context(cfg, args)
    e = cfg.eval
    res = forecast(context, e.horizon, model, e.block, use_cache=e.use_cache, sort=e.sort_quantiles)
    path = output_paths_for_run(cfg.out)["forecast"]
    res.to_frame().to_csv(path, index=False)
    log.info("Forecast %s: %d steps in %d block(s), crossing rate %.3f",
             series_id, res.horizon, res.blocks, res.crossing_rate)
    metrics.series, metrics.points = 1, int(context.size)
    metrics.add_count("blocks", res.blocks)
    return [path]


def _write_comparison(cfg: RunConfig, report: EvalReport, others: Sequence[str]) -> Path:
    """Rank this run against previously evaluated runs on the tasks they share."""
    reports = {str(cfg.out): report}
    for other in others:
        rows = pd.read_csv(Path(other) / EVAL_TASKS_NAME, dtype={"task_id": str})
        reports[str(other)] = aggregate(rows)
    tables = {}
    for metric in report.aggregates:
        try:
            tables[metric] = compare_reports(reports, metric)
        except EmptyReportError as exc:
            log.warning("No shared valid tasks for %s: %s", metric, exc)
    if not tables:
        raise EmptyReportError("no metric has tasks shared by every compared run")
    table = pd.concat(tables, names=["metric", "run"]).reset_index()
    for metric, sub in table.groupby("metric", sort=False):
        ranks = ", ".join(f"{r} {v:.2f}" for r, v in zip(sub["run"], sub["avg_rank"]))
        print(f"  {metric} average rank: {ranks}")
    return write_table(table, output_paths_for_run(cfg.out)["eval_compare"])


def cmd_eval(cfg: RunConfig, args: argparse.Namespace, metrics: RunMetrics) -> list[Path]:
    model = _load_model(cfg, args.checkpoint)
    tasks = build_eval_tasks(cfg.eval)
    report = evaluate_model(model, tasks, cfg.eval,
                            metadata={"seed": cfg.seed, "noise": "none", "kind": cfg.eval.kind})
    paths = output_paths_for_run(cfg.out)
    artifacts = [write_eval_tasks(report, paths["eval_tasks"]),
                 write_eval_summary(report, paths["eval_summary"], cfg.config_hash())]
    if cfg.eval.excel:
        artifacts.append(export_eval_excel(report, paths["eval_excel"], {"config_hash": cfg.config_hash()}))
    metrics.tasks = len(tasks)
    metrics.excluded = max(report.excluded.values(), default=0)
    for k, v in report.aggregates.items():
        print(f"  {k} ratio vs seasonal naive: {v:.4f}")
    if getattr(args, "compare", None):
        artifacts.append(_write_comparison(cfg, report, args.compare))
    return artifacts


def cmd_noise(cfg: RunConfig, args: argparse.Namespace, metrics: RunMetrics) -> list[Path]:
    model = _load_model(cfg, args.checkpoint)
    tasks = build_eval_tasks(cfg.eval)
    n = cfg.noise
    table = noise_bench(model, tasks, n.kind, n.resolved_levels(), n.seed, cfg.eval)
    path = write_table(table, noise_path(cfg.out, n.kind))
    metrics.tasks = len(tasks)
    metrics.excluded = int(table["excluded"].max())
    metrics.add_count("levels", len(table))
    return [path]


def cmd_probe(cfg: RunConfig, args: argparse.Namespace, metrics: RunMetrics) -> list[Path]:
    model = _load_model(cfg, args.checkpoint)
    p = cfg.probe
    dataset = make_probe_dataset(p.kind, p.count, p.length, p.sigma, p.seed,
                                 p.slope_range, p.freq_range, purpose="probe")
    # same init seed as training: the model before any update
    control = EidosModel.init(model.cfg, cfg.seed)
    df = probe_sweep(model, dataset, control, batch=p.batch)
    csv_path = write_table(df, probe_path(cfg.out, p.kind, "csv"))
    svg_path = plot_probe_curves(df, probe_path(cfg.out, p.kind, "svg"), f"{p.kind} probe")
    metrics.series = 2 * dataset.count
    metrics.points = metrics.series * dataset.length
    metrics.add_count("layers", len(df))
    return [csv_path, svg_path]


def cmd_steer(cfg: RunConfig, args: argparse.Namespace, metrics: RunMetrics) -> list[Path]:
    model = _load_model(cfg, args.checkpoint)
    p = cfg.probe
    layer = model.cfg.backbone.n_layers if p.layer is None else p.layer
    dataset = make_probe_dataset(p.kind, p.count, p.length, p.sigma, p.seed,
                                 p.slope_range, p.freq_range, purpose="steer")
    direction = extract_direction(model, dataset, layer, p.batch)
    held_out = make_probe_dataset(p.kind, min(8, p.count), p.context_length, p.sigma, p.seed + 1,
                                  p.slope_range, p.freq_range, purpose="steer")
    alphas = sorted(set(p.sweep_alphas) | set(p.alphas))
    trace, rho = alpha_sweep(model, held_out.class0, p.horizon, direction, alphas, p.kind,
                             positions=p.positions)
    trace["layer"] = layer
    trace["energy"] = direction.energy
    csv_path = write_table(trace, steer_path(cfg.out, p.kind, "csv"))
    svg_path = plot_steer_sweep(trace, steer_path(cfg.out, p.kind, "svg"),
                                f"{p.kind} steering, layer {layer} (rho={rho:.2f})")
    print(f"  Spearman rho (response vs alpha): {rho:.3f}")
    metrics.series = len(held_out.class0)
    metrics.add_count("alphas", len(alphas))
    return [csv_path, svg_path]


HANDLERS: dict[str, Callable[[RunConfig, argparse.Namespace, RunMetrics], list[Path]]] = {
    "synth": cmd_synth, "train": cmd_train, "forecast": cmd_forecast, "eval": cmd_eval,
    "noise": cmd_noise, "probe": cmd_probe, "steer": cmd_steer,
}


def run_command(command: str, cfg: RunConfig, args: argparse.Namespace) -> RunMetrics:
    """Run one command under the run-directory lock and record its outputs."""
    run_dir = Path(cfg.out)
    metrics = RunMetrics(command=command, config_hash=cfg.config_hash())
    metrics.start()
    with run_lock(run_dir, command):
        manifest = load_manifest(run_dir)
        try:
            artifacts = HANDLERS[command](cfg, args, metrics)
        except Exception as exc:
            record_error(manifest, command, f"{type(exc).__name__}: {exc}")
            save_manifest(run_dir, manifest)
            raise
        artifacts.append(cfg.save(run_dir))
        record_artifacts(manifest, command, artifacts, cfg.config_hash(), cfg.model_hash())
        save_manifest(run_dir, manifest)
        metrics.artifacts = len(artifacts)
        metrics.finish()
        save_run_summary(run_dir, metrics)
    print(metrics.summary_line())
    return metrics


def _error_line(exc: BaseException) -> str:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, HashMismatchError):
        payload.update({"checkpoint_hash": exc.expected, "config_hash": exc.actual})
    return json.dumps(payload)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    level = logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(name)-20s %(levelname)-5s %(message)s",
        datefmt="%H:%M:%S",
    )
    try:
        cfg = resolve_config(args)
        run_command(args.command, cfg, args)
    except (EidosError, FileNotFoundError, OSError) as exc:
        print(_error_line(exc), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
