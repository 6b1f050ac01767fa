"""Command line front end: train, eval, encode, and sweep.

One flat key = value config file drives a run; every key is namespaced
(data.*, model.*, train.*, eval.*, sweep.*) and validated against the
schema below.  Paths inside a config resolve relative to the config
file, paths inside a manifest relative to the manifest.  All randomness
flows from train.seed.  Exit codes: 0 success, 1 usage error, 2 data
error, 3 numerical failure.
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
from concurrent.futures import ProcessPoolExecutor, as_completed
from itertools import product
from pathlib import Path

import numpy as np

from .dataio import (
    load_manifest,
    load_matrix,
    load_model,
    read_kv_file,
    save_model,
    split_dataset,
)
from .encoder import encode, save_codes, training_disagreement
from .errors import DataError, NumericalError, UchError, UsageError
from .evaluate import TASKS, evaluate_task
from .trainer import TrainConfig, build_graph, train

log = logging.getLogger(__name__)

# key -> (type, default); None default means the key is required
CONFIG_SCHEMA = {
    "data.manifest": (str, None),
    "model.variant": (str, "lle"),
    "model.bits": (int, 64),
    "model.gamma": (float, 2.0),
    "train.lambda1": (float, 1.0),
    "train.lambda2": (float, 1.0),
    "train.rho": (float, 1.0),
    "train.mu": (float, 0.5),
    "train.fit_target": (str, "relaxed"),
    "train.neighbors": (int, 50),
    "train.anchors": (int, 100),
    "train.s_nearest": (int, 5),
    "train.delta": (float, 0.0),
    "train.ridge": (float, 1e-3),
    "train.anchor_method": (str, "kmeans"),
    "train.max_iters": (int, 50),
    "train.tol": (float, 1e-5),
    "train.seed": (int, 0),
    "out.dir": (str, "runs"),
    "eval.tasks": (str, "i2t,t2i"),
    "eval.r_cutoff": (int, 0),
    "eval.db": (str, "train"),
    "sweep.lambda1": (str, ""),
    "sweep.lambda2": (str, ""),
    "sweep.rho": (str, ""),
    "sweep.neighbors": (str, ""),
    "sweep.anchors": (str, ""),
    "sweep.bits": (str, ""),
    "sweep.workers": (int, 1),
}

SWEEP_KEY_COLS = ["variant", "bits", "lambda1", "lambda2", "rho", "graph_size"]
SWEEP_COLS = SWEEP_KEY_COLS + ["map_i2t", "map_t2i", "map_avg"]


def load_config(path) -> dict:
    """Read a config file, apply defaults, and reject unknown keys."""
    raw = read_kv_file(path)
    unknown = sorted(set(raw) - set(CONFIG_SCHEMA))
    if unknown:
        raise UsageError(
            f"unknown config keys: {', '.join(unknown)}; "
            f"valid keys: {', '.join(sorted(CONFIG_SCHEMA))}"
        )
    cfg = {}
    for key, (typ, default) in CONFIG_SCHEMA.items():
        if key in raw:
            try:
                cfg[key] = typ(raw[key])
            except ValueError:
                raise UsageError(
                    f"config key {key} expects {typ.__name__}, got {raw[key]!r}"
                ) from None
        else:
            cfg[key] = default
    if cfg["data.manifest"] is None:
        raise UsageError("config key data.manifest is required")
    return cfg


def run_id(cfg: dict) -> str:
    """Stable 12-hex id of the effective (typed) configuration."""
    canon = "\n".join(f"{k}={cfg[k]!r}" for k in sorted(cfg))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def _fresh_run_dir(out_dir: Path, rid: str) -> Path:
    """Versioned run directory; never silently reuses an existing one."""
    base = out_dir / f"run-{rid}"
    candidate = base
    attempt = 1
    while candidate.exists():
        attempt += 1
        candidate = out_dir / f"run-{rid}-r{attempt}"
    candidate.mkdir(parents=True)
    return candidate


def _train_config(cfg: dict, log_path=None) -> TrainConfig:
    delta = cfg["train.delta"]
    return TrainConfig(
        variant=cfg["model.variant"],
        bits=cfg["model.bits"],
        gamma=cfg["model.gamma"],
        lambdas=(cfg["train.lambda1"], cfg["train.lambda2"]),
        rho=cfg["train.rho"],
        mu=cfg["train.mu"],
        fit_target=cfg["train.fit_target"],
        neighbors=cfg["train.neighbors"],
        anchors=cfg["train.anchors"],
        s_nearest=cfg["train.s_nearest"],
        delta=delta if delta > 0 else None,
        ridge=cfg["train.ridge"],
        anchor_method=cfg["train.anchor_method"],
        max_iters=cfg["train.max_iters"],
        tol=cfg["train.tol"],
        seed=cfg["train.seed"],
        log_path=str(log_path) if log_path else None,
    )


def _parse_tasks(spec: str) -> list[str]:
    tasks = [t.strip().lower() for t in spec.split(",") if t.strip()]
    if not tasks:
        raise UsageError("no tasks requested")
    for t in tasks:
        if t not in TASKS:
            raise UsageError(f"unknown task {t!r}; valid tasks: {', '.join(sorted(TASKS))}")
    return tasks


def cmd_train(args) -> int:
    config_path = Path(args.config)
    cfg = load_config(config_path)
    base = config_path.parent
    manifest = load_manifest(base / cfg["data.manifest"])
    rid = run_id(cfg)
    run_dir = _fresh_run_dir(base / cfg["out.dir"], rid)
    log.info("training into %s", run_dir)
    split = split_dataset(manifest)
    t0 = time.monotonic()
    result = train(split, _train_config(cfg, log_path=run_dir / "train_log.csv"))
    wall = time.monotonic() - t0
    model_path = run_dir / "model.uchm"
    save_model(result.model, model_path)
    rates = training_disagreement(result.model, split)
    log.info(
        "trained %d iters in %.1fs; re-encode disagreement per modality: %s",
        result.n_iters, wall, np.array2string(rates, precision=4),
    )
    meta = {
        "command": "train",
        "run_id": rid,
        "config": {k: repr(v) for k, v in cfg.items()},
        "seed": cfg["train.seed"],
        "wall_seconds": wall,
        "iterations": result.n_iters,
        "final_objective": result.objective_trace[-1],
        "model_file": model_path.name,
    }
    (run_dir / "run_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    print(model_path)
    return 0


def _check_dims(model, manifest) -> None:
    declared = tuple(dim for _, _, dim in manifest.modality_files)
    if declared != model.dims:
        raise DataError(
            f"manifest modality dims {declared} do not match model dims {model.dims}"
        )


def cmd_eval(args) -> int:
    model = load_model(args.model)
    manifest = load_manifest(args.manifest)
    _check_dims(model, manifest)
    tasks = _parse_tasks(args.tasks)
    r_cutoff = args.r_cutoff if args.r_cutoff and args.r_cutoff > 0 else None
    split = split_dataset(manifest)
    reports = [
        evaluate_task(model, split, task, r_cutoff=r_cutoff, db=args.db)
        for task in tasks
    ]
    lines = ["task,bits,map"]
    lines += [f"{r.task},{r.code_length},{r.map!r}" for r in reports]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    if args.ap_out:
        ap_dir = Path(args.ap_out)
        ap_dir.mkdir(parents=True, exist_ok=True)
        for r in reports:
            with open(ap_dir / f"ap_{r.task}.csv", "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["query_row", "ap"])
                writer.writerows(
                    (i, repr(float(v))) for i, v in enumerate(r.ap_per_query)
                )
    return 0


def cmd_encode(args) -> int:
    model = load_model(args.model)
    modality = args.modality
    if not 1 <= modality <= len(model.dims):
        raise UsageError(
            f"--modality must be in [1, {len(model.dims)}], got {modality}"
        )
    mat = load_matrix(args.input, model.dims[modality - 1])
    codes = encode(model, mat, modality, raw=args.raw)
    save_codes(codes, args.output)
    log.info("wrote %d codes of %d bits to %s", codes.n, codes.nbits, args.output)
    return 0


def _parse_grid(cfg, key, typ, fallback):
    text = cfg[key].strip()
    if not text:
        return None if fallback is None else [fallback]
    try:
        return [typ(tok.strip()) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise UsageError(f"config key {key} expects a comma list of {typ.__name__}") from None


def sweep_points(cfg: dict) -> list[dict]:
    """Expand the sweep grids into per-run config overrides.

    sweep.lambda2 left empty ties lambda2 to lambda1 at every point;
    empty grids fall back to the corresponding train.* scalar.
    """
    variant = cfg["model.variant"]
    lam1 = _parse_grid(cfg, "sweep.lambda1", float, cfg["train.lambda1"])
    lam2 = _parse_grid(cfg, "sweep.lambda2", float, None)
    rho = _parse_grid(cfg, "sweep.rho", float, cfg["train.rho"])
    bits = _parse_grid(cfg, "sweep.bits", int, cfg["model.bits"])
    if variant == "lle":
        sizes = _parse_grid(cfg, "sweep.neighbors", int, cfg["train.neighbors"])
    else:
        sizes = _parse_grid(cfg, "sweep.anchors", int, cfg["train.anchors"])
    points = []
    for b, l1, r, g in product(bits, lam1, rho, sizes):
        l2s = [l1] if lam2 is None else lam2
        for l2 in l2s:
            points.append(
                {"variant": variant, "bits": b, "lambda1": l1, "lambda2": l2,
                 "rho": r, "graph_size": g}
            )
    return points


def _canon(value) -> str:
    """The one string form a sweep value has everywhere: in point keys,
    in freshly formatted rows, and in rows read back from the CSV."""
    if isinstance(value, str):
        return value
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def point_key(point: dict) -> tuple:
    return tuple(_canon(point[c]) for c in SWEEP_KEY_COLS)


def _apply_point(cfg: dict, point: dict) -> dict:
    out = dict(cfg)
    out["model.bits"] = point["bits"]
    out["train.lambda1"] = point["lambda1"]
    out["train.lambda2"] = point["lambda2"]
    out["train.rho"] = point["rho"]
    if point["variant"] == "lle":
        out["train.neighbors"] = point["graph_size"]
    else:
        out["train.anchors"] = point["graph_size"]
    return out


def _eval_point(split, cfg: dict, point: dict, graph_pair=None) -> dict:
    pcfg = _apply_point(cfg, point)
    result = train(split, _train_config(pcfg), graph_pair=graph_pair)
    tasks = _parse_tasks(cfg["eval.tasks"])
    r_cutoff = cfg["eval.r_cutoff"] if cfg["eval.r_cutoff"] > 0 else None
    row = dict(point)
    maps = []
    for task in tasks:
        rep = evaluate_task(result.model, split, task, r_cutoff=r_cutoff, db=cfg["eval.db"])
        row[f"map_{task}"] = rep.map
        maps.append(rep.map)
    row["map_avg"] = float(np.mean(maps))
    for task in TASKS:
        row.setdefault(f"map_{task}", "")
    return row


def _sweep_worker(packed) -> dict:
    manifest_path, cfg, point = packed
    split = split_dataset(load_manifest(manifest_path))
    return _eval_point(split, cfg, point)


def _read_existing_rows(path: Path) -> dict[tuple, dict]:
    if not path.is_file():
        return {}
    with open(path, "r", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(SWEEP_COLS) - set(reader.fieldnames):
            raise DataError(f"{path}: existing sweep file has incompatible columns")
        rows = list(reader)
    return {tuple(r[c] for c in SWEEP_KEY_COLS): r for r in rows}


def run_sweep(config_path, workers: int | None = None) -> dict:
    """Train and evaluate every grid point; returns a summary dict.

    Results append to <out.dir>/sweep_results.csv as they finish, so an
    interrupted sweep rerun skips completed points.  The final file is
    rewritten sorted by map_avg, best first.
    """
    config_path = Path(config_path)
    cfg = load_config(config_path)
    base = config_path.parent
    manifest_path = base / cfg["data.manifest"]
    load_manifest(manifest_path)  # validate before spawning anything
    out_dir = base / cfg["out.dir"]
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "sweep_results.csv"
    existing = _read_existing_rows(csv_path)
    points = sweep_points(cfg)
    todo = [p for p in points if point_key(p) not in existing]
    log.info("sweep: %d points, %d already done", len(points), len(points) - len(todo))
    if workers is None:
        workers = cfg["sweep.workers"]
    rows = list(existing.values())
    t0 = time.monotonic()
    new_rows = []
    if todo:
        write_header = not csv_path.is_file()
        with open(csv_path, "a", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=SWEEP_COLS, extrasaction="ignore")
            if write_header:
                writer.writeheader()
            if workers <= 1:
                split = split_dataset(load_manifest(manifest_path))
                graphs = {}
                for point in todo:
                    gkey = (point["variant"], point["graph_size"])
                    if gkey not in graphs:
                        graphs[gkey] = build_graph(split, _train_config(_apply_point(cfg, point)))
                    row = _eval_point(split, cfg, point, graph_pair=graphs[gkey])
                    writer.writerow(_format_row(row))
                    fh.flush()
                    new_rows.append(row)
            else:
                with ProcessPoolExecutor(max_workers=workers) as pool:
                    futures = {
                        pool.submit(_sweep_worker, (manifest_path, cfg, p)): p
                        for p in todo
                    }
                    for fut in as_completed(futures):
                        row = fut.result()
                        writer.writerow(_format_row(row))
                        fh.flush()
                        new_rows.append(row)
    rows.extend(_format_row(r) for r in new_rows)
    rows.sort(key=lambda r: (-float(r["map_avg"]), tuple(r[c] for c in SWEEP_KEY_COLS)))
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_COLS, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)
    summary = {
        "total_points": len(points),
        "ran": len(todo),
        "skipped": len(points) - len(todo),
        "csv": str(csv_path),
        "wall_seconds": time.monotonic() - t0,
        "best": rows[0] if rows else None,
    }
    return summary


def _format_row(row: dict) -> dict:
    return {col: _canon(row[col]) for col in SWEEP_COLS}


def cmd_sweep(args) -> int:
    summary = run_sweep(args.config, workers=args.workers)
    log.info(
        "sweep finished: %d ran, %d skipped, %.1fs",
        summary["ran"], summary["skipped"], summary["wall_seconds"],
    )
    best = summary["best"]
    if best:
        print(f"best map_avg {best['map_avg']} at " +
              " ".join(f"{c}={best[c]}" for c in SWEEP_KEY_COLS))
    print(summary["csv"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uch",
        description="Unsupervised concatenation hashing for cross-modal retrieval.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model from a config file")
    p_train.add_argument("--config", required=True)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate MAP for a trained model")
    p_eval.add_argument("--model", required=True)
    p_eval.add_argument("--manifest", required=True)
    p_eval.add_argument("--tasks", default="i2t,t2i")
    p_eval.add_argument("--r-cutoff", type=int, default=0)
    p_eval.add_argument("--db", choices=("train", "query"), default="train")
    p_eval.add_argument("--out", default=None, help="report CSV path (default stdout)")
    p_eval.add_argument("--ap-out", default=None, help="directory for per-query AP files")
    p_eval.set_defaults(func=cmd_eval)

    p_enc = sub.add_parser("encode", help="hash a feature CSV with a trained model")
    p_enc.add_argument("--model", required=True)
    p_enc.add_argument("--input", required=True)
    p_enc.add_argument("--modality", type=int, required=True)
    p_enc.add_argument("--output", required=True)
    p_enc.add_argument("--raw", action="store_true",
                       help="input is uncentered; subtract the stored train mean")
    p_enc.set_defaults(func=cmd_encode)

    p_sweep = sub.add_parser("sweep", help="grid-search hyperparameters")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--workers", type=int, default=None)
    p_sweep.set_defaults(func=cmd_sweep)

    return parser


def _configure_logging() -> None:
    level_name = os.environ.get("UCH_LOG", "warning").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except UsageError as err:
        print(f"usage error: {err}", file=sys.stderr)
        return 1
    except DataError as err:
        print(f"data error: {err}", file=sys.stderr)
        return 2
    except NumericalError as err:
        print(f"numerical error: {err}", file=sys.stderr)
        return 3
    except UchError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
