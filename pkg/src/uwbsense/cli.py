"""``uwbsense`` command line: simulate, preprocess, train, eval, finetune, replay.

Every command writes into an output directory and leaves a ``manifest.json``
there describing how the outputs were produced. Exit codes: 0 success,
2 invalid input or configuration, 3 runtime or numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
import time
from contextlib import nullcontext
from itertools import permutations
from pathlib import Path

import numpy as np

from . import __version__
from .config import (ConfigError, PreprocessConfig, RadioConfig, SceneConfig, TimingConfig,
                     config_hash, dump_kv, load_kv)
from .evaluation import (classification_metrics, error_cdf, localization_errors, localization_metrics,
                         trajectory_overlay, write_cdf_csv, write_confusion_csv, write_metrics_csv,
                         write_trajectory_csv)
from .mac import RunSummary, emit_record_arrays, run_aloha
from .model import (TrainConfig, TrainingDiverged, finetune, first_minutes, init_model,
                    load_checkpoint, save_checkpoint, time_split, train, write_history)
from .pipeline import _concat_blocks
from .preprocess import PreprocessError, link_blocks, make_datapoints, read_datapoints, write_datapoints
from .recordio import CaptureFormatError, CaptureWriter, RecordError, capture_read_array, read_header, timestamps
from .scene import Activity, OutOfRangeError, build_scene, read_truth, sample_trajectory, write_truth
from .tasks import Task

log = logging.getLogger("uwbsense")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3
SEED_ENV = "UWBSENSE_SEED"
SEGMENT_US = 60e6


class UsageError(ValueError):
    """Bad command-line input detected after argument parsing."""


# -- config handling ---------------------------------------------------------------

_SECTIONS = {
    "radio.": RadioConfig,
    "timing.": TimingConfig,
    "preprocess.": PreprocessConfig,
}


def load_config(path: str | None) -> dict[str, str]:
    """Read a key/value config file and reject keys nothing understands."""
    if path is None:
        return {}
    kv = load_kv(path)
    scene_keys = {f.name for f in dataclasses.fields(SceneConfig)} - {"anchors"}
    for key in kv:
        if key.startswith("anchor."):
            continue
        for prefix, cls in _SECTIONS.items():
            if key.startswith(prefix):
                if key[len(prefix):] not in {f.name for f in dataclasses.fields(cls)}:
                    raise ConfigError(f"{path}: unknown key {key!r}")
                break
        else:
            if key not in scene_keys:
                raise ConfigError(f"{path}: unknown key {key!r}")
    return kv


def _section(kv: dict[str, str], prefix: str) -> dict[str, str]:
    return {k[len(prefix):]: v for k, v in kv.items() if k.startswith(prefix)}


def _scene_kv(kv: dict[str, str]) -> dict[str, str]:
    return {k: v for k, v in kv.items() if not any(k.startswith(p) for p in _SECTIONS)}


def full_config_text(scene: SceneConfig, radio: RadioConfig, timing: TimingConfig) -> str:
    items = dict(scene.to_kv())
    items.update({f"radio.{k}": v for k, v in radio.to_kv().items()})
    items.update({f"timing.{k}": v for k, v in timing.to_kv().items()})
    return dump_kv(items)


def resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    env = os.environ.get(SEED_ENV)
    if env is None or env.strip() == "":
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={env!r} is not an integer") from None


# -- manifest ----------------------------------------------------------------------

def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _module_hashes() -> dict[str, str]:
    root = Path(__file__).parent
    return {str(p.relative_to(root)): _sha256(p)[:16] for p in sorted(root.rglob("*.py"))}


def write_manifest(out: Path, args, argv: list[str], config: dict, seed: int,
                   inputs: dict[str, str], outputs: list[str], started: float) -> Path:
    det = bool(getattr(args, "deterministic", False))
    manifest = {
        "command": args.command,
        "argv": argv,
        "version": __version__,
        "seed": seed,
        "deterministic": det,
        "config": config,
        "inputs": {k: {"path": v, "sha256": _sha256(Path(v))} for k, v in inputs.items()},
        "outputs": {name: _sha256(out / name) for name in outputs},
        "modules": _module_hashes(),
        "started": None if det else time.strftime("%Y-%m-%dT%H:%M:%S%z", time.localtime(started)),
        "elapsed_s": None if det else round(time.time() - started, 3),
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _outdir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require_file(path: str, what: str) -> str:
    if not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")
    return path


# -- commands ----------------------------------------------------------------------

def cmd_simulate(args, argv) -> int:
    started = time.time()
    if not args.duration > 0:
        raise UsageError(f"--duration must be positive, got {args.duration}")
    kv = load_config(args.config)
    scene_cfg = SceneConfig.from_kv(_scene_kv(kv))
    radio = RadioConfig.from_kv(_section(kv, "radio."))
    timing = TimingConfig.from_kv(_section(kv, "timing."))
    scene = build_scene(scene_cfg)
    seed = resolve_seed(args.seed)
    task = Task.parse(args.task)
    activity = Activity.parse(args.activity)
    trajectories = sample_trajectory(scene, args.duration, activity, args.persons, seed)
    out = _outdir(args.out)
    text = full_config_text(scene_cfg, radio, timing)
    (out / "config.cfg").write_text(text)
    write_truth(out / "truth.csv", trajectories)
    summary = RunSummary()
    events = run_aloha(scene.anchor_ids, args.duration, timing, seed)
    with CaptureWriter(out / "capture.uwbc", config_hash(text)) as w:
        for arr in emit_record_arrays(events, trajectories, scene, radio, args.snr_db, seed,
                                      max_order=args.max_order, summary=summary):
            w.write_array(arr)
    (out / "mac_summary.txt").write_text(summary.to_text())
    log.info("simulated %.1f s: %d records, collision fraction %.3f", args.duration,
             summary.records, summary.collision_fraction)
    config = {"scene": scene_cfg.to_kv(), "radio": radio.to_kv(), "timing": timing.to_kv(),
              "duration_s": args.duration, "task": task.value, "persons": args.persons,
              "activity": activity.name.lower(), "snr_db": args.snr_db, "max_order": args.max_order}
    write_manifest(out, args, argv, config, seed, {} if args.config is None else {"config": args.config},
                   ["config.cfg", "truth.csv", "capture.uwbc", "mac_summary.txt"], started)
    print(f"{summary.records} records -> {out / 'capture.uwbc'}")
    return EXIT_OK


def capture_blocks(path: str, pp: PreprocessConfig, preamble_length: int = 256):
    """Per-link block statistics of a capture, read in bounded 60 s segments.

    Blocks never straddle a segment boundary, matching the in-memory session
    pipeline.
    """
    pending: dict[int, list[np.ndarray]] = {}
    segments: list[np.ndarray] = []
    ids: set[int] = set()
    for arr in capture_read_array(path, chunk=1 << 16):
        ids.update(np.unique(arr["tx_id"]).tolist())
        ids.update(np.unique(arr["rx_id"]).tolist())
        seg = (timestamps(arr) // int(SEGMENT_US)).astype(np.int64)
        for key in np.unique(seg):
            pending.setdefault(int(key), []).append(arr[seg == key])
        for key in sorted(k for k in pending if k < seg.min()):
            segments.append(np.concatenate(pending.pop(key)))
    for key in sorted(pending):
        segments.append(np.concatenate(pending.pop(key)))
    if not segments:
        raise PreprocessError(f"{path}: capture holds no records")
    links = list(permutations(sorted(ids), 2))
    blocks = _concat_blocks([link_blocks(s, links, pp, preamble_length) for s in segments], links)
    return blocks, links


def cmd_preprocess(args, argv) -> int:
    started = time.time()
    _require_file(args.capture, "capture file")
    _require_file(args.truth, "truth file")
    kv = load_config(args.config)
    base = PreprocessConfig.from_kv(_section(kv, "preprocess."))
    overrides = {k: v for k, v in {"m": args.m, "c": args.c, "window_s": args.window_s,
                                   "hop_s": args.hop_s, "stride": args.stride}.items() if v is not None}
    if args.preamble_normalize:
        overrides["preamble_normalize"] = True
    pp = dataclasses.replace(base, **overrides)
    radio = RadioConfig.from_kv(_section(kv, "radio."))
    task = Task.parse(args.task)
    _, capture_hash = read_header(args.capture)
    trajectories = read_truth(args.truth)
    blocks, links = capture_blocks(args.capture, pp, radio.preamble_length)
    t0 = min(tr.times[0] for tr in trajectories) * 1e6
    t1 = max(tr.times[-1] for tr in trajectories) * 1e6
    ds = make_datapoints(blocks, links, trajectories, task, pp, (t0, t1))
    if len(ds) == 0:
        raise PreprocessError("no complete windows in the capture")
    out = _outdir(args.out)
    text = dump_kv(pp.to_kv())
    (out / "preprocess.cfg").write_text(text)
    write_datapoints(out / "datapoints.uwbd", ds, config_hash(text))
    log.info("%d datapoints, %d windows skipped", len(ds), ds.skipped)
    config = {"preprocess": pp.to_kv(), "task": task.value, "links": [list(l) for l in links],
              "capture_config_hash": f"{capture_hash:016x}", "skipped_windows": ds.skipped}
    write_manifest(out, args, argv, config, 0, {"capture": args.capture, "truth": args.truth},
                   ["preprocess.cfg", "datapoints.uwbd"], started)
    print(f"{len(ds)} datapoints of shape {tuple(ds.shape)} -> {out / 'datapoints.uwbd'}")
    return EXIT_OK


def _train_config(args, seed: int) -> TrainConfig:
    return TrainConfig(learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs,
                       seed=seed, optimizer=args.optimizer, weight_decay=args.weight_decay)


def cmd_train(args, argv) -> int:
    from .plots import plot_history

    started = time.time()
    seed = resolve_seed(args.seed)
    ds = read_datapoints(_require_file(args.data, "datapoint file"))
    if args.val_data:
        train_set = ds
        val_set = read_datapoints(_require_file(args.val_data, "validation datapoint file"))
    else:
        train_set, val_set, _ = time_split(ds, args.train_fraction, args.val_fraction)
        if len(val_set) == 0:
            val_set = None
    if len(train_set) == 0:
        raise UsageError("training split is empty")
    cfg = _train_config(args, seed)
    model = init_model(ds.task, seed=seed)
    best, history = train(model, train_set, val_set, cfg)
    out = _outdir(args.out)
    save_checkpoint(out / "model.ckpt", best, cfg.epochs)
    write_history(out / "history.csv", history)
    outputs = ["model.ckpt", "history.csv"]
    if history:
        plot_history(history, out / "history.png")
        outputs.append("history.png")
    inputs = {"data": args.data}
    if args.val_data:
        inputs["val_data"] = args.val_data
    write_manifest(out, args, argv, {"train": dataclasses.asdict(cfg), "task": ds.task.value,
                                     "n_train": len(train_set),
                                     "n_val": 0 if val_set is None else len(val_set),
                                     "train_fraction": args.train_fraction,
                                     "val_fraction": args.val_fraction},
                   seed, inputs, outputs, started)
    print(f"trained {cfg.epochs} epochs on {len(train_set)} datapoints -> {out / 'model.ckpt'}")
    return EXIT_OK


def _select_split(ds, split: str, train_fraction: float, val_fraction: float):
    if split == "all":
        return ds
    parts = dict(zip(("train", "val", "test"), time_split(ds, train_fraction, val_fraction)))
    return parts[split]


def evaluate_to_dir(model, ds, out: Path, smoothing: int = 5, room=None, plots: bool = True) -> list[str]:
    """Write metrics (and, for localization, CDF and trajectory) CSVs plus figures."""
    if len(ds) == 0:
        raise UsageError("evaluation set is empty")
    if ds.task is not model.task:
        raise UsageError(f"model task {model.task.value} != data task {ds.task.value}")
    pred = model.predict(ds.x).astype(np.float64)
    outputs = ["metrics.csv"]
    if ds.task is Task.LOCALIZATION:
        err = localization_errors(pred, ds.labels)
        m = localization_metrics(err)
        cdf = error_cdf(err)
        order = np.argsort(ds.t_end, kind="stable")
        overlay = trajectory_overlay(pred[order], ds.labels[order], smoothing, ds.t_end[order] * 1e-6)
        write_metrics_csv(out / "metrics.csv", m)
        write_cdf_csv(out / "cdf.csv", cdf)
        write_trajectory_csv(out / "trajectory.csv", overlay)
        outputs += ["cdf.csv", "trajectory.csv"]
        if plots:
            from .plots import plot_cdf, plot_trajectory
            plot_cdf(cdf, out / "cdf.png", m.p80)
            plot_trajectory(overlay, out / "trajectory.png", room)
            outputs += ["cdf.png", "trajectory.png"]
    else:
        names = ds.task.class_names()
        m = classification_metrics(pred.argmax(axis=1), ds.task.class_index(ds.labels), len(names))
        write_metrics_csv(out / "metrics.csv", m)
        write_confusion_csv(out / "confusion.csv", m.confusion, names)
        outputs.append("confusion.csv")
        if plots:
            from .plots import plot_confusion
            plot_confusion(m.confusion, out / "confusion.png", names)
            outputs.append("confusion.png")
    return outputs


def cmd_eval(args, argv) -> int:
    started = time.time()
    model, _ = load_checkpoint(_require_file(args.model, "checkpoint"))
    ds = read_datapoints(_require_file(args.data, "datapoint file"))
    ds = _select_split(ds, args.split, args.train_fraction, args.val_fraction)
    out = _outdir(args.out)
    outputs = evaluate_to_dir(model, ds, out, args.smoothing, plots=not args.no_plots)
    write_manifest(out, args, argv, {"split": args.split, "smoothing": args.smoothing, "n": len(ds),
                                     "task": ds.task.value},
                   0, {"model": args.model, "data": args.data}, outputs, started)
    print(f"evaluated {len(ds)} datapoints -> {out / 'metrics.csv'}")
    return EXIT_OK


def cmd_finetune(args, argv) -> int:
    started = time.time()
    if not 0 <= args.epochs <= 50:
        raise UsageError("--epochs must be in 0..50")
    if not args.minutes > 0:
        raise UsageError("--minutes must be positive")
    seed = resolve_seed(args.seed)
    model, epoch = load_checkpoint(_require_file(args.model, "checkpoint"))
    ds = read_datapoints(_require_file(args.data, "datapoint file"))
    small = first_minutes(ds, args.minutes)
    cfg = _train_config(args, seed)
    tuned, history = finetune(model, small, args.epochs, cfg, lr_scale=args.lr_scale)
    out = _outdir(args.out)
    save_checkpoint(out / "model.ckpt", tuned, epoch + args.epochs)
    write_history(out / "history.csv", history)
    write_manifest(out, args, argv, {"train": dataclasses.asdict(cfg), "minutes": args.minutes,
                                     "lr_scale": args.lr_scale, "n_finetune": len(small)},
                   seed, {"model": args.model, "data": args.data}, ["model.ckpt", "history.csv"], started)
    print(f"fine-tuned {args.epochs} epochs on {len(small)} datapoints -> {out / 'model.ckpt'}")
    return EXIT_OK


def cmd_replay(args, argv) -> int:
    manifest = json.loads(Path(_require_file(args.manifest, "manifest")).read_text())
    replay_argv = list(manifest["argv"])
    if args.out is not None:
        idx = replay_argv.index("--out")
        replay_argv[idx + 1] = args.out
    return main(replay_argv)


# -- parser ------------------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--deterministic", action="store_true",
                   help="single-threaded numerics and timestamp-free manifests")
    p.add_argument("--threads", type=int, default=None, metavar="N",
                   help="cap BLAS/OpenMP threads (default: library default; 1 with --deterministic)")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _training_flags(p: argparse.ArgumentParser, epochs: int, lr: float) -> None:
    p.add_argument("--epochs", type=int, default=epochs)
    p.add_argument("--lr", type=float, default=lr)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--weight-decay", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=None, help=f"default: ${SEED_ENV} or 0")


def _split_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--train-fraction", type=float, default=0.70)
    p.add_argument("--val-fraction", type=float, default=0.15)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="uwbsense", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a session into a capture and truth file")
    _common(p)
    p.add_argument("--config", help="key = value scene/radio/timing config file")
    p.add_argument("--duration", type=float, required=True, help="seconds")
    p.add_argument("--task", default="localization", choices=[t.value for t in Task])
    p.add_argument("--persons", type=int, default=1)
    p.add_argument("--activity", default="moving", choices=[a.name.lower() for a in Activity])
    p.add_argument("--snr-db", type=float, default=25.0)
    p.add_argument("--max-order", type=int, default=1, choices=(0, 1, 2))
    p.add_argument("--seed", type=int, default=None, help=f"default: ${SEED_ENV} or 0")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("preprocess", help="turn a capture and truth file into datapoints")
    _common(p)
    p.add_argument("--config", help="config file; preprocess.* and radio.* keys are used")
    p.add_argument("--capture", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--task", default="localization", choices=[t.value for t in Task])
    p.add_argument("--m", type=int, default=None, help="records per block (default 16)")
    p.add_argument("--c", type=int, default=None, help="blocks per datapoint (default 4)")
    p.add_argument("--window-s", type=float, default=None, help="datapoint window (default 1.0)")
    p.add_argument("--hop-s", type=float, default=None, help="datapoint hop (default 0.5)")
    p.add_argument("--stride", type=int, default=None, help="block stride in records (default M)")
    p.add_argument("--preamble-normalize", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a model on a datapoint file")
    _common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--val-data", help="separate validation file (default: contiguous time split)")
    _split_flags(p)
    _training_flags(p, epochs=30, lr=1e-3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint and export CSVs and figures")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("all", "train", "val", "test"), default="all")
    _split_flags(p)
    p.add_argument("--smoothing", type=int, default=5, help="trajectory moving-average window")
    p.add_argument("--no-plots", action="store_true", help="write CSVs only")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("finetune", help="briefly retrain a checkpoint on fresh data")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--minutes", type=float, default=5.0, help="use the first N minutes of --data")
    p.add_argument("--lr-scale", type=float, default=0.1)
    _training_flags(p, epochs=20, lr=1e-3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    _common(p)
    p.add_argument("manifest")
    p.add_argument("--out", help="write to a different directory")
    p.set_defaults(func=cmd_replay)
    return parser


def _thread_limit(args):
    n = args.threads
    if n is None and args.deterministic:
        n = 1
    if n is None:
        return nullcontext()
    if n < 1:
        raise UsageError("--threads must be >= 1")
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_INVALID
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit(args):
            return args.func(args, argv)
    except (UsageError, ConfigError, PreprocessError, RecordError, CaptureFormatError,
            OutOfRangeError, FileNotFoundError, IsADirectoryError, ValueError) as exc:
        print(f"uwbsense {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (TrainingDiverged, FloatingPointError, ArithmeticError, RuntimeError, MemoryError) as exc:
        print(f"uwbsense {args.command}: runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
