"""Command-line front end: ``cp3 train | run | eval | synth``.

Parameters resolve as defaults < ``--config`` file < flags.  Every command
writes a JSON manifest with the resolved configuration.

Exit status: 0 success, 1 usage, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import fields
from pathlib import Path

import numba
import numpy as np

from . import __version__
from . import dataset as ds
from . import synth
from .errors import DecodeError, InvalidInput, NumericFailure, SequenceGap, TrainingError
from .evaluator import ConfusionCounts, accumulate, aggregate, format_keyvalue, format_table, metrics
from .model import step
from .params import ModelParams
from .trainer import train

log = logging.getLogger("cp3")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# keys that change the shape or content of a trained model
_STRUCTURAL = ("k_supports", "candidate_multiplier", "gamma_scale", "gamma_floor",
               "cov_epsilon", "seed", "training_frames", "candidate_stride")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def read_config(path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    items = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror or exc}") from None
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        items[key] = value
    return items


def _param_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model parameters")
    g.add_argument("--config", help="flat key=value parameter file")
    g.add_argument("--seed", type=int)
    g.add_argument("--stride", type=int, dest="candidate_stride",
                   help="candidate grid stride during support selection")
    g.add_argument("--no-range-check", action="store_true")
    for f in fields(ModelParams):
        if f.name in ("seed", "candidate_stride", "range_check_enabled"):
            continue
        kind = int if f.type in ("int", int) else float
        g.add_argument("--" + f.name.replace("_", "-"), type=kind, dest=f.name)
    g.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any parameter by name")


def _explicit_params(args) -> dict:
    items: dict = {}
    if getattr(args, "config", None):
        items.update(read_config(args.config))
    for f in fields(ModelParams):
        v = getattr(args, f.name, None)
        if v is not None and f.name != "range_check_enabled":
            items[f.name] = v
    if getattr(args, "no_range_check", False):
        items["range_check_enabled"] = False
    for kv in getattr(args, "set", []):
        if "=" not in kv:
            raise UsageError(f"--set expects KEY=VALUE, got {kv!r}")
        k, v = kv.split("=", 1)
        items[k.strip()] = v
    return items


def resolve_params(args, base: ModelParams | None = None) -> ModelParams:
    try:
        return ModelParams.from_strings(_explicit_params(args), base)
    except InvalidInput as exc:
        raise UsageError(str(exc)) from None


def set_threads(requested: int | None) -> int:
    if requested is None:
        env = os.environ.get("CP3_THREADS")
        if env:
            try:
                requested = int(env)
            except ValueError:
                raise UsageError(f"CP3_THREADS must be an integer, got {env!r}") from None
    limit = numba.config.NUMBA_NUM_THREADS
    if requested is None:
        requested = limit
    if requested < 1:
        raise UsageError("thread count must be >= 1")
    if requested > limit:
        log.warning("requested %d threads, only %d available; using %d", requested, limit, limit)
        requested = limit
    numba.set_num_threads(requested)
    return requested


def write_manifest(path, command: str, args, **extra) -> None:
    manifest = {
        "cp3_version": __version__,
        "command": command,
        "argv": [a for a in sys.argv[1:]],
        "numpy_version": np.__version__,
        "numba_version": numba.__version__,
    }
    manifest.update(extra)
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def _sequence(path, pattern) -> ds.SequenceSpec:
    return ds.SequenceSpec.from_video_dir(path, pattern)


def _read_window(spec: ds.SequenceSpec, n: int) -> tuple[list[int], np.ndarray]:
    present = spec.indices()
    if not present:
        raise SequenceGap(1, spec.frame_path(1))
    first = present[0]
    frames, indices = [], []
    for index, frame, _ in ds.load_sequence(_no_gt(spec), first, first + n - 1):
        frames.append(frame)
        indices.append(index)
    return indices, np.stack(frames)


def _no_gt(spec: ds.SequenceSpec) -> ds.SequenceSpec:
    return ds.SequenceSpec(spec.input_dir, None, None, spec.temporal_roi, spec.pattern, spec.gt_pattern)


def _train_from(spec, params) -> tuple:
    present = spec.indices()
    if len(present) < params.training_frames:
        raise InvalidInput(
            f"{spec.input_dir}: {len(present)} frames, training needs {params.training_frames}"
        )
    timings: dict = {}
    t0 = time.perf_counter()
    indices, video = _read_window(spec, params.training_frames)
    decode = time.perf_counter() - t0
    model = train(video, params, timings=timings)
    timings["load"] = timings.get("load", 0.0) + decode
    return model, indices, timings


def _print_timings(timings: dict) -> None:
    for stage in ("load", "correlation", "gaussian"):
        print(f"{stage:<12s} {timings.get(stage, 0.0):9.3f} s")
    print(f"{'total':<12s} {sum(timings.values()):9.3f} s")


# --- commands ------------------------------------------------------------------


def cmd_train(args) -> int:
    params = resolve_params(args)
    threads = set_threads(args.threads)
    spec = _sequence(args.input, args.pattern)
    model, indices, timings = _train_from(spec, params)
    ds.save_model_file(model, args.model)
    _print_timings(timings)
    fb = int(model.info["selection"].fallback.sum())
    log.info("trained on frames %d..%d; %d pixels used fallback candidates", indices[0], indices[-1], fb)
    write_manifest(Path(str(args.model) + ".manifest.json"), "train", args,
                   params=params.as_dict(), threads=threads, input=str(spec.input_dir),
                   pattern=spec.pattern, training_indices=[indices[0], indices[-1]],
                   model=str(args.model))
    return EXIT_OK


def mask_name(frame_path: Path) -> str:
    stem = frame_path.stem
    if stem.startswith("in"):
        stem = "bin" + stem[2:]
    return stem + ".png"


def cmd_run(args) -> int:
    threads = set_threads(args.threads)
    spec = _sequence(args.input, args.pattern)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.model:
        model = ds.load_model_file(args.model)
        explicit = {k: v for k, v in _explicit_params(args).items()}
        clash = sorted(k for k in explicit if k in _STRUCTURAL)
        if clash:
            raise UsageError(f"cannot change {', '.join(clash)} of a trained model")
        model.params = resolve_params(args, model.params)
        start = None
    else:
        params = resolve_params(args)
        model, indices, timings = _train_from(spec, params)
        _print_timings(timings)
        start = indices[-1] + 1
    present = spec.indices()
    if not present:
        raise SequenceGap(1, spec.frame_path(1))
    first = present[0] if start is None else start
    last = present[-1]
    n = 0
    t_step = 0.0
    t0 = time.perf_counter()
    frames = ds.load_sequence(_no_gt(spec), first, last) if first <= last else iter(())
    # decode of the next frame overlaps with the current step
    with ThreadPoolExecutor(max_workers=1) as pool:
        pending = pool.submit(next, frames, None)
        while True:
            item = pending.result()
            if item is None:
                break
            pending = pool.submit(next, frames, None)
            index, frame, _ = item
            if frame.shape != (model.height, model.width, model.channels):
                raise InvalidInput(
                    f"frame {index} has shape {frame.shape}, model expects "
                    f"{(model.height, model.width, model.channels)}"
                )
            s0 = time.perf_counter()
            mask, _ = step(model, frame)
            t_step += time.perf_counter() - s0
            ds.write_mask(mask, out / mask_name(spec.frame_path(index)))
            n += 1
    wall = time.perf_counter() - t0
    if n:
        log.info("processed %d frames: %.1f fps step, %.1f fps overall",
                 n, n / t_step if t_step > 0 else float("inf"), n / wall)
    else:
        log.warning("no frames after the training window")
    if args.save_model:
        ds.save_model_file(model, args.save_model)
    write_manifest(out / "manifest.json", "run", args, params=model.params.as_dict(),
                   threads=threads, input=str(spec.input_dir), pattern=spec.pattern,
                   model=args.model, frames=[first, last] if n else [], processed=n,
                   save_model=args.save_model)
    return EXIT_OK


def _eval_pairs(args) -> list[tuple[Path, Path]]:
    pairs = []
    if args.list:
        for line in Path(args.list).read_text().splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise UsageError(f"{args.list}: expected 'video_dir mask_dir' per line")
            pairs.append((Path(parts[0]), Path(parts[1])))
    inputs, masks = args.input or [], args.masks or []
    if len(inputs) != len(masks):
        raise UsageError("give one --masks per --input")
    pairs += [(Path(i), Path(m)) for i, m in zip(inputs, masks)]
    if not pairs:
        raise UsageError("nothing to evaluate: give --input/--masks or --list")
    return pairs


def evaluate_video(spec: ds.SequenceSpec, mask_dir: Path) -> ConfusionCounts:
    if spec.groundtruth_dir is None:
        raise InvalidInput(f"{spec.input_dir}: no groundtruth directory")
    present = spec.indices()
    if not present:
        raise SequenceGap(1, spec.frame_path(1))
    first, last = spec.temporal_roi or (present[0], present[-1])
    missing_gt = [i for i in range(first, last + 1) if not spec.gt_path(i).is_file()]
    if missing_gt:
        raise InvalidInput(f"{spec.groundtruth_dir}: missing ground truth for frames {_ranges(missing_gt)}")
    missing = [i for i in range(first, last + 1)
               if not (mask_dir / mask_name(spec.frame_path(i))).is_file()]
    if missing:
        raise InvalidInput(f"{mask_dir}: missing masks for frames {_ranges(missing)}")
    roi = ds.read_frame(spec.roi_path) if spec.roi_path is not None else None
    counts = ConfusionCounts()
    for i in range(first, last + 1):
        gt = ds.decode_groundtruth(ds.read_frame(spec.gt_path(i)))
        if roi is not None:
            gt = ds.apply_roi(gt, roi)
        mask = ds.read_mask(mask_dir / mask_name(spec.frame_path(i)))
        counts = accumulate(counts, mask, gt)
    return counts


def _ranges(idx: list[int]) -> str:
    out, start, prev = [], idx[0], idx[0]
    for i in idx[1:] + [None]:
        if i is not None and i == prev + 1:
            prev = i
            continue
        out.append(str(start) if start == prev else f"{start}-{prev}")
        if i is not None:
            start = prev = i
    return ", ".join(out)


def cmd_eval(args) -> int:
    pairs = _eval_pairs(args)
    reports, kv, names = {}, [], []
    for video, mask_dir in pairs:
        spec = _sequence(video, args.pattern)
        counts = evaluate_video(spec, mask_dir)
        name = video.resolve().name
        if name in reports:
            name = str(video)
        rep = metrics(counts)
        reports[name] = rep
        names.append(name)
        kv.append(format_keyvalue(rep, prefix=f"{name}.", counts=counts))
    table_rows = dict(reports)
    if len(reports) > 1:
        agg = aggregate(reports.values())
        table_rows["mean"] = agg
        kv.append(format_keyvalue(agg, prefix="mean."))
    table = format_table(table_rows)
    sys.stdout.write(table)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(table)
    (out / "report.kv").write_text("".join(kv))
    write_manifest(out / "manifest.json", "eval", args,
                   videos=[[str(v), str(m)] for v, m in pairs], pattern=args.pattern)
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.scene:
        try:
            spec = synth.SceneSpec.from_json(Path(args.scene).read_text())
        except OSError as exc:
            raise UsageError(f"cannot read scene {args.scene}: {exc.strerror or exc}") from None
    else:
        if args.preset not in synth.PRESETS:
            raise UsageError(f"unknown preset {args.preset!r}; choose from {', '.join(synth.PRESETS)}")
        spec = synth.PRESETS[args.preset]()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.channels is not None:
        changes["channels"] = args.channels
    if changes:
        spec = spec.replace(**changes)
    troi = None
    if args.eval_from is not None:
        if not 1 <= args.eval_from <= spec.frame_count:
            raise UsageError(f"--eval-from must be in [1, {spec.frame_count}]")
        troi = (args.eval_from, spec.frame_count)
    out = Path(args.out)
    synth.write_sequence(spec, out, troi)
    write_manifest(out / "manifest.json", "synth", args, scene=json.loads(spec.to_json()),
                   temporal_roi=list(troi or (1, spec.frame_count)))
    log.info("wrote %d frames to %s", spec.frame_count, out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cp3", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"cp3 {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("-q", "--quiet", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train a model on the first frames of a sequence")
    t.add_argument("--input", required=True, help="video directory (with input/) or frame directory")
    t.add_argument("--model", required=True, help="output model file")
    t.add_argument("--pattern", help="frame name pattern, e.g. in%%06d.jpg")
    t.add_argument("--threads", type=int)
    _param_flags(t)
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("run", help="detect foreground and write masks")
    r.add_argument("--input", required=True)
    r.add_argument("--out", required=True, help="mask output directory")
    r.add_argument("--model", help="trained model; without it the first frames are used to train")
    r.add_argument("--save-model", help="write the final model here")
    r.add_argument("--pattern")
    r.add_argument("--threads", type=int)
    _param_flags(r)
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="score masks against ground truth")
    e.add_argument("--input", action="append", help="video directory (repeatable)")
    e.add_argument("--masks", action="append", help="mask directory for the matching --input")
    e.add_argument("--list", help="file of 'video_dir mask_dir' lines")
    e.add_argument("--out", required=True, help="report directory")
    e.add_argument("--pattern")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="write a synthetic sequence with ground truth")
    s.add_argument("--out", required=True)
    s.add_argument("--preset", default="moving-box", help=", ".join(synth.PRESETS))
    s.add_argument("--scene", help="scene JSON file (overrides --preset)")
    s.add_argument("--seed", type=int)
    s.add_argument("--channels", type=int, choices=(1, 3))
    s.add_argument("--eval-from", type=int, help="first evaluated frame (1-based) in temporalROI.txt")
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose > 1 else logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"cp3: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericFailure as exc:
        print(f"cp3: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except TrainingError as exc:
        print(f"cp3: training failed at pixel {exc.coord}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (InvalidInput, DecodeError, SequenceGap, OSError) as exc:
        print(f"cp3: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
