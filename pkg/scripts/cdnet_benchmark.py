"""Train, run and score every video of a changedetection.net-style tree.

Expects ``root/<category>/<video>/{input,groundtruth,ROI.bmp,temporalROI.txt}``
and prints one table row per category (mean over its videos) plus the
overall mean.  Masks go to ``--out/<category>/<video>/``.

    python scripts/cdnet_benchmark.py /data/dataset2014 --out results
"""
import argparse
import time
from pathlib import Path

import numpy as np

from cp3 import ModelParams, step, train
from cp3 import dataset as ds
from cp3.cli import evaluate_video, mask_name
from cp3.evaluator import aggregate, format_table, metrics


def run_video(video: Path, out: Path, params: ModelParams) -> float:
    spec = ds.SequenceSpec.from_video_dir(video)
    frames_only = ds.SequenceSpec(spec.input_dir, pattern=spec.pattern)
    first = spec.indices()[0]
    window = np.stack([f for _, f, _ in ds.load_sequence(
        frames_only, first, first + params.training_frames - 1)])
    model = train(window, params)
    out.mkdir(parents=True, exist_ok=True)
    # the training frames are classified as well, the temporal ROI decides what is scored
    n, t0 = 0, time.perf_counter()
    for index, frame, _ in ds.load_sequence(frames_only):
        mask, _ = step(model, frame)
        ds.write_mask(mask, out / mask_name(spec.frame_path(index)))
        n += 1
    return n / (time.perf_counter() - t0)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("root", type=Path)
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--stride", type=int, default=2, help="candidate stride for support selection")
    ap.add_argument("--categories", nargs="*")
    args = ap.parse_args()

    params = ModelParams(candidate_stride=args.stride)
    rows = {}
    for category in sorted(p for p in args.root.iterdir() if p.is_dir()):
        if args.categories and category.name not in args.categories:
            continue
        reports = []
        for video in sorted(p for p in category.iterdir() if (p / "input").is_dir()):
            fps = run_video(video, args.out / category.name / video.name, params)
            counts = evaluate_video(ds.SequenceSpec.from_video_dir(video),
                                    args.out / category.name / video.name)
            reports.append(metrics(counts))
            print(f"{category.name}/{video.name}: F={reports[-1].f_measure:.4f} at {fps:.1f} fps", flush=True)
        if reports:
            rows[category.name] = aggregate(reports)
    if rows:
        rows["overall"] = aggregate(rows.values())
        print(format_table(rows), end="")


if __name__ == "__main__":
    main()
