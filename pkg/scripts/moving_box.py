"""Sequence metrics for a box moving across a noisy flat scene.

    python scripts/moving_box.py --contrast 80 --channels 1
"""
import argparse

from cp3 import ModelParams, step, train
from cp3.evaluator import ConfusionCounts, accumulate, format_table, metrics
from cp3.synth import generate, moving_box_scene


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--contrast", type=float, default=80.0)
    ap.add_argument("--channels", type=int, default=1, choices=(1, 3))
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    frames, gt = generate(moving_box_scene(seed=args.seed, contrast=args.contrast, channels=args.channels))
    rows = {}
    for range_on in (True, False):
        model = train(frames[:100], ModelParams(range_check_enabled=range_on))
        counts = ConfusionCounts()
        for t in range(100, len(frames)):
            mask, _ = step(model, frames[t])
            counts = accumulate(counts, mask, gt[t])
        rows[f"range {'on' if range_on else 'off'}"] = metrics(counts)
    print(format_table(rows), end="")


if __name__ == "__main__":
    main()
