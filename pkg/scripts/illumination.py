"""FPR after a global illumination step, with and without the range check.

    python scripts/illumination.py --offset 30 --gain 1.0 --channels 1
"""
import argparse

import numpy as np

from cp3 import ModelParams, step, train
from cp3.dataset import GT
from cp3.synth import generate, illumination_scene


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--offset", type=float, default=30.0)
    ap.add_argument("--gain", type=float, default=1.0)
    ap.add_argument("--channels", type=int, default=1, choices=(1, 3))
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--margin", type=float, default=10.0, help="range margin on both sides")
    args = ap.parse_args()

    spec = illumination_scene(seed=args.seed, offset=args.offset, gain=args.gain,
                              channels=args.channels, frame_count=171)
    frames, gt = generate(spec)
    for range_on in (False, True):
        params = ModelParams(range_check_enabled=range_on, range_margin_lo=args.margin,
                             range_margin_hi=args.margin)
        model = train(frames[:100], params)
        fpr = []
        for t in range(100, len(frames)):
            mask, _ = step(model, frames[t])
            fpr.append(mask[gt[t] == GT.BACKGROUND].mean())
        fpr = np.array(fpr)
        window = fpr[50:61]
        print(f"range check {'on ' if range_on else 'off'}: "
              f"FPR before step {fpr[:50].mean():.4%}, frame 150 {window[0]:.2%}, "
              f"frames 150-160 {window.mean():.4%}, frames 161-170 {fpr[61:].mean():.4%}")


if __name__ == "__main__":
    main()
