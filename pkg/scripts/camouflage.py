"""Per-frame recall of a texture-preserving bright object, range check on vs off.

    python scripts/camouflage.py --offset 40
"""
import argparse

from cp3 import ModelParams, step, train
from cp3.dataset import GT
from cp3.synth import camouflage_scene, generate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--offset", type=float, default=40.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--frames", type=int, default=10, help="frames to follow after onset")
    args = ap.parse_args()

    spec = camouflage_scene(seed=args.seed, offset=args.offset, frame_count=100 + args.frames)
    frames, gt = generate(spec)
    for range_on in (True, False):
        model = train(frames[:100], ModelParams(range_check_enabled=range_on))
        recalls = []
        for t in range(100, len(frames)):
            mask, _ = step(model, frames[t])
            recalls.append(mask[gt[t] == GT.FOREGROUND].mean())
        cells = " ".join(f"{r:.2f}" for r in recalls)
        print(f"range check {'on ' if range_on else 'off'}: recall per frame from onset: {cells}")


if __name__ == "__main__":
    main()
