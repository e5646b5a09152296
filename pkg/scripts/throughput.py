"""Frames per second of step() and detect() at a given size and thread count.

    python scripts/throughput.py --width 320 --height 240 --k 20 --threads 1
"""
import argparse
import time

import numba
import numpy as np

from cp3 import BackgroundModel, ModelParams, detect, step
from cp3.trainer import pair_statistics


def random_model(h, w, c, k, rng, frames):
    vv, uu = np.mgrid[0:h, 0:w]
    offs = rng.integers(1, 40, (h, w, k, 2)) * rng.choice([-1, 1], (h, w, k, 2))
    sup = np.stack([(uu[..., None] + offs[..., 0]) % w, (vv[..., None] + offs[..., 1]) % h], axis=-1)
    same = (sup[..., 0] == uu[..., None]) & (sup[..., 1] == vv[..., None])
    sup[..., 0][same] = (sup[..., 0][same] + 1) % w
    delta, sigma = pair_statistics(frames, sup.astype(np.int32), 1e-3)
    return BackgroundModel.from_pairs(ModelParams(k_supports=k), sup, delta, sigma,
                                      frames.min(0), frames.max(0))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--width", type=int, default=320)
    ap.add_argument("--height", type=int, default=240)
    ap.add_argument("--channels", type=int, default=3, choices=(1, 3))
    ap.add_argument("--k", type=int, default=20)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--frames", type=int, default=50)
    args = ap.parse_args()

    numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
    rng = np.random.default_rng(0)
    frames = rng.uniform(0, 255, (12, args.height, args.width, args.channels))
    model = random_model(args.height, args.width, args.channels, args.k, rng, frames[:8])
    step(model, frames[8])
    detect(model, frames[9])

    t0 = time.perf_counter()
    for i in range(args.frames):
        step(model, frames[8 + i % 4])
    step_fps = args.frames / (time.perf_counter() - t0)
    t0 = time.perf_counter()
    for i in range(args.frames):
        detect(model, frames[8 + i % 4])
    detect_fps = args.frames / (time.perf_counter() - t0)
    print(f"{args.width}x{args.height}x{args.channels} K={args.k} threads={numba.get_num_threads()}: "
          f"step {step_fps:.1f} fps, detect {detect_fps:.1f} fps")


if __name__ == "__main__":
    main()
