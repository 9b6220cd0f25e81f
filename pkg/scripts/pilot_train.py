"""Seed sweep of the toy training run; prints final train accuracy per setting.

    python3 scripts/pilot_train.py --seeds 0 1 2 3 4 --lr 3e-4 1e-3
"""
import argparse
import dataclasses
import tempfile
import time
from pathlib import Path

from msaconv import data, train


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--lr", type=float, nargs="+", default=[3e-4])
    ap.add_argument("--batch-size", type=int, default=32)
    ap.add_argument("--schedule", default="cosine")
    ap.add_argument("--periods", type=int, nargs="+", default=list(data.SYNTH_PERIODS))
    args = ap.parse_args()
    data.SYNTH_PERIODS = tuple(args.periods)
    orig = data.stripes_vs_checkers
    data.stripes_vs_checkers = lambda n, size=32, seed=0: orig(n, size, seed, periods=args.periods)
    for lr in args.lr:
        for seed in args.seeds:
            cfg = dataclasses.replace(train.RunConfig(), lr=lr, seed=seed, batch_size=args.batch_size,
                                      schedule=args.schedule, checkpoint_every=0)
            t0 = time.time()
            with tempfile.TemporaryDirectory() as d:
                res = train.train(cfg, Path(d))
            print(f"lr={lr:g} seed={seed} bs={args.batch_size} periods={args.periods} "
                  f"top1={res['train']['top1']:.3f} secs={time.time() - t0:.0f}", flush=True)


if __name__ == "__main__":
    main()
