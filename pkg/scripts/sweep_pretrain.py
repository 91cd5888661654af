"""Pretraining diagnostics: gradient checks plus a seed/temperature sweep.

First verifies the analytic loss gradient against central finite
differences, then runs the simulated pretraining loop over a small grid of
seeds and temperatures and reports how far the loss fell.  Results land in
a CSV for plotting.

    python scripts/sweep_pretrain.py --steps 100 --seeds 3 --out sweep.csv
"""

import argparse
import dataclasses
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

import numpy as np

from cohere.learn import PretrainConfig
from cohere.pretrain import (default_sim_spec, run_gradient_checks,
                             run_pretrain_sim)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--steps", type=int, default=100)
    ap.add_argument("--seeds", type=int, default=3, help="seeds 0..N-1")
    ap.add_argument("--temperatures", type=float, nargs="+",
                    default=[0.05, 0.1, 0.2])
    ap.add_argument("--trials", type=int, default=20,
                    help="gradient-check trials before the sweep")
    ap.add_argument("--out", default="sweep.csv")
    args = ap.parse_args()

    checks = run_gradient_checks(seed=0, trials=args.trials)
    worst = max(c.max_rel_error for c in checks)
    print(f"gradient check: {args.trials} trials, worst relative error "
          f"{worst:.3e} ({'ok' if all(c.passed for c in checks) else 'FAIL'})")
    if not all(c.passed for c in checks):
        raise SystemExit(1)

    rows = ["seed,temperature,loss_first,loss_last,drop,seconds"]
    for seed in range(args.seeds):
        for tau in args.temperatures:
            config = dataclasses.replace(PretrainConfig(), temperature=tau)
            t0 = time.time()
            res = run_pretrain_sim(default_sim_spec(seed), steps=args.steps,
                                   seed=seed, config=config)
            losses = res.losses
            assert np.isfinite(losses).all()
            drop = losses[0] - losses[-1]
            rows.append(f"{seed},{tau},{losses[0]!r},{losses[-1]!r},"
                        f"{drop!r},{time.time() - t0:.2f}")
            print(f"seed {seed} tau {tau:.2f}: loss {losses[0]:.4f} -> "
                  f"{losses[-1]:.4f} (drop {drop:+.4f})")

    Path(args.out).write_text("\n".join(rows) + "\n", encoding="utf-8")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
