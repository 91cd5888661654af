"""End-to-end demo: synthesize a scene, track it, score it, pretrain on it.

Writes every stage artifact under --out and prints a short report.  With no
--config the bundled default scene is used, so the whole thing runs in a
few seconds on a laptop.

    python scripts/run_demo.py --out /tmp/demo --steps 40
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from cohere.cli import main as cli_main


def run(argv):
    code = cli_main(argv)
    if code != 0:
        raise SystemExit(code)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="demo_out", help="output directory")
    ap.add_argument("--config", default=None, help="pipeline config JSON")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=40,
                    help="pretraining steps to run on the tracked scene")
    ap.add_argument("--threads", type=int, default=1)
    args = ap.parse_args()

    out = Path(args.out)
    common = ["--seed", str(args.seed)]
    if args.config:
        common += ["--config", args.config]

    t0 = time.time()
    run(["synth-gen", "--out", str(out / "scene"), *common])
    run(["track", "--input", str(out / "scene"), "--out", str(out / "track"),
         "--threads", str(args.threads), *common])
    run(["eval", "--pred", str(out / "track" / "tracks.jsonl"),
         "--gt", str(out / "scene" / "gt.json"),
         "--out", str(out / "eval"), *common])
    run(["pretrain-sim", "--steps", str(args.steps),
         "--out", str(out / "pretrain"), *common])
    print(f"demo finished in {time.time() - t0:.1f}s; "
          f"see {out}/eval/metrics.json and {out}/pretrain/loss.csv")


if __name__ == "__main__":
    main()
