"""Desk-scale training run on the synthetic corpus, followed by held-out evaluation.

    python scripts/desk_run.py --mode full --out runs/full
    python scripts/desk_run.py --mode half --out runs/half

Writes the usual output tree plus ``eval/summary.json`` with the
learning-signal numbers (early/late eye reconstruction, held-out FIDs).
A stored summary whose fingerprint matches the current code is reused.
"""
import argparse
import json
import logging
import time

from eyeswap.experiments import cached_desk_protocol


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--mode", default="full")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--corpus", default="runs/synth_n300_s7")
    p.add_argument("--out", required=True)
    p.add_argument("--fresh", action="store_true", help="ignore a stored summary with a matching fingerprint")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    t0 = time.time()
    summary = cached_desk_protocol(args.out, mode=args.mode, steps=args.steps, seed=args.seed,
                                   corpus_dir=args.corpus, fresh=args.fresh)
    print(json.dumps(summary, indent=1))
    print(f"wall seconds: {time.time() - t0:.0f}")


if __name__ == "__main__":
    main()
