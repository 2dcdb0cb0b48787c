#!/usr/bin/env python3
"""Train (or load from cache) every run used by the directional acceptance tests.

    python scripts/run_experiments.py                 # everything, in order
    python scripts/run_experiments.py --only convergence/epqm_efsa
"""

import argparse
import logging
import time

from dptext.training.experiments import all_runs, default_cache


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--only", nargs="*", default=[], help="name prefixes to run")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    print(f"cache: {default_cache()}", flush=True)
    for name, job in all_runs():
        if args.only and not any(name.startswith(p) for p in args.only):
            continue
        start = time.perf_counter()
        rec = job()
        f = " ".join(f"{k}={v:.3f}" for k, v in rec.split_f.items())
        print(f"{name:<32} {rec.key}  {f}  ({time.perf_counter() - start:.0f}s)", flush=True)


if __name__ == "__main__":
    main()
