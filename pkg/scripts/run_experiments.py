"""Run the experiment suite through the command-line front end.

Each run writes results.csv and manifest.json under OUT/<name>/. Pass
names to run a subset, e.g. ``python scripts/run_experiments.py capacity
entropy``.
"""
import argparse
import os
import sys
import time

from tiltlace.cli import main

HERE = os.path.dirname(os.path.abspath(__file__))
CONF = os.path.join(HERE, "configs")

# name -> (command, config file, extra flags)
RUNS = {
    "green": ("green", None, []),
    "capacity": ("capacity", None, []),
    "entropy": ("entropy", "annulus.ini", []),
    "dirichlet-scan": ("dirichlet-scan", "annulus.ini", []),
    "tilt-build": ("tilt-build", "tiny.ini", []),
    "sample": ("sample", "tiny.ini", []),
    "disconnect-direct": ("disconnect-direct", "tiny.ini", []),
    "disconnect-is": ("disconnect-is", "tiny.ini", []),
    "alpha-beta": ("alpha-beta", "domination.ini", []),
    "domination": ("domination", "domination.ini", []),
    "coupling-check": ("coupling-check", "coupling.ini", []),
    "disconnect-tilted": ("disconnect-tilted", "trend.ini", []),
}


def run_one(name: str, out: str, threads: int) -> int:
    cmd, conf, extra = RUNS[name]
    argv = [cmd, "--out", os.path.join(out, name), "--threads", str(threads)] + extra
    if conf is not None:
        argv += ["--config", os.path.join(CONF, conf)]
    t = time.time()
    code = main(argv)
    print(f"[{name}] exit {code} in {time.time() - t:.1f} s", flush=True)
    return code


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("names", nargs="*", default=list(RUNS), help=f"subset of: {', '.join(RUNS)}")
    ap.add_argument("--out", default="out")
    ap.add_argument("--threads", type=int, default=1)
    a = ap.parse_args()
    unknown = [n for n in a.names if n not in RUNS]
    if unknown:
        ap.error(f"unknown runs: {', '.join(unknown)}")
    codes = [run_one(n, a.out, a.threads) for n in a.names]
    # 3 marks a violated run invariant (e.g. a finite-N margin), 2 an invalid config
    sys.exit(max(codes))
