"""Run the full desk-scale experiment suite into out/.

Usage: python scripts/reproduce_all.py [outdir]
"""
import sys
import time
from pathlib import Path

from nlcflow import cli

HERE = Path(__file__).resolve().parent.parent


def main():
    outdir = Path(sys.argv[1]) if len(sys.argv) > 1 else HERE / "out"
    jobs = [
        ("validate", HERE / "configs" / "desk.cfg", outdir / "admissibility"),
        ("validate", HERE / "configs" / "adversarial.cfg", outdir / "admissibility_adversarial"),
        ("curvature", HERE / "configs" / "desk.cfg", outdir / "curvature"),
        ("apriori", HERE / "configs" / "desk.cfg", outdir / "apriori"),
        ("flow", HERE / "configs" / "desk.cfg", outdir / "flow"),
    ]
    overall = 0
    for verb, config, out in jobs:
        t0 = time.time()
        status = cli.main([verb, "--config", str(config), "--out", str(out),
                           "--threads", "4"])
        print(f"{verb:10s} -> exit {status}  [{time.time() - t0:.0f}s]  {out}")
        overall = max(overall, status)
    return overall


if __name__ == "__main__":
    sys.exit(main())
