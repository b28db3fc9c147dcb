"""Regenerate the bundled synthetic cohort under src/omicsgraph/data/synthetic."""
import argparse
from pathlib import Path

from omicsgraph.synthetic import make_synthetic_cohort, write_synthetic_cohort

DEFAULT_OUT = Path(__file__).resolve().parents[1] / "src" / "omicsgraph" / "data" / "synthetic"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=str(DEFAULT_OUT))
    args = ap.parse_args()
    paths = write_synthetic_cohort(make_synthetic_cohort(seed=args.seed), args.out)
    for key, path in paths.items():
        print(f"{key:12s} {path}")


if __name__ == "__main__":
    main()
