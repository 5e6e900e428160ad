"""Regenerate the frozen reference point for a PointWalker configuration.

The convention: evaluate 10,000 random genotypes (seed 0) and take the
per-objective minima, floored to three decimals. Paste the result into the
config's [metrics] reference_point.
"""

import argparse

import numpy as np

from moqd.envs import PointWalker


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--episode-length", type=int, default=20)
    parser.add_argument("--energy-weight", type=float, default=0.05)
    parser.add_argument("--hidden", type=int, nargs="+", default=[64, 64])
    parser.add_argument("--samples", type=int, default=10_000)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    env = PointWalker(
        episode_length=args.episode_length,
        energy_weight=args.energy_weight,
        policy_hidden=tuple(args.hidden),
    )
    rng = np.random.default_rng(args.seed)
    scores = np.array(
        [env.rollout(env.random_genotype(rng)).scores for _ in range(args.samples)]
    )
    mins = np.floor(scores.min(axis=0) * 1000) / 1000
    print(f"observed minima over {args.samples} random genotypes: {scores.min(axis=0)}")
    print(f"reference_point = [{mins[0]}, {mins[1]}]")


if __name__ == "__main__":
    main()
