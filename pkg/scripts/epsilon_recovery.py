"""Epsilon selection on constructed 12-D sets: 3 tight clusters plus uniform outliers.

Usage: python scripts/epsilon_recovery.py --seeds 20 [--outliers 0.4]
"""

import argparse

from oscmine.cluster import epsilon_range, select_epsilon
from oscmine.experiments import planted_agreement, planted_cluster_set


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--seeds", type=int, default=20)
    parser.add_argument("--outliers", type=float, default=0.4)
    args = parser.parse_args()
    ok = 0
    for seed in range(args.seeds):
        E, planted = planted_cluster_set(seed, outlier_frac=args.outliers)
        rng = epsilon_range(E)
        eps, res = select_epsilon(E)
        agree = planted_agreement(res.labels, planted)
        ok += res.n_hom == 3 and agree >= 0.95
        print(f"seed {seed:2d}: range [{rng.eps_min:.3f}, {rng.eps_max:.3f}] eps={eps:.3f} "
              f"N_hom={res.n_hom} |C|={res.n_clusters} agreement={agree:.3f}")
    print(f"{ok}/{args.seeds} seeds with N_hom = 3 and agreement >= 0.95")


if __name__ == "__main__":
    main()
