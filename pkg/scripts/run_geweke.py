"""Geweke joint-distribution test and the two-taxon exact check.

    python scripts/run_geweke.py --sweeps 50000
"""

import argparse

from funczidm.geweke import geweke, small_instance


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sweeps", type=int, default=50_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--small-sweeps", type=int, default=200_000)
    args = ap.parse_args()

    res = geweke(n_sweeps=args.sweeps, seed=args.seed)
    print(res.table())
    print(f"max |z| = {res.max_abs_z():.2f}   runtime {res.runtime:.0f} s")
    for name, rate in res.acceptance.items():
        print(f"  acceptance {name}: {rate:.3f}")

    print("\ntwo taxa, one visit")
    for z in [(1, 0), (2, 0), (3, 0), (4, 0), (2, 1), (1, 3), (2, 2)]:
        r = small_instance(z=z, n_sweeps=args.small_sweeps, seed=args.seed)
        ze, zp = r.z()
        print(f"z={z}: P(eta2=0) {r.p_structural:.4f} vs {r.p_structural_exact:.4f} (z {ze:+.2f});"
              f" E[psi1] {r.psi1:.4f} vs {r.psi1_exact:.4f} (z {zp:+.2f})")


if __name__ == "__main__":
    main()
