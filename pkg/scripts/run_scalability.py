"""Metric and runtime change from J=50 to J=250 taxa (one seed each).

    python scripts/run_scalability.py --J 50 250
"""

import argparse

from funczidm.experiments import run_replication
from funczidm.sampler import SamplerConfig


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--J", type=int, nargs="+", default=[50, 250])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--iters", type=int, default=15_000)
    ap.add_argument("--burnin", type=int, default=5_000)
    ap.add_argument("--thin", type=int, default=10)
    args = ap.parse_args()
    config = SamplerConfig.desk(iterations=args.iters, burn_in=args.burnin, thin=args.thin)
    base = None
    for J in args.J:
        rep = run_replication(J, args.seed, P=5, N=50, config=config)
        base = base or rep
        print(f"J={J:>4} runtime {rep.runtime / 60:6.1f} min  "
              f"active ARMSE {rep.row['active_ARMSE']:.4f}  active RA95 {rep.row['active_RA95']:.4f}  "
              f"runtime ratio {rep.runtime / base.runtime:.2f}")


if __name__ == "__main__":
    main()
