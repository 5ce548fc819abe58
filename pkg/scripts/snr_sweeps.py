"""Monte Carlo single-shot SNR against the opaque-object law, both sweep strategies."""

import argparse

from qsi.experiments import SweepSettings, default_gain_grid, snr_sweep_area, snr_sweep_gain
from qsi.io import write_report


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--clusters", type=int, default=600)
    ap.add_argument("--replicates", type=int, default=3)
    ap.add_argument("--seed", type=int, default=11)
    ap.add_argument("--out", default="snr_sweeps.csv")
    args = ap.parse_args()

    cfg = SweepSettings(clusters=args.clusters, replicates=args.replicates, seed=args.seed)
    rows = snr_sweep_gain(default_gain_grid(), 6, cfg) + snr_sweep_area(cfg=cfg)
    write_report(rows, args.out)
    print(f"{'strategy':8s} {'R':>2s} {'n':>7s} {'sim':>7s} {'se':>6s} {'theory':>7s} {'rel':>7s}")
    for r in rows:
        print(f"{r['strategy']:8s} {r['bin_radius']:2d} {r['n_mean']:7.4f} {r['snr_sim']:7.4f} "
              f"{r['snr_se']:6.4f} {r['snr_theory']:7.4f} {r['rel_err']:+7.3f}")
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
