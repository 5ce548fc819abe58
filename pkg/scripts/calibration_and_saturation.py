"""Photons-per-pixel calibration and multimode saturation.

Part one fits V against disk area on a flat 6.2e-3 photon/pixel stack.
Part two scans a five-mode source out to radius 30 and shows the plateau
at 1 + 2 n_tot / 5.
"""

import argparse

from qsi import scenes
from qsi.experiments import calibration_run
from qsi.io import write_report
from qsi.statistics import multimode_variance


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--clusters", type=int, default=11550)
    ap.add_argument("--out", default="calibration_and_saturation.csv")
    args = ap.parse_args()

    cal, _, _ = calibration_run(scenes.flat_scene(24, 6.2e-3), args.clusters, range(11), seed=0)
    print(f"flat stack: slope {cal.slope:.5f} +- {cal.slope_ci:.5f} (expect 0.0124), "
          f"intercept {cal.intercept:.4f} +- {cal.intercept_ci:.4f}, n_pxl {cal.n_pxl:.5f}")

    mm = scenes.multimode_scene(j=5, n_total=10, size=64, waist_px=12)
    cal5, scan, flag = calibration_run(mm, 4000, range(11), seed=5, max_radius=30)
    print(f"five modes: slope {cal5.slope:.5f} +- {cal5.slope_ci:.5f}, saturated {flag}, "
          f"plateau {scan[-1][1]:.3f} (expect {multimode_variance(10, 5):.3f}), "
          f"j estimate {cal5.saturation_j_estimate}")

    rows = [{"source": "flat", "area": a, "v": v, "v_fit": cal.predict(a)}
            for a, v in zip(cal.areas_used, cal.variances)]
    rows += [{"source": "five-mode", "area": a, "v": v, "v_fit": cal5.predict(a)} for a, v in scan]
    write_report(rows, args.out)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
