"""Where the JGP loses to the pooled GP on the biased-LAI benchmark.

For each seed, prints the selected simulation weight, the RMSE of every
scheme and the JGP RMSE obtained when the weight selection is relaxed by a
log-LOO tolerance (the largest weight within ``tol`` of the best is taken).

    python3 scripts/jgp_weight_diagnostics.py [--seeds 20] [--tol 0 1 3]
"""

import argparse

import numpy as np

from physaware.core import RngStream
from physaware.jgp import jgp_benchmark, jgp_fit, jgp_predict, rmse
from physaware.synth import make_biased_lai_dataset


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--tol", type=float, nargs="+", default=[0.0, 1.0, 3.0])
    args = ap.parse_args()
    base, joint = [], {t: [] for t in args.tol}
    for s in range(args.seeds):
        st = RngStream(args.seed, s)
        real, sim, test = make_biased_lai_dataset(st.child(0), 20, 200, target_noise=0.5)
        base.append(jgp_benchmark(real, sim, test, 600, st.child(1)))
        row = []
        for t in args.tol:
            # same stream as the benchmark's joint fit, so tol=0 reproduces it
            m = jgp_fit(real, sim, 600, st.child(1).child(3), loo_tolerance=t)
            e = rmse(jgp_predict(m, test.inputs)[0], test.targets)
            joint[t].append(e)
            row.append(f"tol={t:g}: w={m.fidelity_w:.3g} JGP={e:.3f}")
        b = base[-1]
        print(f"seed {s:2d}  GP_R={b['GP_R']:.3f} GP_R+S={b['GP_R+S']:.3f}  " + "  ".join(row))
    means = {k: np.mean([b[k] for b in base]) for k in ("GP_R", "GP_S", "GP_R+S")}
    print("  ".join(f"{k}={v:.4f}" for k, v in means.items()))
    for t, errs in joint.items():
        print(f"tol={t:g}: JGP={np.mean(errs):.4f}  JGP/GP_R+S={np.mean(errs) / means['GP_R+S']:.4f}")


if __name__ == "__main__":
    main()
