"""Compare simulated envelope growth rates of the unstable mode with linear response.

Runs noise-free trajectories at several multiples of the threshold power and
prints the fitted rate next to -gamma_eff/2.

    python scripts/growth_rate_check.py [--config PATH] [--factors 0.5 1.5] [--duration-ms 10]
"""
import argparse
import warnings
from dataclasses import replace

from optomech.config import load, load_default
from optomech.model import Environment
from optomech.response import PerturbativeWarning, effective_params, instability_threshold
from optomech.simulate import growth_rate, integrate, plan_for


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config")
    ap.add_argument("--mode", default="crown4")
    ap.add_argument("--factors", type=float, nargs="+", default=[0.5, 0.7, 0.9, 1.1, 1.5])
    ap.add_argument("--duration-ms", type=float, default=10.0)
    args = ap.parse_args()
    warnings.simplefilter("ignore", PerturbativeWarning)

    cfg = (load(args.config) if args.config else load_default()).system
    cfg = replace(cfg.with_feedback(enabled=False), environment=Environment(0.0))
    th = instability_threshold(cfg, args.mode).power
    print(f"threshold {th * 1e6:.3f} uW")
    print(f"{'P/P_th':>7} {'simulated 1/s':>14} {'linear 1/s':>14} {'rel diff':>9}")
    for f in args.factors:
        c = cfg.with_power(f * th)
        plan = plan_for(c, args.duration_ms * 1e-3, shot_noise=False, thermal_init=False,
                        initial_offsets=((args.mode, 1e-13),))
        sim = growth_rate(integrate(c, plan), args.mode).rate
        lin = -0.5 * effective_params(c, None, 0.0, args.mode).gamma_eff
        print(f"{f:7.2f} {sim:14.6g} {lin:14.6g} {sim / lin - 1:9.1e}")


if __name__ == "__main__":
    main()
