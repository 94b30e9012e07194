"""Show a scalar free-energy unit settling onto its closed-form fixed point."""

import argparse

from predcode import free_energy as fe


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--u", type=float, default=2.0)
    ap.add_argument("--dt", type=float, default=0.01)
    ap.add_argument("--steps", type=int, default=2000)
    args = ap.parse_args()
    s = fe.ScalarFE(phi=0.0, e_p=0.0, e_u=0.0, v_p=3.0, sigma_p2=1.0, sigma_u2=1.0, theta=2.0, u=args.u)
    target = fe.phi_star(s.v_p, s.sigma_p2, s.u, s.sigma_u2, s.theta)
    for step in range(args.steps + 1):
        if step % (args.steps // 10 or 1) == 0:
            print(f"step {step:>5}  phi={s.phi:.6f}  F={fe.free_energy(s):.6f}")
        s = fe.scalar_step(s, args.dt)
    print(f"closed form phi* = {target:.6f}")


if __name__ == "__main__":
    main()
