"""Print sqrt(d) * tau(delta) for both cap models over a range of dimensions."""
import argparse
import math

from qclab.geometry import cap_threshold, normal_upper_quantile


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--delta", type=float, default=0.01)
    ap.add_argument("--dims", type=int, nargs="+", default=[10, 20, 50, 100, 200, 500, 1000, 2000, 10000])
    args = ap.parse_args()
    print(f"normal upper quantile: {normal_upper_quantile(args.delta):.10f}")
    print(f"{'d':>7} {'tau':>14} {'sqrt(d)*tau':>14} {'gaussian':>14}")
    for d in args.dims:
        tau = cap_threshold(args.delta, d)
        g = cap_threshold(args.delta, d, model="gaussian")
        print(f"{d:>7} {tau:>14.10f} {math.sqrt(d) * tau:>14.10f} {math.sqrt(d) * g:>14.10f}")


if __name__ == "__main__":
    main()
