"""Entropy lower bound on the 1-NN two-intervals setup.

Builds a family of white-box responses to independently trained 1-NN
classifiers, estimates how often each is consistent with a fresh classifier
and reports the resulting bound in bits.  The identity map is listed as a
reference row: its consistency rate is the share of draws whose natural
risk already reaches half the optimal adversarial risk.
"""
import argparse

import numpy as np

from qclab.adversaries import IdentityPerturbation
from qclab.classifiers import OneNNClassifier
from qclab.geometry import make_rng
from qclab.intervals import OneNNWhitebox
from qclab.metrics import estimate_consistency_family, theorem1_lower_bound
from qclab.tasks import TwoIntervalsTask, sample_two_intervals_poisson


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--m", type=float, default=500.0)
    ap.add_argument("--z", type=float, default=3.0)
    ap.add_argument("--family", type=int, default=20)
    ap.add_argument("--trials", type=int, default=40)
    ap.add_argument("--kappa", type=float, default=0.1)
    ap.add_argument("--n-eval", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    z, m, eps = args.z, args.m, args.z / 10
    task = TwoIntervalsTask(m, z)
    X = task.sample_support(args.n_eval, make_rng(args.seed, 0))
    family = [OneNNWhitebox(OneNNClassifier(sample_two_intervals_poisson(m, z, make_rng(args.seed, 1 + i))), task, eps)
              for i in range(args.family)]
    family.append(IdentityPerturbation(eps))

    def train(rng):
        ds = sample_two_intervals_poisson(m, z, rng)
        return OneNNClassifier(ds), ds

    probs = estimate_consistency_family(family, task, train, args.trials, make_rng(args.seed, 10_000), eps, X=X)
    sup = float(np.max(probs[:-1]))
    print(f"family consistency: min {probs[:-1].min():.3f}  max {sup:.3f}  (identity {probs[-1]:.3f})")
    print(f"bound given family: {theorem1_lower_bound(sup, args.kappa):.3f} bits")


if __name__ == "__main__":
    main()
