"""Risk and adversarial-risk estimators, success events and bound calculators.

Adversarial risk at budget eps is measured with label-preserving moves:
x counts as vulnerable when some x' within the allowed distance has the
same true label as x but is misclassified, i.e. x lies within reach of the
error set E(f) without crossing the true decision boundary.  On both tasks
this matches "exists gamma, f(x + gamma) != h(x)" whenever eps is smaller
than the distance from the support to the true boundary.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np

from .adversaries import MixturePerturbation, Perturbation
from .classifiers import (
    CapErrorSet,
    ClassifierOracle,
    ConfigurationError,
    EmptySet,
    ImplantedErrorClassifier,
    LinearSeparator,
    OneNNClassifier,
)
from .geometry import sample_uniform_sphere
from .intervals import (
    IntervalsAR,
    OneNNWhitebox,
    ParabolaGeometry,
    grid_reach,
    solve_alpha_star,
    two_intervals_ar_exact,
)
from .tasks import DECISION_RADIUS, OUTER_RADIUS, ConcentricSpheresTask, Estimate, TwoIntervalsTask

__all__ = [
    "ParabolaGeometry",
    "solve_alpha_star",
    "two_intervals_ar_exact",
    "grid_reach",
    "IntervalsAR",
    "estimate_risk",
    "estimate_ar_of_perturbation",
    "estimate_preimage_mass",
    "estimate_ar_opt",
    "success_event",
    "theorem1_lower_bound",
    "estimate_consistency_prob",
    "estimate_consistency_family",
    "theorem3_bound",
    "bestepsilon_quantity",
    "max_displacement_excess",
    "LOWER_BOUND_ONLY",
]

LOWER_BOUND_ONLY = "LOWER-BOUND-ONLY"


def _rule(f):
    return f.rule if isinstance(f, ClassifierOracle) else f


def _points(task, n: int | None, rng, X):
    if X is not None:
        return np.asarray(X, dtype=float)
    if n is None or n < 1:
        raise ValueError("n must be >= 1")
    return task.sample_support(n, rng)


def estimate_risk(f, task, n: int | None = None, rng: np.random.Generator | None = None,
                  X: np.ndarray | None = None) -> Estimate:
    """P[f(X) != h(X)]; pass ``X`` to reuse a fixed set of evaluation points."""
    X = _points(task, n, rng, X)
    return Estimate.from_hits(np.asarray(_rule(f)(X)) != task.ground_truth(X))


def estimate_ar_of_perturbation(f, p: Perturbation, task, n: int | None = None,
                                rng: np.random.Generator | None = None, X: np.ndarray | None = None) -> Estimate:
    """P[f(p(X)) != h(X)].  Mixtures pick a component per sample."""
    X = _points(task, n, rng, X)
    moved = p(X, rng)
    return Estimate.from_hits(np.asarray(_rule(f)(moved)) != task.ground_truth(X))


def estimate_preimage_mass(f, p: Perturbation, task, n: int | None = None,
                           rng: np.random.Generator | None = None, X: np.ndarray | None = None,
                           mixture_mode: str = "sample") -> Estimate:
    """mu(p^{-1}(E(f))) = P[f(p(X)) != h(p(X))].

    For a mixture, ``mixture_mode="sample"`` draws a component per point;
    ``"average"`` averages the exact per-component masses on the same points.
    """
    X = _points(task, n, rng, X)
    rule = _rule(f)
    if isinstance(p, MixturePerturbation) and mixture_mode == "average":
        vals = []
        for comp in p.components:
            moved = comp(X, rng)
            vals.append(np.asarray(rule(moved)) != task.ground_truth(moved))
        hits = np.mean(vals, axis=0)
        mean = float(hits.mean())
        return Estimate(mean, float(hits.std(ddof=1) / math.sqrt(len(hits))) if len(hits) > 1 else 0.0, len(hits))
    moved = p(X, rng)
    return Estimate.from_hits(np.asarray(rule(moved)) != task.ground_truth(moved))


# ---------------------------------------------------------------------------
# optimal adversarial risk


def _cap_vulnerable(E: CapErrorSet, X: np.ndarray, eps: float) -> np.ndarray:
    # the straight move to the cap stays inside its shell iff 1 + tau^2 <= 1.15^2
    if 1.0 + E.tau**2 > DECISION_RADIUS**2:
        raise ConfigurationError("exact cap reachability needs tau <= sqrt(1.15^2 - 1)")
    r = np.linalg.norm(X, axis=1)
    inner = r <= DECISION_RADIUS
    dots = X @ E.axes.T
    thr = np.where(E.signs[None, :] < 0, E.tau, OUTER_RADIUS * E.tau)
    same_shell = np.where(inner[:, None], E.signs[None, :] < 0, E.signs[None, :] > 0)
    deficit = np.where(same_shell, thr - dots, np.inf).min(axis=1)
    return (deficit <= eps * r) | E.contains(X)


def _random_direction_vulnerable(rule, task, X, eps, rng, directions: int, radii: int) -> np.ndarray:
    h = task.ground_truth(X)
    hit = np.asarray(rule(X)) != h
    ts = eps * np.arange(1, radii + 1) / radii
    for _ in range(directions):
        u = sample_uniform_sphere(X.shape[1], 1.0, rng, X.shape[0])
        for t in ts:
            y = X + t * u
            hit |= (np.asarray(rule(y)) != h) & (task.ground_truth(y) == h)
    return hit


def estimate_ar_opt(f, task, eps: float, n: int | None = None, rng: np.random.Generator | None = None,
                    X: np.ndarray | None = None, fallback: bool = False, directions: int = 64,
                    radii: int = 8, n_angles: int = 721) -> Estimate:
    """Estimate of AR(f, eps), the mass of label-preserving eps-reachable errors.

    Exact reachability is used for implanted cap error sets (scaled eps on
    the outer sphere), 1-NN on the two-intervals task (eps-circle scan) and
    linear separators (perpendicular distance).  Other pairs need
    ``fallback=True`` and return a random-direction search flagged
    ``LOWER-BOUND-ONLY``.
    """
    X = _points(task, n, rng, X)
    rule = _rule(f)
    h = task.ground_truth(X)
    if eps == 0:
        return Estimate.from_hits(np.asarray(rule(X)) != h)
    if isinstance(task, ConcentricSpheresTask) and isinstance(rule, ImplantedErrorClassifier):
        E = rule.error_set
        if isinstance(E, CapErrorSet):
            return Estimate.from_hits(_cap_vulnerable(E, X, eps))
        if isinstance(E, EmptySet):
            return Estimate.from_hits(np.zeros(len(X), dtype=bool))
    if isinstance(task, TwoIntervalsTask) and isinstance(rule, OneNNClassifier):
        p = OneNNWhitebox(rule, task, eps, n_angles=n_angles)
        moved = p(X)
        return Estimate.from_hits((np.asarray(rule(moved)) != h) | (np.asarray(rule(X)) != h))
    if isinstance(task, TwoIntervalsTask) and isinstance(rule, LinearSeparator) and eps < task.z / 2:
        s = rule.decision(X)
        across = np.where(h < 0, -s, s)
        return Estimate.from_hits((np.asarray(rule(X)) != h) | (across <= eps))
    if not fallback:
        raise ConfigurationError(f"no exact AR oracle for {type(rule).__name__} on {type(task).__name__}")
    if rng is None:
        raise ValueError("the random-direction fallback needs a generator")
    return Estimate.from_hits(_random_direction_vulnerable(rule, task, X, eps, rng, directions, radii),
                              LOWER_BOUND_ONLY)


# ---------------------------------------------------------------------------
# success and bounds


def success_event(ar_p, ar_opt, alpha: float, conservative: bool = False) -> bool:
    """AR(f, p) >= alpha * AR(f, eps).

    The conservative form needs ar_p - 2 sd >= alpha (ar_opt + 2 sd) and
    requires ``Estimate`` inputs.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if conservative:
        return ar_p.value - 2 * ar_p.stderr >= alpha * (ar_opt.value + 2 * ar_opt.stderr)
    return float(ar_p) >= alpha * float(ar_opt)


def theorem1_lower_bound(consistency_prob: float, kappa: float) -> float:
    """log2((1 - kappa) / P), in bits.  P = 0 gives +inf.

    When P comes from a finite family of perturbations the result is a
    bound given that family: a larger family can only lower it.
    """
    if not 0.0 <= kappa <= 1.0:
        raise ValueError("kappa must lie in [0, 1]")
    if not 0.0 <= consistency_prob <= 1.0:
        raise ValueError("consistency probability must lie in [0, 1]")
    if consistency_prob == 0.0:
        return math.inf
    return math.log2((1.0 - kappa) / consistency_prob)


def theorem3_bound(eta: float, C: float, delta: float) -> float:
    """log2(eta / (3 C delta)), clipped at 0."""
    if eta <= 0 or C <= 0 or delta <= 0:
        raise ValueError("eta, C and delta must be positive")
    return max(0.0, math.log2(eta / (3.0 * C * delta)))


def bestepsilon_quantity(eta: float, delta: float, d: int) -> float:
    """ln(eta / delta) / d, the scale of the largest useful perturbation."""
    if not eta >= delta > 0:
        raise ValueError("need eta >= delta > 0")
    if d < 1:
        raise ValueError("d must be >= 1")
    return math.log(eta / delta) / d


def estimate_consistency_family(family: Sequence, task, train: Callable[[np.random.Generator], tuple],
                                trials: int, rng: np.random.Generator, eps: float,
                                n_eval: int | None = None, X: np.ndarray | None = None,
                                ar_opt: Callable | None = None) -> np.ndarray:
    """Per-member fraction of trials with mu(p^{-1}(E(f))) >= AR(f, eps) / 2.

    ``train(rng)`` returns ``(f, S)`` for a fresh training run.  Family
    members are perturbations, or callables ``(f, S) -> perturbation`` for
    responses that depend on the trained classifier.  Deterministic
    perturbations are evaluated once on the shared points ``X``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if X is None:
        X = task.sample_support(n_eval, rng)
    h = task.ground_truth(X)
    fixed = {}
    for i, p in enumerate(family):
        if isinstance(p, Perturbation) and p.kind == "deterministic":
            fixed[i] = p(X)
    wins = np.zeros(len(family))
    for _ in range(trials):
        f, S = train(rng)
        rule = _rule(f)
        base = np.asarray(rule(X)) != h
        opt = ar_opt(f, S, X) if ar_opt is not None else estimate_ar_opt(f, task, eps, X=X)
        for i, p in enumerate(family):
            if i in fixed:
                moved = fixed[i]
            else:
                pp = p(f, S) if not isinstance(p, Perturbation) else p
                moved = pp(X, rng)
            changed = np.any(moved != X, axis=1)
            hits = base.copy()
            if changed.any():
                mv = moved[changed]
                hits[changed] = np.asarray(rule(mv)) != task.ground_truth(mv)
            if hits.mean() >= 0.5 * float(opt):
                wins[i] += 1
    return wins / trials


def estimate_consistency_prob(p, task, train: Callable, trials: int, rng: np.random.Generator, eps: float,
                              n_eval: int | None = None, X: np.ndarray | None = None) -> float:
    return float(estimate_consistency_family([p], task, train, trials, rng, eps, n_eval, X)[0])


def max_displacement_excess(p: Perturbation, X: np.ndarray, rng: np.random.Generator | None = None) -> float:
    """max over rows of |p(x) - x| - bound(x); <= 0 means certified on X."""
    moved = p(X, rng)
    return float(np.max(np.linalg.norm(moved - X, axis=1) - p.bound(X)))
