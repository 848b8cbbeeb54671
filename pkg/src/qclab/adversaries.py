"""Query-bounded attacks, emulation reductions and white-box best responses.

An adversary is any callable ``adversary(oracle, rng) -> AdversaryReport``.
It may only talk to the classifier through ``oracle.query``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .classifiers import (
    CapErrorSet,
    ClassifierOracle,
    ConfigurationError,
    DECOY_OUTER_RADIUS,
    ImplantedErrorClassifier,
    LinearSeparator,
    OneNNClassifier,
    sample_cap_error,
)
from .geometry import Rotation, rotation_taking, sample_haar_rotation, sample_uniform_sphere
from .tasks import DECISION_RADIUS, INNER_RADIUS, OUTER_RADIUS, ConcentricSpheresTask, TwoIntervalsTask

__all__ = [
    "Perturbation",
    "IdentityPerturbation",
    "GeodesicPush",
    "FunctionPerturbation",
    "ConjugatedPerturbation",
    "MixturePerturbation",
    "LineCrossing",
    "AdversaryReport",
    "cap_adversary_randomized",
    "cap_adversary_deterministic",
    "emulate_iid",
    "emulate_general",
    "binary_search_line_attack",
    "probe_scan_attack",
    "whitebox_best_response",
    "sphere_swap",
]


def _rows(x):
    x = np.asarray(x, dtype=float)
    return (x[None, :], True) if x.ndim == 1 else (x, False)


# ---------------------------------------------------------------------------
# perturbations


class Perturbation:
    """Transport map with a certified displacement bound.

    ``eps`` is the certified bound at unit scale.  ``radial`` perturbations
    on the concentric-spheres task are allowed ``eps * |x|`` at ``x`` (so
    ``eps`` on the inner sphere and ``1.3 eps`` on the outer one);
    ``bound(x)`` gives the per-point allowance.
    """

    eps: float = 0.0
    radial: bool = False
    kind: str = "deterministic"

    def __call__(self, x, rng: np.random.Generator | None = None):
        rows, single = _rows(x)
        out = self.transport(rows, rng)
        return out[0] if single else out

    def transport(self, x: np.ndarray, rng) -> np.ndarray:
        raise NotImplementedError

    def bound(self, x) -> np.ndarray:
        rows, _ = _rows(x)
        if self.radial:
            return self.eps * np.linalg.norm(rows, axis=1)
        return np.full(rows.shape[0], self.eps)


class IdentityPerturbation(Perturbation):
    def __init__(self, eps: float = 0.0, radial: bool = False):
        self.eps = eps
        self.radial = radial

    def transport(self, x, rng):
        return x.copy()


class GeodesicPush(Perturbation):
    """Rotate each point on its own sphere toward ``direction``.

    The step is the chord ``eps * |x|`` (or ``eps`` when not radial), capped
    so the point never overshoots the direction itself.  This is the argmax
    of <x' - x, v> over sphere points x' within the allowed chord.  A point
    parallel to the direction has no tangential component and stays put.
    With ``outer_direction`` set, points with |x| <= ``split_radius`` use
    ``direction`` and the rest use ``outer_direction``.
    """

    def __init__(self, direction: np.ndarray, eps: float, radial: bool = True,
                 outer_direction: np.ndarray | None = None, split_radius: float = DECISION_RADIUS):
        self.direction = np.asarray(direction, dtype=float)
        self.outer_direction = None if outer_direction is None else np.asarray(outer_direction, dtype=float)
        self.eps = float(eps)
        self.radial = radial
        self.split_radius = split_radius

    def transport(self, x, rng):
        r = np.linalg.norm(x, axis=1)
        if self.outer_direction is None:
            v = np.broadcast_to(self.direction, x.shape)
        else:
            v = np.where((r <= self.split_radius)[:, None], self.direction, self.outer_direction)
        out = x.copy()
        ok = r > 0
        xh = np.zeros_like(x)
        xh[ok] = x[ok] / r[ok, None]
        along = np.einsum("ij,ij->i", v, xh)
        tang = v - along[:, None] * xh
        tn = np.linalg.norm(tang, axis=1)
        vn = np.linalg.norm(v, axis=1)
        move = ok & (tn > 1e-12 * np.maximum(vn, 1e-300))
        if not move.any():
            return out
        chord = self.eps * r if self.radial else np.full_like(r, self.eps)
        half = np.clip(chord / (2.0 * np.where(ok, r, 1.0)), 0.0, 1.0)
        theta = 2.0 * np.arcsin(half)
        to_v = np.arctan2(tn, along)
        theta = np.minimum(theta, to_v)
        th = theta[move, None]
        t_hat = tang[move] / tn[move, None]
        out[move] = r[move, None] * (np.cos(th) * xh[move] + np.sin(th) * t_hat)
        return out


class FunctionPerturbation(Perturbation):
    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], eps: float, radial: bool = False,
                 kind: str = "deterministic"):
        self.fn = fn
        self.eps = float(eps)
        self.radial = radial
        self.kind = kind

    def transport(self, x, rng):
        return np.asarray(self.fn(x), dtype=float)


class ConjugatedPerturbation(Perturbation):
    """forward^{-1} o p o forward, optionally applied only where ``mask`` holds."""

    def __init__(self, inner: Perturbation, forward: Callable, backward: Callable,
                 mask: Callable[[np.ndarray], np.ndarray] | None = None):
        self.inner = inner
        self.forward = forward
        self.backward = backward
        self.mask = mask
        self.eps = inner.eps
        self.radial = inner.radial

    def transport(self, x, rng):
        out = x.copy()
        sel = np.ones(x.shape[0], dtype=bool) if self.mask is None else np.asarray(self.mask(x), dtype=bool)
        if sel.any():
            out[sel] = self.backward(self.inner.transport(self.forward(x[sel]), rng))
        return out


class MixturePerturbation(Perturbation):
    """Uniform mixture of component transports.

    Each point independently picks one component with the caller's
    generator.  ``components`` stays available for exact averaging of
    pulled-back masses.
    """

    kind = "uniform-mixture"

    def __init__(self, components: list[Perturbation], eps: float, radial: bool = False):
        if not components:
            raise ValueError("mixture needs at least one component")
        self.components = list(components)
        self.eps = float(eps)
        self.radial = radial

    def transport(self, x, rng):
        if rng is None:
            raise ValueError("a mixture perturbation needs a generator to pick components")
        pick = rng.integers(0, len(self.components), x.shape[0])
        out = x.copy()
        for j, comp in enumerate(self.components):
            sel = pick == j
            if sel.any():
                out[sel] = comp.transport(x[sel], rng)
        return out


class LineCrossing(Perturbation):
    """Move points by ``eps`` across a line when it lies within reach.

    A point whose true label is -1 is pushed toward the +1 side of the line
    (and vice versa) if its distance to the line is at most ``eps``.
    Points already on the wrong side, or out of reach, stay put.
    """

    def __init__(self, normal: np.ndarray, offset: float, eps: float, ground_truth: Callable):
        n = np.asarray(normal, dtype=float)
        nn = np.linalg.norm(n)
        self.normal = n / nn
        self.offset = float(offset) / nn
        self.eps = float(eps)
        self.ground_truth = ground_truth

    def transport(self, x, rng):
        s = x @ self.normal + self.offset
        h = np.asarray(self.ground_truth(x))
        want_up = h < 0
        dist_across = np.where(want_up, -s, s)
        move = (dist_across >= 0) & (dist_across <= self.eps)
        step = np.where(want_up, 1.0, -1.0) * self.eps
        out = x.copy()
        out[move] += step[move, None] * self.normal
        return out


# ---------------------------------------------------------------------------
# reports


@dataclass
class AdversaryReport:
    perturbation: Perturbation
    queries_used: int
    transcript: list = field(default_factory=list)
    randomized: bool = True
    info: dict = field(default_factory=dict)

    def write_transcript(self, path: str | Path) -> None:
        with Path(path).open("w") as fh:
            for q, a in self.transcript:
                fh.write(json.dumps({"q": [float(v) for v in q], "a": int(a)}) + "\n")


def _finish(oracle: ClassifierOracle, start: int, start_len: int, pert: Perturbation,
            randomized: bool, **info) -> AdversaryReport:
    return AdversaryReport(pert, oracle.query_count - start, list(oracle.transcript[start_len:]),
                           randomized, info)


# ---------------------------------------------------------------------------
# cap adversaries


def _cap_attack(oracle, q_minus: np.ndarray, q_plus: np.ndarray, eps: float, split_spheres: bool):
    answers = np.asarray(oracle.query(np.vstack([q_minus, q_plus])), dtype=int)
    a_minus, a_plus = answers[: len(q_minus)], answers[len(q_minus):]
    hit_minus = q_minus[a_minus == 1]
    hit_plus = q_plus[a_plus == -1]
    n_hits = len(hit_minus) + len(hit_plus)
    if n_hits == 0:
        return IdentityPerturbation(eps, radial=True), n_hits
    if split_spheres:
        d = q_minus.shape[1]
        v_in = hit_minus.mean(axis=0) if len(hit_minus) else np.zeros(d)
        v_out = hit_plus.mean(axis=0) if len(hit_plus) else np.zeros(d)
        return GeodesicPush(v_in, eps, outer_direction=v_out), n_hits
    v = np.vstack([hit_minus, hit_plus]).mean(axis=0)
    return GeodesicPush(v, eps), n_hits


def cap_adversary_randomized(oracle, s: int, eps: float, rng: np.random.Generator,
                             split_spheres: bool = False) -> AdversaryReport:
    """Query s random points on each sphere and push toward the misclassified mean.

    With ``split_spheres`` the inner and outer spheres each get the mean of
    their own misclassified queries as push direction.
    """
    if s < 1:
        raise ValueError("s must be >= 1")
    d = oracle.dim
    q_minus = sample_uniform_sphere(d, INNER_RADIUS, rng, s)
    q_plus = sample_uniform_sphere(d, OUTER_RADIUS, rng, s)
    start, start_len = oracle.query_count, len(oracle.transcript)
    pert, hits = _cap_attack(oracle, q_minus, q_plus, eps, split_spheres)
    return _finish(oracle, start, start_len, pert, True, hits=hits)


def cap_adversary_deterministic(oracle, q_minus: np.ndarray, q_plus: np.ndarray, eps: float,
                                split_spheres: bool = False) -> AdversaryReport:
    """Same rule on fixed query sets; no randomness at all."""
    q_minus = np.asarray(q_minus, dtype=float)
    q_plus = np.asarray(q_plus, dtype=float)
    if len(q_minus) == 0 or len(q_plus) == 0:
        raise ValueError("query sets must be non-empty")
    start, start_len = oracle.query_count, len(oracle.transcript)
    pert, hits = _cap_attack(oracle, q_minus, q_plus, eps, split_spheres)
    return _finish(oracle, start, start_len, pert, False, hits=hits)


# ---------------------------------------------------------------------------
# emulation reductions


class _SimulatedOracle:
    """What the inner adversary talks to during an emulation."""

    def __init__(self, dim: int, answer: Callable[[np.ndarray], np.ndarray]):
        self.dim = dim
        self._answer = answer
        self.query_count = 0
        self.transcript: list = []

    def query(self, x):
        rows, single = _rows(x)
        ans = np.asarray(self._answer(rows), dtype=np.int8)
        self.query_count += rows.shape[0]
        self.transcript.extend((rows[i].copy(), int(ans[i])) for i in range(rows.shape[0]))
        return int(ans[0]) if single else ans

    def classify(self, x):
        return int(self.query(np.asarray(x, dtype=float).reshape(-1)))


def _flipped_truth(x: np.ndarray) -> np.ndarray:
    return np.where(np.linalg.norm(x, axis=1) <= DECISION_RADIUS, 1, -1)


def emulate_iid(oracle, inner: Callable, delta: float, k: int, rng: np.random.Generator,
                outer_radius: float = DECOY_OUTER_RADIUS) -> AdversaryReport:
    """Turn an adversary for k i.i.d. caps into one for a single delta/k cap.

    Plants k-1 decoy components, answers inner queries that land in a decoy
    with the flipped ground truth, and forwards every query to the real
    oracle.  ``info["free_queries"]`` counts the decoy-resolved ones.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    d = oracle.dim
    decoys = None
    if k > 1:
        # k-1 components, each a delta/k cap
        decoys = sample_cap_error(delta * (k - 1) / k, k - 1, d, rng, outer_radius=outer_radius)
    free = 0

    def answer(x):
        nonlocal free
        real = np.asarray(oracle.query(x), dtype=np.int8)
        if decoys is None:
            return real
        hit = decoys.contains(x)
        free += int(hit.sum())
        return np.where(hit, _flipped_truth(x), real)

    start, start_len = oracle.query_count, len(oracle.transcript)
    sim = _SimulatedOracle(d, answer)
    rep = inner(sim, rng)
    return _finish(oracle, start, start_len, rep.perturbation, True, free_queries=free,
                   decoys=decoys, inner=rep)


def sphere_swap(x: np.ndarray) -> np.ndarray:
    """Scale by 1.3 inside the decision radius, by 1/1.3 outside."""
    r = np.linalg.norm(x, axis=-1)
    f = np.where(r <= DECISION_RADIUS, OUTER_RADIUS, 1.0 / OUTER_RADIUS)
    return x * f[..., None]


def _sphere_swap_inverse(x: np.ndarray) -> np.ndarray:
    # branch inverse: images of the inner shell sit above 1.15
    r = np.linalg.norm(x, axis=-1)
    f = np.where(r > DECISION_RADIUS, 1.0 / OUTER_RADIUS, OUTER_RADIUS)
    return x * f[..., None]


def emulate_general(oracle, inner: Callable, G: Callable[[np.random.Generator], np.ndarray], k: int,
                    rng: np.random.Generator, M: Rotation | None = None,
                    rotations: list[Rotation] | None = None, signs: np.ndarray | None = None,
                    literal_queries: bool = False) -> AdversaryReport:
    """Turn an adversary for G-structured caps into one for a single cap.

    Every inner query x costs k real queries, one per component map
    F_i = M R_i T_i.  By default the real oracle is asked at F_i^{-1}(x), so
    the inner adversary faces the error set union F_i(E) and the returned
    maps F_i^{-1} p F_i carry its success back.  ``literal_queries`` asks
    at F_i(x) instead.  ``M``, ``rotations`` and ``signs`` are test hooks.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    d = oracle.dim
    ys = np.asarray(G(rng), dtype=float)
    if ys.ndim != 2 or ys.shape[0] != k or ys.shape[1] != d:
        raise ConfigurationError(f"G must produce {k} unit vectors of dimension {d}, got shape {ys.shape}")
    e1 = np.zeros(d)
    e1[0] = 1.0
    if rotations is None:
        rotations = [rotation_taking(e1, y) for y in ys]
    if len(rotations) != k:
        raise ConfigurationError("need one rotation per component")
    if M is None:
        M = sample_haar_rotation(d, rng)
    if signs is None:
        signs = np.where(rng.random(k) < 0.5, -1, 1)
    signs = np.asarray(signs)

    def forward(i):
        R = rotations[i]
        swap = signs[i] < 0

        def f(x):
            y = sphere_swap(x) if swap else x
            return M.apply(R.apply(y))
        return f

    def backward(i):
        R = rotations[i]
        swap = signs[i] < 0

        def b(x):
            y = R.apply_inverse(M.apply_inverse(x))
            return _sphere_swap_inverse(y) if swap else y
        return b

    fwd = [forward(i) for i in range(k)]
    bwd = [backward(i) for i in range(k)]

    def answer(x):
        err = np.zeros(x.shape[0], dtype=bool)
        for i in range(k):
            real_pts = fwd[i](x) if literal_queries else bwd[i](x)
            fx = np.asarray(oracle.query(real_pts), dtype=int)
            outer = np.linalg.norm(real_pts, axis=1) > DECISION_RADIUS
            err |= np.where(outer, fx == -1, fx == 1)
        inner_side = np.linalg.norm(x, axis=1) <= DECISION_RADIUS
        return np.where(inner_side, np.where(err, 1, -1), np.where(err, -1, 1))

    start, start_len = oracle.query_count, len(oracle.transcript)
    sim = _SimulatedOracle(d, answer)
    rep = inner(sim, rng)
    p = rep.perturbation
    on_inner = lambda x: np.linalg.norm(x, axis=1) <= DECISION_RADIUS
    comps = [ConjugatedPerturbation(p, fwd[i], bwd[i], mask=on_inner) for i in range(k)]
    mix = MixturePerturbation(comps, p.eps, radial=p.radial)
    return _finish(oracle, start, start_len, mix, True, inner=rep, signs=signs, inner_queries=sim.query_count,
                   component_maps=(fwd, bwd))


# ---------------------------------------------------------------------------
# linear separators


def _bisect_column(oracle, x: float, z: float, steps: int) -> tuple[float, bool]:
    lo, hi = 0.0, z
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        if oracle.classify(np.array([x, mid])) < 0:
            lo = mid
        else:
            hi = mid
    degenerate = lo == 0.0 or hi == z
    return 0.5 * (lo + hi), degenerate


def binary_search_line_attack(oracle, m: float, z: float, tol: float, eps: float,
                              ground_truth: Callable | None = None) -> AdversaryReport:
    """Recover a separating line with two bisections at x = 0 and x = m.

    Each column costs ceil(log2(z / tol)) queries whatever m is.  The
    bottom and top of each column are assumed to carry labels -1 and +1.
    A column whose answers never change side is flagged degenerate; if
    both are, no line is recovered and the identity is returned.
    """
    if tol <= 0 or tol >= z:
        raise ValueError("tol must lie in (0, z)")
    if ground_truth is None:
        ground_truth = TwoIntervalsTask(m, z).ground_truth
    steps = int(math.ceil(math.log2(z / tol)))
    start, start_len = oracle.query_count, len(oracle.transcript)
    y0, deg0 = _bisect_column(oracle, 0.0, z, steps)
    ym, degm = _bisect_column(oracle, m, z, steps)
    if deg0 and degm:
        return _finish(oracle, start, start_len, IdentityPerturbation(eps), False,
                       failure="no line recovered", intercepts=(y0, ym))
    # line through (0, y0) and (m, ym); normal points to the +1 (upper) side
    normal = np.array([-(ym - y0) / m, 1.0])
    offset = -y0
    pert = LineCrossing(normal, offset, eps, ground_truth)
    return _finish(oracle, start, start_len, pert, False, intercepts=(y0, ym), degenerate=(deg0, degm))


class NearestPoint(Perturbation):
    """Send each point to the nearest of ``targets`` within ``eps`` (and the
    same true label); points with no such target stay put."""

    def __init__(self, targets: np.ndarray, eps: float, ground_truth: Callable):
        self.targets = np.asarray(targets, dtype=float).reshape(-1, 2)
        self.eps = float(eps)
        self.ground_truth = ground_truth

    def transport(self, x, rng):
        out = x.copy()
        if len(self.targets) == 0:
            return out
        from scipy.spatial import cKDTree
        tree = cKDTree(self.targets)
        dist, idx = tree.query(x, k=1, distance_upper_bound=self.eps)
        ok = np.isfinite(dist)
        if ok.any():
            cand = self.targets[idx[ok]]
            same = self.ground_truth(cand) == self.ground_truth(x[ok])
            rows = np.flatnonzero(ok)[same]
            out[rows] = cand[same]
        return out


def probe_scan_attack(oracle, m: float, z: float, eps: float, n_probes: int) -> AdversaryReport:
    """Probe evenly spaced points just inside eps of each line.

    Half the probes sit at depth 0.999 eps below the upper line, half at
    the same height above the lower one.  Probes that come back with the
    opposite label become targets: every support point within eps of a
    target is moved onto it.
    """
    if n_probes < 2:
        raise ValueError("need at least two probes")
    per_line = n_probes // 2
    depth = 0.999 * eps
    xs = (np.arange(per_line) + 0.5) * (m / per_line)
    top = np.column_stack([xs, np.full(per_line, z - depth)])
    bottom = np.column_stack([xs, np.full(per_line, depth)])
    start, start_len = oracle.query_count, len(oracle.transcript)
    ans = np.asarray(oracle.query(np.vstack([top, bottom])), dtype=int)
    targets = np.vstack([top[ans[:per_line] == -1], bottom[ans[per_line:] == 1]])
    pert = NearestPoint(targets, eps, TwoIntervalsTask(m, z).ground_truth)
    return _finish(oracle, start, start_len, pert, False, targets=len(targets))


# ---------------------------------------------------------------------------
# white-box best responses


class CapWhiteboxPush(Perturbation):
    """Exact best response against an implanted cap error set.

    Each point moves in a straight line along the axis of the easiest
    same-shell component, by exactly the missing inner product.  The move
    never crosses the decision radius, so labels are preserved.
    """

    def __init__(self, error_set: CapErrorSet, eps: float):
        self.error_set = error_set
        self.eps = float(eps)
        self.radial = True

    def transport(self, x, rng):
        E = self.error_set
        r = np.linalg.norm(x, axis=1)
        inner = r <= DECISION_RADIUS
        dots = x @ E.axes.T
        thr = np.where(E.signs[None, :] < 0, E.tau, OUTER_RADIUS * E.tau)
        same_shell = np.where(inner[:, None], E.signs[None, :] < 0, E.signs[None, :] > 0)
        deficit = np.where(same_shell, thr - dots, np.inf)
        j = np.argmin(deficit, axis=1)
        need = deficit[np.arange(len(x)), j]
        allow = self.eps * r
        out = x.copy()
        move = (need > 0) & (need <= allow)
        if move.any():
            a = np.minimum(need[move] * (1 + 1e-12) + 1e-15, allow[move])
            cand = x[move] + a[:, None] * E.axes[j[move]]
            ok = E.contains(cand)
            idx = np.flatnonzero(move)[ok]
            out[idx] = cand[ok]
        return out


def whitebox_best_response(classifier, task, eps: float, **kwargs) -> Perturbation:
    """Best (or near-best) eps-perturbation for a classifier seen in full."""
    if isinstance(classifier, ClassifierOracle):
        classifier = classifier.rule
    if isinstance(task, ConcentricSpheresTask) and isinstance(classifier, ImplantedErrorClassifier):
        E = classifier.error_set
        if isinstance(E, CapErrorSet):
            return CapWhiteboxPush(E, eps)
        if not hasattr(E, "axes"):
            return IdentityPerturbation(eps, radial=True)
    if isinstance(task, TwoIntervalsTask) and isinstance(classifier, OneNNClassifier):
        from .intervals import OneNNWhitebox
        return OneNNWhitebox(classifier, task, eps, **kwargs)
    if isinstance(task, TwoIntervalsTask) and isinstance(classifier, LinearSeparator):
        return LineCrossing(classifier.w, classifier.b, eps, task.ground_truth)
    raise ConfigurationError(f"no white-box response for {type(classifier).__name__} on {type(task).__name__}")
