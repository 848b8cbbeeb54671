"""Error-region geometry of 1-NN on the two-intervals task.

Between two consecutive same-line samples the opposite class reaches up
toward the line in a region bounded by parabolas (the points equidistant
from a sample and from the opposite line).  A point on the line is
vulnerable when its eps-disk touches that region.  For eps = z/10 the
reachable length of a gap depends only on its length, via ``nu``.

Two brute-force oracles scan a fine grid along each line and test the
lower half of each eps-circle:

* ``model="line"`` treats the opposite class as the whole opposite
  segment (the continuum picture the gap formula is derived in);
* ``model="samples"`` uses the actual opposite samples, i.e. the
  decision regions of the trained 1-NN classifier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from .adversaries import Perturbation
from .classifiers import ConfigurationError, OneNNClassifier
from .tasks import Dataset, TwoIntervalsTask

__all__ = [
    "ParabolaGeometry",
    "solve_alpha_star",
    "parabola_objective",
    "split_lines",
    "grid_reach",
    "GridReach",
    "IntervalsAR",
    "two_intervals_ar_exact",
    "OneNNWhitebox",
]

SQ5 = math.sqrt(5.0)


def parabola_objective(alpha, z: float):
    """(z/10)(-sin a + 2 sqrt5 sqrt(5 - cos a)): the gap half-width at which
    the eps-circle point at angle ``alpha`` sits on the parabola."""
    return z / 10.0 * (-np.sin(alpha) + 2.0 * SQ5 * np.sqrt(5.0 - np.cos(alpha)))


def solve_alpha_star(z: float) -> tuple[float, float]:
    """Minimiser of ``parabola_objective`` on [0, pi/2] and the matching x*."""
    if z <= 0:
        raise ValueError("z must be positive")
    res = minimize_scalar(lambda a: parabola_objective(a, 1.0), bounds=(0.0, math.pi / 2),
                          method="bounded", options={"xatol": 1e-12})
    a = float(res.x)
    return a, SQ5 * math.sqrt(5.0 - math.cos(a)) * z / 5.0


@dataclass(frozen=True)
class ParabolaGeometry:
    z: float
    alpha_star: float
    x_star: float

    @classmethod
    def for_separation(cls, z: float) -> "ParabolaGeometry":
        a, xs = solve_alpha_star(z)
        return cls(z, a, xs)

    @property
    def min_gap(self) -> float:
        """Shortest gap with any reachable error: 4 sqrt5 z / 5."""
        return 4.0 * SQ5 * self.z / 5.0

    def nu(self, length):
        """Reachable error length inside one gap of the given length."""
        z = self.z
        l = np.asarray(length, dtype=float)
        # z^2/100 - (z/2 - l^2/(8z))^2, factored so it vanishes exactly at min_gap
        a = z / 2.0 - l * l / (8.0 * z)
        mid = (l - self.min_gap) * (l + self.min_gap) / (8.0 * z) * (z / 10.0 + a)
        middle = 2.0 * np.sqrt(np.maximum(mid, 0.0))
        tail = l - 2.0 * self.x_star + 2.0 * z / 10.0 * math.sin(self.alpha_star)
        out = np.where(l < self.min_gap, 0.0, np.where(l <= 2.0 * self.x_star, middle, tail))
        return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# brute force


def split_lines(ds: Dataset, z: float) -> tuple[np.ndarray, np.ndarray]:
    """Sorted x-coordinates of the samples on y = 0 and on y = z."""
    y = ds.points[:, 1]
    lo = np.sort(ds.points[np.isclose(y, 0.0), 0])
    hi = np.sort(ds.points[np.isclose(y, z), 0])
    if len(lo) + len(hi) != len(ds):
        raise ValueError("dataset has points off the two lines")
    return lo, hi


def _nearest_on_line(px: np.ndarray, dy: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Distance from (px, .) to the nearest of the points (xs, .) given vertical offsets dy."""
    if len(xs) == 0:
        return np.full(px.shape, np.inf)
    i = np.searchsorted(xs, px)
    left = xs[np.clip(i - 1, 0, len(xs) - 1)]
    right = xs[np.clip(i, 0, len(xs) - 1)]
    return np.minimum(np.hypot(px - left, dy), np.hypot(px - right, dy))


def _circle(n_angles: int) -> tuple[np.ndarray, np.ndarray]:
    # lower half circle, pointing at the opposite line
    ang = np.linspace(math.pi, 2.0 * math.pi, n_angles)
    return np.cos(ang), np.sin(ang)


def _line_witness(t: np.ndarray, same: np.ndarray, opp: np.ndarray, m: float, z: float, radius: float,
                  model: str, n_angles: int, chunk: int = 2048):
    """For points (t, z) find a circle point of the given radius in the opposite region.

    Coordinates are those of a line at height z with the opposite line at 0.
    Returns (found mask, witness x, witness height).
    """
    cx, cy = _circle(n_angles)
    found = np.zeros(t.shape, dtype=bool)
    wx = t.astype(float).copy()
    wy = np.full(t.shape, z, dtype=float)
    for s in range(0, len(t), chunk):
        tt = t[s:s + chunk]
        px = tt[:, None] + radius * cx[None, :]
        py = z + radius * cy[None, :] + np.zeros_like(px)
        d_same = _nearest_on_line(px.ravel(), (py - z).ravel(), same).reshape(px.shape)
        if model == "line":
            dx = np.clip(-px, 0.0, None) + np.clip(px - m, 0.0, None)
            d_opp = np.hypot(dx, py)
        elif model == "samples":
            d_opp = _nearest_on_line(px.ravel(), py.ravel(), opp).reshape(px.shape)
        else:
            raise ValueError(f"unknown model {model!r}")
        margin = d_same - d_opp
        best = np.argmax(margin, axis=1)
        ok = margin[np.arange(len(tt)), best] > 0
        found[s:s + chunk] = ok
        wx[s:s + chunk] = np.where(ok, px[np.arange(len(tt)), best], tt)
        wy[s:s + chunk] = np.where(ok, py[np.arange(len(tt)), best], z)
    return found, wx, wy


@dataclass(frozen=True)
class GridReach:
    """Vulnerable length found by a grid scan, split into gap and end parts."""

    gaps: float
    ends: float
    step: float

    @property
    def total(self) -> float:
        return self.gaps + self.ends


def _scan_line(same, opp, m, z, eps, step, model, n_angles) -> tuple[float, float]:
    n = max(1, int(math.ceil(m / step)))
    h = m / n
    t = (np.arange(n) + 0.5) * h
    # only points far from their own samples can reach the other class
    d_same = _nearest_on_line(t, np.zeros_like(t), same)
    cand = t[d_same > z - 2.0 * eps]
    if len(cand) == 0:
        return 0.0, 0.0
    hit, _, _ = _line_witness(cand, same, opp, m, z, eps, model, n_angles)
    inside = (cand > same[0]) & (cand < same[-1]) if len(same) else np.zeros_like(cand, dtype=bool)
    return float(hit[inside].sum() * h), float(hit[~inside].sum() * h)


def grid_reach(ds: Dataset, m: float, z: float, eps: float, step: float | None = None,
               model: str = "samples", n_angles: int = 721) -> GridReach:
    """Brute-force vulnerable length on both lines (unnormalised)."""
    step = z / 2000.0 if step is None else step
    lo, hi = split_lines(ds, z)
    g1, e1 = _scan_line(hi, lo, m, z, eps, step, model, n_angles)
    # mirror y -> z - y so the lower line looks like the upper one
    g2, e2 = _scan_line(lo, hi, m, z, eps, step, model, n_angles)
    return GridReach(g1 + g2, e1 + e2, step)


# ---------------------------------------------------------------------------
# exact gap sum


@dataclass(frozen=True)
class IntervalsAR:
    gap_length: float
    end_length: float
    m: float

    @property
    def length(self) -> float:
        return self.gap_length + self.end_length

    @property
    def fraction(self) -> float:
        return self.length / (2.0 * self.m)


def two_intervals_ar_exact(ds: Dataset, m: float, z: float, eps: float | None = None,
                           end_step: float | None = None, brute_force_fallback: bool = False) -> IntervalsAR:
    """Gap-formula adversarial length for 1-NN on the two-intervals task.

    Interior gaps use ``nu``; the two end pieces of each line (before the
    first and after the last sample) come from the line-model grid scan.
    Only eps = z/10 is covered by the formula.
    """
    eps = z / 10.0 if eps is None else eps
    if not math.isclose(eps, z / 10.0, rel_tol=1e-12):
        if not brute_force_fallback:
            raise ConfigurationError("the gap formula covers eps = z/10 only")
        g = grid_reach(ds, m, z, eps, end_step, model="line")
        return IntervalsAR(g.gaps, g.ends, m)
    geo = ParabolaGeometry.for_separation(z)
    lo, hi = split_lines(ds, z)
    gaps = float(np.sum(geo.nu(np.diff(lo)))) + float(np.sum(geo.nu(np.diff(hi))))
    ends = grid_reach(ds, m, z, eps, end_step, model="line").ends
    return IntervalsAR(gaps, ends, m)


# ---------------------------------------------------------------------------
# white-box response for 1-NN


class OneNNWhitebox(Perturbation):
    """Move each support point to a nearby point the 1-NN rule mislabels.

    The lower half of the eps-circle (shrunk by a relative 1e-9 so the move
    is strictly inside the ball) is scanned at ``n_angles`` angles; the
    witness with the largest distance margin is used.  Scanning the circle
    is enough: the opposite region is connected to the opposite line, so if
    it meets the disk it meets the circle.
    """

    def __init__(self, classifier: OneNNClassifier, task: TwoIntervalsTask, eps: float, n_angles: int = 721):
        self.classifier = classifier
        self.task = task
        self.eps = float(eps)
        self.n_angles = n_angles
        self.lo, self.hi = split_lines(classifier.data, task.z)

    def transport(self, x, rng=None):
        z, m, eps = self.task.z, self.task.m, self.eps
        out = x.copy()
        radius = eps * (1.0 - 1e-9)
        for on_top, same, opp in ((True, self.hi, self.lo), (False, self.lo, self.hi)):
            level = z if on_top else 0.0
            sel = np.flatnonzero(np.isclose(x[:, 1], level, atol=1e-12))
            if len(sel) == 0:
                continue
            t = x[sel, 0]
            d_same = _nearest_on_line(t, np.zeros_like(t), same)
            cand = sel[d_same > z - 2.0 * eps]
            if len(cand) == 0:
                continue
            found, wx, wy = _line_witness(x[cand, 0], same, opp, m, z, radius, "samples", self.n_angles)
            idx = cand[found]
            out[idx, 0] = wx[found]
            # heights were computed for the upper line; mirror back for the lower one
            out[idx, 1] = wy[found] if on_top else z - wy[found]
        return out
