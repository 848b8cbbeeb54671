"""Vectors, spheres, rotations and spherical caps in R^d."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc, erfc

__all__ = [
    "make_rng",
    "sample_uniform_sphere",
    "Rotation",
    "MatrixRotation",
    "HouseholderRotation",
    "LazyHaarRotation",
    "sample_haar_rotation",
    "rotation_taking",
    "cap_fraction",
    "cap_threshold",
    "normal_upper_quantile",
    "gaussian_tail_bounds",
    "SphericalCap",
    "in_cap",
]

LAZY_HAAR_ABOVE = 2000


def make_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Generator for the (seed, stream) pair.

    Equal pairs give identical draws; different stream ids are independent
    children of the same seed sequence.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(stream),))
    return np.random.default_rng(ss)


def sample_uniform_sphere(d: int, r: float, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Uniform draw(s) from the sphere of radius ``r`` in R^d.

    Returns shape (d,) when ``n`` is None, otherwise (n, d).
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if r <= 0:
        raise ValueError("radius must be positive")
    rows = 1 if n is None else int(n)
    g = rng.standard_normal((rows, d))
    norms = np.linalg.norm(g, axis=1)
    bad = norms == 0.0
    while bad.any():
        g[bad] = rng.standard_normal((int(bad.sum()), d))
        norms = np.linalg.norm(g, axis=1)
        bad = norms == 0.0
    out = r * g / norms[:, None]
    return out[0] if n is None else out


# ---------------------------------------------------------------------------
# rotations


class Rotation:
    """Orthogonal map of R^d; acts on a vector (d,) or on rows of (n, d)."""

    dim: int

    def apply(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def apply_inverse(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.apply(x)

    def matrix(self) -> np.ndarray:
        return self.apply(np.eye(self.dim)).T

    @property
    def inverse(self) -> "Rotation":
        return _Inverse(self)


class _Inverse(Rotation):
    def __init__(self, base: Rotation):
        self.base = base
        self.dim = base.dim

    def apply(self, x):
        return self.base.apply_inverse(x)

    def apply_inverse(self, x):
        return self.base.apply(x)

    @property
    def inverse(self):
        return self.base


class MatrixRotation(Rotation):
    def __init__(self, matrix: np.ndarray):
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("rotation matrix must be square")
        self._m = m
        self.dim = m.shape[0]

    def apply(self, x):
        return np.asarray(x, dtype=float) @ self._m.T

    def apply_inverse(self, x):
        return np.asarray(x, dtype=float) @ self._m

    def matrix(self):
        return self._m.copy()


class IdentityRotation(Rotation):
    def __init__(self, d: int):
        self.dim = d

    def apply(self, x):
        return np.array(x, dtype=float)

    apply_inverse = apply


def _reflect(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    # I - 2 w w^T with |w| = 1, applied to rows
    return x - 2.0 * np.multiply.outer(x @ w, w)


class HouseholderRotation(Rotation):
    """Product H_0 H_1 ... of full-length reflections (applied right to left)."""

    def __init__(self, normals: list[np.ndarray]):
        self.normals = [np.asarray(w, dtype=float) for w in normals]
        self.dim = self.normals[0].shape[0]

    def apply(self, x):
        y = np.array(x, dtype=float)
        for w in reversed(self.normals):
            y = _reflect(y, w)
        return y

    def apply_inverse(self, x):
        y = np.array(x, dtype=float)
        for w in self.normals:
            y = _reflect(y, w)
        return y


class LazyHaarRotation(Rotation):
    """Haar-distributed orthogonal map stored as a seed, never as a matrix.

    Uses the Householder form of the QR decomposition of a Gaussian matrix:
    Q = H_0 H_1 ... H_{d-2} D.  The k-th reflection acts on coordinates k..d-1
    and its vector is regenerated from ``(seed, k)`` whenever it is needed, so
    storage is O(d) and each application costs O(d^2).
    """

    def __init__(self, d: int, seed: int):
        self.dim = d
        self.seed = int(seed)
        signs = np.empty(d)
        for k in range(d - 1):
            v, s = self._vector(k)
            signs[k] = s
        last = np.random.default_rng([self.seed, d]).standard_normal()
        signs[d - 1] = 1.0 if last >= 0 else -1.0
        self._signs = signs

    def _vector(self, k: int) -> tuple[np.ndarray, float]:
        g = np.random.default_rng([self.seed, k]).standard_normal(self.dim - k)
        s = 1.0 if g[0] >= 0 else -1.0
        v = g.copy()
        v[0] += s * np.linalg.norm(g)
        v /= np.linalg.norm(v)
        # H g = -s |g| e_1, so the R diagonal entry has sign -s; D fixes it to +
        return v, -s

    def _reflect_tail(self, y: np.ndarray, k: int) -> np.ndarray:
        v, _ = self._vector(k)
        tail = y[..., k:]
        y[..., k:] = tail - 2.0 * np.multiply.outer(tail @ v, v)
        return y

    def apply(self, x):
        y = np.array(x, dtype=float) * self._signs
        for k in reversed(range(self.dim - 1)):
            y = self._reflect_tail(y, k)
        return y

    def apply_inverse(self, x):
        y = np.array(x, dtype=float)
        for k in range(self.dim - 1):
            y = self._reflect_tail(y, k)
        return y * self._signs


def sample_haar_rotation(d: int, rng: np.random.Generator, lazy: bool | None = None) -> Rotation:
    """Haar-random element of O(d).

    Explicit matrix (QR of a Gaussian matrix with sign correction) up to
    ``LAZY_HAAR_ABOVE`` dimensions, lazily applied reflections beyond.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if lazy is None:
        lazy = d > LAZY_HAAR_ABOVE
    if lazy and d > 1:
        return LazyHaarRotation(d, int(rng.integers(0, 2**63 - 1)))
    g = rng.standard_normal((d, d))
    q, r = np.linalg.qr(g)
    q = q * np.where(np.diag(r) < 0, -1.0, 1.0)
    return MatrixRotation(q)


def rotation_taking(a: np.ndarray, b: np.ndarray) -> Rotation:
    """Proper rotation (two reflections) sending unit vector ``a`` to ``b``.

    Reflecting through (a+b)^perp sends a to -b, then reflecting through
    b^perp sends -b to b.  When a = -b any unit vector orthogonal to a serves
    as the first normal.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    d = a.shape[0]
    if d == 1:
        return MatrixRotation(np.array([[float(np.sign(b[0]) * np.sign(a[0]))]]))
    w1 = a + b
    n1 = np.linalg.norm(w1)
    if n1 < 1e-12:
        k = int(np.argmin(np.abs(a)))
        e = np.zeros(d)
        e[k] = 1.0
        w1 = e - (e @ a) * a
        n1 = np.linalg.norm(w1)
    w1 = w1 / n1
    w2 = b / np.linalg.norm(b)
    return HouseholderRotation([w2, w1])


# ---------------------------------------------------------------------------
# cap measure


def cap_fraction(tau: float, d: int) -> float:
    """Fraction of the unit sphere S^{d-1} with <x, u> >= tau.

    Exact, via the regularized incomplete beta function; negative tau is
    handled by symmetry.
    """
    if d < 2:
        raise ValueError("d must be >= 2")
    if tau > 1.0 or tau < -1.0:
        raise ValueError(f"tau must lie in [-1, 1], got {tau}")
    if tau < 0:
        return 1.0 - cap_fraction(-tau, d)
    t2 = tau * tau
    if t2 < 0.5:
        # complement form keeps full precision near tau = 0
        return 0.5 - 0.5 * float(betainc(0.5, (d - 1) / 2.0, t2))
    return 0.5 * float(betainc((d - 1) / 2.0, 0.5, 1.0 - t2))


def normal_upper_quantile(delta: float) -> float:
    """t with P[N(0,1) >= t] = delta, by bisection on erfc."""
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    lo, hi = -40.0, 40.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if 0.5 * erfc(mid / math.sqrt(2.0)) > delta:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    return 0.5 * (lo + hi)


def cap_threshold(delta: float, d: int, model: str = "exact") -> float:
    """tau such that the cap {<x, u> >= tau} holds a ``delta`` fraction of S^{d-1}.

    ``model="exact"`` bisects on the true cap measure; ``model="gaussian"``
    treats coordinates as N(0, 1/d) and returns the normal quantile / sqrt(d).
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")
    if d < 2:
        raise ValueError("d must be >= 2")
    if model == "gaussian":
        return normal_upper_quantile(delta) / math.sqrt(d)
    if model != "exact":
        raise ValueError(f"unknown model {model!r}")
    lo, hi = -1.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if cap_fraction(mid, d) > delta:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    return 0.5 * (lo + hi)


def gaussian_tail_bounds(t: float) -> tuple[float, float]:
    """Mills-ratio bounds on P[X >= t] for X ~ N(0, 1).

    lower = phi(t) (1/t - 1/t^3), upper = phi(t) / t.  The lower bound is
    only informative for t > 1.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    phi = math.exp(-t * t / 2.0) / math.sqrt(2.0 * math.pi)
    return phi * (1.0 / t - 1.0 / t**3), phi / t


@dataclass(frozen=True)
class SphericalCap:
    """B_r intersected with the half-space <x, axis> >= threshold."""

    axis: np.ndarray
    radius: float
    threshold: float

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=float)
        if abs(np.linalg.norm(axis) - 1.0) > 1e-12:
            raise ValueError("cap axis must be a unit vector")
        if self.radius <= 0:
            raise ValueError("radius must be positive")
        if not 0.0 <= self.threshold <= self.radius:
            raise ValueError("threshold must lie in [0, radius]")
        object.__setattr__(self, "axis", axis)


def in_cap(x: np.ndarray, cap: SphericalCap) -> np.ndarray | bool:
    x = np.asarray(x, dtype=float)
    inside = (np.linalg.norm(x, axis=-1) <= cap.radius) & (x @ cap.axis >= cap.threshold)
    return bool(inside) if inside.ndim == 0 else inside
