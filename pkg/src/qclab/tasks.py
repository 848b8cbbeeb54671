"""Synthetic separable tasks: two parallel intervals and concentric spheres."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .geometry import sample_uniform_sphere

__all__ = [
    "Estimate",
    "Dataset",
    "TwoIntervalsTask",
    "ConcentricSpheresTask",
    "sample_two_intervals_poisson",
    "sample_two_intervals_iid",
    "sample_concentric_spheres",
    "measure_of_set",
    "write_dataset_csv",
    "read_dataset_csv",
]

INNER_RADIUS = 1.0
OUTER_RADIUS = 1.3
DECISION_RADIUS = 1.15


@dataclass(frozen=True)
class Estimate:
    """A proportion with its Monte Carlo standard error (0 for quadrature)."""

    value: float
    stderr: float
    n: int
    flag: str = ""

    def ci(self, z: float = 1.96) -> tuple[float, float]:
        return self.value - z * self.stderr, self.value + z * self.stderr

    def __float__(self) -> float:
        return float(self.value)

    @classmethod
    def from_hits(cls, hits: np.ndarray, flag: str = "") -> "Estimate":
        hits = np.asarray(hits, dtype=bool)
        n = hits.size
        p = float(hits.mean()) if n else 0.0
        return cls(p, math.sqrt(max(p * (1 - p), 0.0) / n) if n else float("nan"), n, flag)


@dataclass(frozen=True)
class Dataset:
    """Labelled points (rows of ``points``) tagged with the task that made them.

    ``extension`` holds points outside the nominal window (the Poisson
    sampler's neighbours beyond [0, m)); they are not part of the sample.
    """

    points: np.ndarray
    labels: np.ndarray
    task: str
    extension: np.ndarray | None = None
    extension_labels: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2:
            raise ValueError("points must be a 2-D array")
        lab = np.asarray(self.labels, dtype=np.int8)
        if lab.shape != (pts.shape[0],):
            raise ValueError("labels must have one entry per point")
        if not np.all(np.abs(lab) == 1):
            raise ValueError("labels must be +1 or -1")
        pts.flags.writeable = False
        lab.flags.writeable = False
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", lab)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


# ---------------------------------------------------------------------------
# tasks


@dataclass(frozen=True)
class TwoIntervalsTask:
    """Segments L- = [0, m] x {0} (label -1) and L+ = [0, m] x {z} (label +1).

    Off the support, the ground truth is the midline rule: -1 iff y < z/2.
    """

    m: float
    z: float
    name: str = field(default="two-intervals", init=False)

    def __post_init__(self):
        if self.m <= 0 or self.z <= 0:
            raise ValueError("m and z must be positive")

    @property
    def dim(self) -> int:
        return 2

    def ground_truth(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.where(x[..., 1] < self.z / 2.0, -1, 1).astype(np.int8)

    def sample_support(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n i.i.d. draws from the uniform distribution on L- u L+."""
        xs = rng.uniform(0.0, self.m, n)
        ys = np.where(rng.random(n) < 0.5, 0.0, self.z)
        return np.column_stack([xs, ys])

    def quadrature_points(self, step: float) -> np.ndarray:
        """Midpoint grid on both segments; every point carries equal mass."""
        n = max(1, int(math.ceil(self.m / step)))
        xs = (np.arange(n) + 0.5) * (self.m / n)
        return np.vstack([np.column_stack([xs, np.zeros(n)]), np.column_stack([xs, np.full(n, self.z)])])


@dataclass(frozen=True)
class ConcentricSpheresTask:
    """Radius-1 sphere labelled -1 and radius-1.3 sphere labelled +1, equally likely."""

    d: int
    inner_radius: float = field(default=INNER_RADIUS, init=False)
    outer_radius: float = field(default=OUTER_RADIUS, init=False)
    decision_radius: float = field(default=DECISION_RADIUS, init=False)
    name: str = field(default="concentric-spheres", init=False)

    def __post_init__(self):
        if self.d < 2:
            raise ValueError("d must be >= 2")

    @property
    def dim(self) -> int:
        return self.d

    def ground_truth(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.where(np.linalg.norm(x, axis=-1) <= self.decision_radius, -1, 1).astype(np.int8)

    def sample_support(self, n: int, rng: np.random.Generator) -> np.ndarray:
        u = sample_uniform_sphere(self.d, 1.0, rng, n)
        outer = rng.random(n) < 0.5
        return u * np.where(outer, self.outer_radius, self.inner_radius)[:, None]

    def sample_sphere(self, which: int, n: int, rng: np.random.Generator) -> np.ndarray:
        """n uniform points on the inner (which=-1) or outer (which=+1) sphere."""
        r = self.inner_radius if which < 0 else self.outer_radius
        return sample_uniform_sphere(self.d, r, rng, n)


# ---------------------------------------------------------------------------
# samplers


def _poisson_line(m: float, rng: np.random.Generator) -> tuple[np.ndarray, float, float]:
    count = rng.poisson(m)
    xs = np.sort(rng.uniform(0.0, m, count))
    # memorylessness: nearest process points outside the window
    left = -rng.exponential(1.0)
    right = m + rng.exponential(1.0)
    return xs, left, right


def sample_two_intervals_poisson(m: float, z: float, rng: np.random.Generator) -> Dataset:
    """Rate-1 Poisson process on each segment, restricted to [0, m).

    The four nearest process points just outside the window (one on each
    side of each line) are returned as flagged extension points.
    """
    TwoIntervalsTask(m, z)
    lo, lo_left, lo_right = _poisson_line(m, rng)
    hi, hi_left, hi_right = _poisson_line(m, rng)
    pts = np.vstack([
        np.column_stack([lo, np.zeros_like(lo)]),
        np.column_stack([hi, np.full_like(hi, z)]),
    ])
    labels = np.concatenate([-np.ones(lo.size), np.ones(hi.size)])
    ext = np.array([[lo_left, 0.0], [lo_right, 0.0], [hi_left, z], [hi_right, z]])
    return Dataset(pts, labels, "two-intervals", ext, np.array([-1, -1, 1, 1], dtype=np.int8))


def sample_two_intervals_iid(n: int, m: float, z: float, rng: np.random.Generator) -> Dataset:
    if n < 1:
        raise ValueError("need at least one sample")
    task = TwoIntervalsTask(m, z)
    pts = task.sample_support(n, rng)
    return Dataset(pts, task.ground_truth(pts), "two-intervals")


def sample_concentric_spheres(d: int, n: int, rng: np.random.Generator) -> Dataset:
    if n < 1:
        raise ValueError("need at least one sample")
    task = ConcentricSpheresTask(d)
    pts = task.sample_support(n, rng)
    return Dataset(pts, task.ground_truth(pts), "concentric-spheres")


def measure_of_set(task, membership: Callable[[np.ndarray], np.ndarray], n: int, rng: np.random.Generator) -> Estimate:
    """Monte Carlo estimate of mu(A) = P[X in A] for X drawn from the task."""
    if n < 1:
        raise ValueError("n must be >= 1")
    x = task.sample_support(n, rng)
    return Estimate.from_hits(np.asarray(membership(x), dtype=bool))


# ---------------------------------------------------------------------------
# CSV


def write_dataset_csv(ds: Dataset, path: str | Path) -> None:
    path = Path(path)
    header = [f"x{i}" for i in range(ds.dim)] + ["label"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row, lab in zip(ds.points, ds.labels):
            w.writerow([format(v, ".17g") for v in row] + [int(lab)])


def read_dataset_csv(path: str | Path, task: str = "unknown") -> Dataset:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError("empty dataset file")
    header, body = rows[0], rows[1:]
    if header[-1] != "label" or header[:-1] != [f"x{i}" for i in range(len(header) - 1)]:
        raise ValueError("header must be x0,...,x{d-1},label")
    d = len(header) - 1
    pts = np.array([[float(v) for v in r[:d]] for r in body], dtype=float).reshape(-1, d)
    labels = np.array([int(r[d]) for r in body], dtype=np.int8)
    return Dataset(pts, labels, task)
