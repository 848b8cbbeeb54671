"""Classifiers, error sets and the query-counting oracle wrapper."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Rotation, cap_threshold, sample_haar_rotation, sample_uniform_sphere
from .tasks import DECISION_RADIUS, OUTER_RADIUS, Dataset

__all__ = [
    "BudgetExceeded",
    "ConfigurationError",
    "TrainingError",
    "ClassifierOracle",
    "OneNNClassifier",
    "knn_classify",
    "EllipsoidClassifier",
    "ellipsoid_classify",
    "CapErrorSet",
    "EmptySet",
    "EverythingSet",
    "sample_cap_error",
    "ImplantedErrorClassifier",
    "implant_classifier",
    "LinearSeparator",
    "train_linear_erm",
    "ConstantClassifier",
    "DECOY_OUTER_RADIUS",
]

# outer cap radius 1.3 * 1.15
DECOY_OUTER_RADIUS = 1.495


class BudgetExceeded(RuntimeError):
    """Raised when a query would push an oracle past its hard budget."""


class ConfigurationError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


def _as_rows(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def _labels_out(lab: np.ndarray, single: bool):
    lab = np.asarray(lab, dtype=np.int8)
    return int(lab[0]) if single else lab


class ClassifierOracle:
    """Black-box access to a label rule, counting every point asked about.

    ``query`` takes a batch of points and charges one query per row.
    ``peek`` evaluates the rule without charging; it exists for evaluation
    code and white-box baselines, never for adversaries.
    """

    def __init__(self, rule: Callable[[np.ndarray], np.ndarray], dim: int,
                 budget: int | None = None, record: bool = True):
        self.rule = rule
        self.dim = int(dim)
        self.budget = budget
        self.record = record
        self.query_count = 0
        self.transcript: list[tuple[np.ndarray, int]] = []

    def query(self, x: np.ndarray) -> np.ndarray | int:
        rows, single = _as_rows(x)
        if rows.shape[1] != self.dim:
            raise ValueError(f"expected points of dimension {self.dim}")
        n = rows.shape[0]
        if self.budget is not None and self.query_count + n > self.budget:
            raise BudgetExceeded(f"{self.query_count} + {n} queries exceeds budget {self.budget}")
        answers = np.asarray(self.rule(rows), dtype=np.int8)
        self.query_count += n
        if self.record:
            self.transcript.extend((rows[i].copy(), int(answers[i])) for i in range(n))
        return _labels_out(answers, single)

    def classify(self, x: np.ndarray) -> int:
        """One counted query for a single point."""
        return int(self.query(np.asarray(x, dtype=float).reshape(-1)))

    def peek(self, x: np.ndarray):
        rows, single = _as_rows(x)
        return _labels_out(self.rule(rows), single)


class ConstantClassifier:
    def __init__(self, label: int):
        self.label = 1 if label >= 0 else -1

    def __call__(self, x):
        rows, single = _as_rows(x)
        return _labels_out(np.full(rows.shape[0], self.label), single)


# ---------------------------------------------------------------------------
# 1-NN


class OneNNClassifier:
    """1-nearest-neighbour rule; distance ties go to the lowest sample index."""

    def __init__(self, data: Dataset):
        if len(data) == 0:
            raise ConfigurationError("1-NN needs a non-empty training set")
        self.data = data
        self._tree = cKDTree(data.points)
        self._k = min(4, len(data))

    def __call__(self, x):
        rows, single = _as_rows(x)
        dist, idx = self._tree.query(rows, k=self._k)
        if self._k == 1:
            best = idx
        else:
            tied = dist <= dist[:, :1]
            best = np.where(tied, idx, np.iinfo(np.int64).max).min(axis=1)
        return _labels_out(self.data.labels[best], single)


def knn_classify(c: OneNNClassifier, x: np.ndarray):
    return c(x)


# ---------------------------------------------------------------------------
# ellipsoid


class EllipsoidClassifier:
    """-1 iff sum_i alpha_i (M x)_i^2 <= 1."""

    def __init__(self, rotation: Rotation | None, weights: np.ndarray):
        self.rotation = rotation
        self.weights = np.asarray(weights, dtype=float)
        if np.any(self.weights <= 0):
            raise ValueError("axis weights must be positive")

    def __call__(self, x):
        rows, single = _as_rows(x)
        zs = rows if self.rotation is None else self.rotation.apply(rows)
        q = (zs * zs) @ self.weights
        return _labels_out(np.where(q <= 1.0, -1, 1), single)


def ellipsoid_classify(c: EllipsoidClassifier, x: np.ndarray):
    return c(x)


# ---------------------------------------------------------------------------
# error sets


class EmptySet:
    def contains(self, x):
        rows, _ = _as_rows(x)
        return np.zeros(rows.shape[0], dtype=bool)


class EverythingSet:
    def contains(self, x):
        rows, _ = _as_rows(x)
        return np.ones(rows.shape[0], dtype=bool)


@dataclass(frozen=True)
class CapErrorSet:
    """Union of cap-minus-ball components on the concentric-spheres task.

    A component with sign -1 is cap(y, 1.15, tau) minus B_{1.15/1.3} and
    flips the inner sphere; sign +1 is cap(y, 1.495, 1.3 tau) minus B_{1.15}
    and flips the outer one.  ``tau`` is the threshold for a delta/k cap.
    """

    axes: np.ndarray
    signs: np.ndarray
    delta: float
    tau: float
    outer_radius: float = DECOY_OUTER_RADIUS

    @property
    def k(self) -> int:
        return self.axes.shape[0]

    @property
    def dim(self) -> int:
        return self.axes.shape[1]

    def component_hits(self, x: np.ndarray) -> np.ndarray:
        """Boolean (n, k) matrix: row point lies in component column."""
        rows, _ = _as_rows(x)
        r = np.linalg.norm(rows, axis=1)[:, None]
        dots = rows @ self.axes.T
        inner = (r <= DECISION_RADIUS) & (r > DECISION_RADIUS / OUTER_RADIUS) & (dots >= self.tau)
        outer = (r <= self.outer_radius) & (r > DECISION_RADIUS) & (dots >= OUTER_RADIUS * self.tau)
        return np.where(self.signs[None, :] < 0, inner, outer)

    def contains(self, x: np.ndarray) -> np.ndarray:
        return self.component_hits(x).any(axis=1)

    def union(self, other: "CapErrorSet") -> "CapErrorSet":
        if abs(other.tau - self.tau) > 0 or other.outer_radius != self.outer_radius:
            raise ValueError("can only merge components with a common threshold")
        return CapErrorSet(np.vstack([self.axes, other.axes]), np.concatenate([self.signs, other.signs]),
                           self.delta + other.delta, self.tau, self.outer_radius)


def sample_cap_error(delta: float, k: int, d: int, rng: np.random.Generator, variant: str = "iid",
                     G: Callable[[np.random.Generator], np.ndarray] | None = None,
                     outer_radius: float = DECOY_OUTER_RADIUS) -> CapErrorSet:
    """Draw an error set with k components, each a delta/k cap.

    ``variant="iid"`` draws independent uniform axes; ``variant="from_G"``
    draws k unit vectors from ``G`` and applies one shared Haar rotation.
    Signs are independent fair coins in both cases.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError("delta must lie in (0, 1)")
    if k < 1:
        raise ValueError("k must be >= 1")
    tau = cap_threshold(delta / k, d)
    if variant == "iid":
        axes = sample_uniform_sphere(d, 1.0, rng, k)
    elif variant == "from_G":
        if G is None:
            raise ConfigurationError("variant 'from_G' needs a direction sampler G")
        ys = np.asarray(G(rng), dtype=float).reshape(k, d)
        axes = sample_haar_rotation(d, rng).apply(ys)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    signs = np.where(rng.random(k) < 0.5, -1, 1).astype(np.int8)
    return CapErrorSet(axes, signs, delta, tau, outer_radius)


class ImplantedErrorClassifier:
    """Ground truth with its label flipped exactly on ``error_set``."""

    def __init__(self, ground_truth: Callable[[np.ndarray], np.ndarray], error_set):
        self.ground_truth = ground_truth
        self.error_set = error_set

    def __call__(self, x):
        rows, single = _as_rows(x)
        h = np.asarray(self.ground_truth(rows), dtype=np.int8)
        flip = self.error_set.contains(rows)
        return _labels_out(np.where(flip, -h, h), single)


def implant_classifier(ground_truth, error_set, dim: int, budget: int | None = None) -> ClassifierOracle:
    return ClassifierOracle(ImplantedErrorClassifier(ground_truth, error_set), dim, budget)


# ---------------------------------------------------------------------------
# linear


class LinearSeparator:
    """sign(<w, x> + b) with |w| = 1; points on the line get +1."""

    def __init__(self, w: np.ndarray, b: float):
        w = np.asarray(w, dtype=float)
        norm = np.linalg.norm(w)
        if norm == 0:
            raise ValueError("weight vector must be non-zero")
        self.w = w / norm
        self.b = float(b) / norm

    def decision(self, x):
        rows, _ = _as_rows(x)
        return rows @ self.w + self.b

    def __call__(self, x):
        rows, single = _as_rows(x)
        return _labels_out(np.where(rows @ self.w + self.b >= 0, 1, -1), single)

    def y_at(self, x: float) -> float:
        """Height where the line crosses the vertical x = const (2-D only)."""
        return -(self.b + self.w[0] * x) / self.w[1]


def train_linear_erm(data: Dataset, rng: np.random.Generator, max_epochs: int = 10_000) -> LinearSeparator:
    """Perceptron with random initial weights and random presentation order.

    Features are standardised internally so convergence speed does not
    depend on the raw scale of the coordinates.  The returned line is some
    zero-training-error separator, deliberately not the max-margin one.
    """
    x = data.points
    y = data.labels.astype(float)
    centre = x.mean(axis=0)
    scale = x.std(axis=0)
    scale[scale == 0] = 1.0
    u = np.hstack([(x - centre) / scale, np.ones((x.shape[0], 1))])
    w = rng.standard_normal(u.shape[1])
    for _ in range(max_epochs):
        mistakes = 0
        for i in rng.permutation(u.shape[0]):
            if y[i] * (u[i] @ w) <= 0:
                w += y[i] * u[i]
                mistakes += 1
        if mistakes == 0:
            wx = w[:-1] / scale
            return LinearSeparator(wx, w[-1] - wx @ centre)
    raise TrainingError(f"perceptron did not separate the data in {max_epochs} epochs")
