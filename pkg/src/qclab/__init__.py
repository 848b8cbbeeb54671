"""Simulation lab for query-bounded adversaries on synthetic tasks."""

from .geometry import (
    cap_fraction,
    cap_threshold,
    gaussian_tail_bounds,
    in_cap,
    make_rng,
    rotation_taking,
    sample_haar_rotation,
    sample_uniform_sphere,
    SphericalCap,
)
from .tasks import (
    ConcentricSpheresTask,
    Dataset,
    Estimate,
    TwoIntervalsTask,
    measure_of_set,
    sample_concentric_spheres,
    sample_two_intervals_iid,
    sample_two_intervals_poisson,
)
from .classifiers import (
    CapErrorSet,
    ClassifierOracle,
    EllipsoidClassifier,
    ImplantedErrorClassifier,
    LinearSeparator,
    OneNNClassifier,
    implant_classifier,
    sample_cap_error,
    train_linear_erm,
)

__version__ = "0.1.0"
