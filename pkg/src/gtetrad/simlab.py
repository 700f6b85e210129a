"""Simulation designs, closed-form bridges and a seeded Monte Carlo harness.

Three families of structural models are available, all driven by i.i.d.
standard normal exogenous variables:

``main``
    ``X = a0 + a1 U + a2 U^2 + e1``, ``Y = b0 + b1 U + b2 U^2 + delta X + e2``,
    ``Z = g0 + g1 U + e3``, ``W = h0 + h1 U + e4`` with
    ``(a0, b0, g0, h0) = (0.5, -1, 0.5, 1)`` and
    ``(a1, b1, g1, h1) = (0.5, 0.5, 1.5, 1)``.
``covariate``
    ``X = 0.5 + U + a2 U^2 + 0.5 V + e1``, ``Y = -1 + U + b2 U^2 + V + delta X + e2``,
    ``Z = 0.5 + U + V + e3``, ``W = 1 + U + 0.5 V + e4``.
``interaction``
    the ``main`` linear model with ``Y = b0 + b1 U + b12 U X + e2``.

Normal variates come from numpy's PCG64 generator (ziggurat sampler). Each
replication ``r`` of a study with seed ``s`` uses ``SeedSequence(s,
spawn_key=(r,))``, so results do not depend on the number of workers.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .classical import classical_test
from .dataset import ObservationTable
from .errors import ConfigurationError, GTetradError, StudyError
from .gt import GtConfig, gt_test

MAIN_INTERCEPTS = (0.5, -1.0, 0.5, 1.0)
MAIN_SLOPES = (0.5, 0.5, 1.5, 1.0)


@dataclass(frozen=True)
class SimSetting:
    """A named data-generating configuration.

    ``alpha2``/``beta2`` are the quadratic effects of U on X and Y, ``delta``
    the direct effect of X on Y and ``beta12`` the U*X interaction in Y.
    """

    name: str
    family: str
    alpha2: float = 0.0
    beta2: float = 0.0
    delta: float = 0.0
    beta12: float = 0.0

    @property
    def null_holds(self) -> bool:
        return self.delta == 0.0 and self.beta12 == 0.0


PRESETS = {
    "I": SimSetting("I", "main"),
    "II.a": SimSetting("II.a", "main", 0.1, 0.2),
    "II.b": SimSetting("II.b", "main", 0.3, 0.4),
    "III.a": SimSetting("III.a", "main", delta=0.15),
    "III.b": SimSetting("III.b", "main", delta=0.3),
    "cov:I": SimSetting("cov:I", "covariate"),
    "cov:II.a": SimSetting("cov:II.a", "covariate", 0.1, 0.2),
    "cov:II.b": SimSetting("cov:II.b", "covariate", 0.3, 0.4),
    "cov:III.a": SimSetting("cov:III.a", "covariate", delta=0.3),
    "cov:III.b": SimSetting("cov:III.b", "covariate", delta=0.5),
    "example3": SimSetting("example3", "interaction", beta12=0.5),
}

MAIN_SETTINGS = ("I", "II.a", "II.b", "III.a", "III.b")
COVARIATE_SETTINGS = ("cov:I", "cov:II.a", "cov:II.b", "cov:III.a", "cov:III.b")
METHODS = ("gt-gmm", "gt-psmd", "ct")


def get_setting(name) -> SimSetting:
    if isinstance(name, SimSetting):
        return name
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown setting {name!r}; known presets: {', '.join(PRESETS)}") from None


def generate(setting, n: int, seed) -> ObservationTable:
    """Draw ``n`` observations from ``setting`` with a seeded generator.

    ``seed`` is an integer or a :class:`numpy.random.SeedSequence`.
    """
    s = get_setting(setting)
    if n < 1:
        raise ConfigurationError("n must be positive")
    rng = np.random.default_rng(seed)
    if s.family == "covariate":
        u, v, e1, e2, e3, e4 = rng.standard_normal((6, n))
        x = 0.5 + u + s.alpha2 * u ** 2 + 0.5 * v + e1
        y = -1.0 + u + s.beta2 * u ** 2 + v + s.delta * x + e2
        z = 0.5 + u + v + e3
        w = 1.0 + u + 0.5 * v + e4
        return ObservationTable.from_arrays(x, y, z, w, v[:, None], names=["v"])
    u, e1, e2, e3, e4 = rng.standard_normal((5, n))
    a0, b0, g0, h0 = MAIN_INTERCEPTS
    a1, b1, g1, h1 = MAIN_SLOPES
    x = a0 + a1 * u + s.alpha2 * u ** 2 + e1
    if s.family == "interaction":
        y = b0 + b1 * u + s.beta12 * u * x + e2
    else:
        y = b0 + b1 * u + s.beta2 * u ** 2 + s.delta * x + e2
    z = g0 + g1 * u + e3
    w = h0 + h1 * u + e4
    return ObservationTable.from_arrays(x, y, z, w)


@dataclass(frozen=True)
class Quadratic:
    """``intercept + slope * t + curvature * t^2``."""

    intercept: float
    slope: float
    curvature: float

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.intercept + self.slope * t + self.curvature * t ** 2


def analytic_bridge(setting):
    """Closed-form ``(h0, g0)`` for the main family with ``delta = 0`` and the
    interaction family; ``None`` when no closed form is available.

    The constants are fixed by ``E{Y - h0(W)} = 0`` and ``E{Y - g0(Z)} = 0``.
    """
    s = get_setting(setting)
    a0, b0, g0, h0 = MAIN_INTERCEPTS
    a1, b1, g1, h1 = MAIN_SLOPES
    if s.family == "main" and s.delta == 0.0:
        lin, quad = b1, s.beta2  # E(Y|U) = b0 + lin U + quad U^2
        mean_y = b0 + s.beta2
    elif s.family == "interaction":
        lin, quad = b1 + a0 * s.beta12, a1 * s.beta12
        mean_y = b0 + a1 * s.beta12
    else:
        return None

    def solve(c0, c1):
        # E(Y|U) = E{q(c0 + c1 U + e) | U} for q(t) = k + a t + b t^2
        curv = quad / c1 ** 2
        slope = lin / c1 - 2.0 * quad * c0 / c1 ** 2
        second = c0 ** 2 + c1 ** 2 + 1.0
        return Quadratic(mean_y - slope * c0 - curv * second, slope, curv)

    return solve(h0, h1), solve(g0, g1)


def default_config(setting, method: str) -> GtConfig:
    """Bridge settings used for the power tables of each family."""
    s = get_setting(setting)
    if method == "gt-gmm":
        if s.family == "covariate":
            return GtConfig.gmm("poly:1+linear-covariates")
        return GtConfig.gmm("poly:1")
    if method == "gt-psmd":
        if s.family == "covariate":
            return GtConfig.psmd("pol:4+poly-covariates", "pol:7+poly-covariates")
        return GtConfig.psmd("pol:4", "pol:7")
    raise ConfigurationError(f"no bridge configuration for method {method!r}")


@dataclass(frozen=True)
class PowerEstimate:
    setting: str
    method: str
    n: int
    reps: int
    seed: int
    rejections: int
    failures: int
    alpha: float
    rejection_rate: float = field(init=False)
    monte_carlo_se: float = field(init=False)

    def __post_init__(self):
        used = self.reps - self.failures
        rate = self.rejections / used if used else float("nan")
        object.__setattr__(self, "rejection_rate", rate)
        object.__setattr__(self, "monte_carlo_se", math.sqrt(rate * (1.0 - rate) / used) if used else float("nan"))

    def to_row(self) -> dict:
        return {"setting": self.setting, "method": self.method, "n": self.n, "reps": self.reps,
                "seed": self.seed, "rejection_rate": f"{self.rejection_rate:.6f}",
                "mc_se": f"{self.monte_carlo_se:.6f}"}


def replication_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(index,))


def run_replication(setting, method: str, n: int, alpha: float, seed: int, index: int,
                    config: GtConfig | None = None):
    """One replication; returns ``(index, rejected, error message or None)``."""
    s = get_setting(setting)
    table = generate(s, n, replication_seed(seed, index))
    try:
        if method == "ct":
            rejected = classical_test(table, alpha).reject
        else:
            cfg = config or default_config(s, method)
            rejected = gt_test(table, cfg.method, cfg, alpha).reject
    except GTetradError as exc:
        return index, False, f"{type(exc).__name__}: {exc}"
    return index, bool(rejected), None


def _run_chunk(args):
    setting, method, n, alpha, seed, indices, config = args
    return [run_replication(setting, method, n, alpha, seed, i, config) for i in indices]


def resolve_workers(workers=None) -> int:
    if workers is None:
        workers = os.environ.get("GTETRAD_WORKERS", 1)
    try:
        workers = int(workers)
    except (TypeError, ValueError):
        raise ConfigurationError(f"invalid worker count {workers!r}") from None
    if workers < 1:
        raise ConfigurationError("worker count must be at least 1")
    return workers


def power_study(setting, method: str, n: int, reps: int, alpha: float = 0.05, seed: int = 0,
                workers=None, config: GtConfig | None = None) -> PowerEstimate:
    """Monte Carlo rejection rate of ``method`` under ``setting``.

    Failed replications are excluded from the denominator when they are fewer
    than 1% of ``reps``; otherwise :class:`StudyError` is raised.
    """
    s = get_setting(setting)
    if method not in METHODS:
        raise ConfigurationError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")
    if reps < 1:
        raise ConfigurationError("reps must be at least 1")
    workers = resolve_workers(workers)
    indices = list(range(reps))
    if workers == 1 or reps == 1:
        results = _run_chunk((s, method, n, alpha, seed, indices, config))
    else:
        chunks = [indices[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(_run_chunk, [(s, method, n, alpha, seed, c, config) for c in chunks if c])
            results = sorted((r for part in parts for r in part), key=lambda r: r[0])
    failures = [(i, msg) for i, _, msg in results if msg is not None]
    if len(failures) >= 0.01 * reps and failures:
        raise StudyError(f"{len(failures)} of {reps} replications failed for {s.name}/{method}/n={n}; "
                         f"first: replication {failures[0][0]}: {failures[0][1]}", failures)
    rejections = sum(1 for _, rej, msg in results if msg is None and rej)
    return PowerEstimate(s.name, method, n, reps, seed, rejections, len(failures), alpha)
