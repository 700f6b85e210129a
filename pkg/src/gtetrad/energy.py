"""Distance-matrix machinery for weighted characteristic-function integrals.

A linear combination ``sum_k c_k exp(i s.A_k)`` of characteristic-function
terms with zero-sum coefficients has a finite weighted squared norm

    c_d^{-1} int |sum_k c_k exp(i s.A_k)|^2 ||s||^{-(d+1)} ds = -c' D c,

where ``D`` is the Euclidean distance matrix of the anchors and
``c_d = pi^{(d+1)/2} / Gamma((d+1)/2)`` (``c_1 = pi``). Every statistic of
the generalized tetrad test reduces to such bilinear forms, so production
code never integrates over ``s``. :func:`quadrature_oracle` evaluates the
integral numerically for scalar anchors and exists to check the identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import gammaln

from .errors import NumericalError, ValidationError

ZERO_SUM_RTOL = 1e-10
CLAMP_RTOL = 1e-10


def weight_constant(d: int) -> float:
    """Normalizing constant ``c_d`` of the ``||s||^{-(d+1)}`` weight."""
    return math.exp((d + 1) / 2 * math.log(math.pi) - gammaln((d + 1) / 2))


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    """Pairwise Euclidean distances between anchor points.

    Attributes
    ----------
    anchors : ndarray, shape (n, d)
    matrix : ndarray, shape (n, n)
    """

    anchors: np.ndarray
    matrix: np.ndarray

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.anchors.shape[1]

    @cached_property
    def row_means(self) -> np.ndarray:
        return self.matrix.mean(axis=1)

    @cached_property
    def grand_mean(self) -> float:
        return float(self.row_means.mean())

    def matvec(self, c: np.ndarray) -> np.ndarray:
        return self.matrix @ c


def _as_anchors(anchors) -> np.ndarray:
    a = np.asarray(anchors, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValidationError("anchors must be a vector or an (n, d) array")
    if a.shape[0] < 2:
        raise ValidationError("need at least two anchors")
    if not np.all(np.isfinite(a)):
        raise ValidationError("anchors contain non-finite coordinates")
    return a


def distance_matrix(anchors) -> DistanceMatrix:
    """Exact pairwise Euclidean distances of ``n`` anchors in ``d`` dimensions."""
    a = _as_anchors(anchors)
    if a.shape[1] == 1:
        col = a[:, 0]
        mat = np.abs(col[:, None] - col[None, :])
    else:
        mat = cdist(a, a)
    mat.setflags(write=False)
    a.setflags(write=False)
    return DistanceMatrix(a, mat)


def double_center(dm: DistanceMatrix) -> np.ndarray:
    """``D_jk - mean_j - mean_k + grand mean``; rows and columns sum to zero."""
    r = dm.row_means
    return dm.matrix - r[:, None] - r[None, :] + dm.grand_mean


@dataclass(frozen=True, eq=False)
class CfCombination:
    """Zero-sum coefficients over a shared anchor set."""

    anchors: DistanceMatrix
    coef: np.ndarray

    def __post_init__(self):
        coef = np.asarray(self.coef, dtype=float)
        if coef.shape != (self.anchors.n,):
            raise ValidationError(f"expected {self.anchors.n} coefficients, got shape {coef.shape}")
        check_zero_sum(coef)
        object.__setattr__(self, "coef", coef)

    def value(self, s) -> np.ndarray:
        """Evaluate ``sum_k c_k exp(i s.A_k)`` at frequencies ``s`` (shape ``(m, d)`` or ``(m,)``)."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        if s.ndim == 1:
            s = s[:, None]
        return np.exp(1j * s @ self.anchors.anchors.T) @ self.coef


def check_zero_sum(coef: np.ndarray) -> None:
    scale = float(np.max(np.abs(coef), initial=0.0))
    if scale > 0.0 and abs(float(np.sum(coef))) > ZERO_SUM_RTOL * scale:
        raise ValidationError(
            f"coefficients sum to {np.sum(coef):.3e}; the weighted integral diverges unless they sum to zero")


def cf_energy(c: CfCombination, d: CfCombination) -> float:
    """Weighted inner product of two zero-sum combinations, ``-c' D d``.

    The diagonal case ``cf_energy(c, c)`` is a squared norm; tiny negative
    roundoff is clamped to zero.
    """
    if c.anchors is not d.anchors:
        if c.anchors.anchors.shape != d.anchors.anchors.shape or not np.array_equal(
                c.anchors.anchors, d.anchors.anchors):
            raise ValidationError("combinations are defined on different anchor sets")
    val = -float(c.coef @ c.anchors.matvec(d.coef))
    if c is d or np.array_equal(c.coef, d.coef):
        scale = float(np.abs(c.coef) @ c.anchors.matvec(np.abs(c.coef)))
        if -CLAMP_RTOL * scale <= val < 0:
            return 0.0
    return val


def energy_gram(dm: DistanceMatrix, coefs: np.ndarray) -> np.ndarray:
    """Gram matrix ``-C' D C`` for the columns of ``coefs`` (shape ``(n, m)``)."""
    coefs = np.asarray(coefs, dtype=float)
    return -(coefs.T @ (dm.matrix @ coefs))


@dataclass(frozen=True, eq=False)
class InfluenceRep:
    """s-free factorization of a nuisance correction.

    The correction for observation ``j`` is ``sum_p loadings[j, p] * combo_p``
    where ``combo_p`` is the zero-sum combination with coefficients
    ``combos[:, p]`` over the conditioning anchors.
    """

    combos: np.ndarray
    loadings: np.ndarray

    def __post_init__(self):
        combos = np.asarray(self.combos, dtype=float)
        loadings = np.asarray(self.loadings, dtype=float)
        if combos.ndim != 2 or loadings.ndim != 2 or combos.shape[1] != loadings.shape[1]:
            raise ValidationError("combos and loadings must be (n, m) arrays with matching m")
        for p in range(combos.shape[1]):
            check_zero_sum(combos[:, p])
        object.__setattr__(self, "combos", combos)
        object.__setattr__(self, "loadings", loadings)

    @property
    def m(self) -> int:
        return self.combos.shape[1]

    @classmethod
    def empty(cls, n: int) -> "InfluenceRep":
        return cls(np.zeros((n, 0)), np.zeros((n, 0)))

    def common(self, dm: DistanceMatrix) -> list:
        return [CfCombination(dm, self.combos[:, p]) for p in range(self.m)]

    def correction(self, s: float, anchors) -> np.ndarray:
        """Per-observation correction evaluated at a scalar frequency ``s``."""
        a = np.asarray(anchors, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        s = np.atleast_1d(np.asarray(s, dtype=float))
        phase = np.exp(1j * (a @ s))
        return self.loadings @ (self.combos.T @ phase)


# --- numerical quadrature (test oracle) ------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)


def _panel_rule(edges: np.ndarray):
    lo, hi = edges[:-1], edges[1:]
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    nodes = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    weights = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    return nodes, weights


def _panel_edges(s_min: float, s_max: float, max_freq: float, panels: int) -> np.ndarray:
    # log-spaced panels up to the first oscillation scale, then uniform panels
    # of at most a quarter period of the fastest frequency
    knee = min(s_max, max(s_min, 1.0 / max(max_freq, 1e-300)))
    parts = []
    if knee > s_min:
        parts.append(np.geomspace(s_min, knee, panels + 1))
    if s_max > knee:
        width = 0.5 * math.pi / max(max_freq, 1e-300)
        count = max(panels, int(math.ceil((s_max - knee) / width)))
        parts.append(np.linspace(knee, s_max, count + 1))
    if not parts:
        return np.array([s_min, s_max])
    return np.unique(np.concatenate(parts))


def integrate_over_frequency(integrand, s_min: float, s_max: float, max_freq: float,
                             panels: int = 64, rtol: float = 1e-7, max_refine: int = 4) -> float:
    """Composite Gauss-Legendre integral of ``integrand(s)`` over ``[s_min, s_max]``.

    ``integrand`` maps a 1-D array of positive frequencies to real values.
    ``max_freq`` is the fastest oscillation rate present and sets the panel
    width. Panels are doubled until two successive estimates agree to ``rtol``.
    """
    if not 0 < s_min <= s_max:
        raise ValidationError(f"need 0 < s_min <= s_max, got [{s_min}, {s_max}]")
    if s_max == s_min:
        return 0.0
    prev = None
    edges = _panel_edges(s_min, s_max, max_freq, panels)
    for level in range(max_refine + 1):
        if level:
            edges = np.sort(np.concatenate([edges, 0.5 * (edges[1:] + edges[:-1])]))
        nodes, weights = _panel_rule(edges)
        est = 0.0
        chunk = 1 << 15
        for start in range(0, nodes.size, chunk):
            sl = slice(start, start + chunk)
            est += float(weights[sl] @ integrand(nodes[sl]))
        if prev is not None and abs(est - prev) <= rtol * max(abs(est), 1e-12):
            return est
        prev = est
    raise NumericalError(
        f"quadrature did not converge: estimate {est:.10g}, last change {abs(est - prev):.3e}")


def quadrature_oracle(c: CfCombination, d: CfCombination, s_min: float = 1e-4,
                      s_max: float = 1e4, panels: int = 64) -> float:
    """Numerically integrate ``pi^{-1} * 2 * int Re[C(s) conj(D(s))] s^{-2} ds`` over ``[s_min, s_max]``.

    Scalar anchors only. For zero-sum combinations ``C(s) = O(s)`` near the
    origin, so the truncation error is ``O(s_min)`` at the lower end and
    ``O(1/s_max)`` at the upper end.
    """
    if c.anchors.dim != 1:
        raise ValidationError("quadrature oracle supports scalar anchors only")
    if s_max == s_min:
        return 0.0
    a = c.anchors.anchors[:, 0]
    spread = float(a.max() - a.min())

    def integrand(s):
        phase = np.exp(1j * np.outer(s, a))
        cv = phase @ c.coef
        dv = phase @ d.coef
        return (cv * np.conj(dv)).real / s ** 2

    return 2.0 / math.pi * integrate_over_frequency(integrand, s_min, s_max, spread, panels)
