"""Feature bases for bridge functions and instruments.

Basis specification strings:

``poly:k``
    monomials ``1, w, ..., w^k``.
``pol:r``
    power series with ``r`` terms (degree ``r - 1``).
``pspline:r:k``
    degree ``r`` polynomial spline with ``k`` interior knots at equally spaced
    sample quantiles (B-spline basis, dimension ``r + k + 1``).
``linear``, ``quadratic``
    aliases for ``poly:1`` and ``poly:2``.

A suffix ``+linear-covariates`` appends the covariates as linear terms;
``+poly-covariates`` turns a polynomial basis into all monomials of the same
total degree in the argument and the covariates jointly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

from .errors import ConfigurationError

_ALIASES = {"linear": "poly:1", "quadratic": "poly:2", "cubic": "poly:3"}
_COVARIATE_MODES = {"": "none", "linear-covariates": "linear", "poly-covariates": "poly"}


@dataclass(frozen=True)
class BasisSpec:
    kind: str
    degree: int
    knots: int = 0
    covariates: str = "none"

    def text(self) -> str:
        head = f"poly:{self.degree}" if self.kind == "poly" else f"pspline:{self.degree}:{self.knots}"
        if self.covariates != "none":
            head += f"+{self.covariates}-covariates"
        return head

    def fit(self, arg, v=None, rescale: bool = False) -> "FittedBasis":
        """Record rescaling bounds and knots from the training sample."""
        arg = np.asarray(arg, dtype=float)
        v = _covariate_block(v, arg.shape[0])
        if self.covariates == "none":
            v = v[:, :0]
        inputs = np.column_stack([arg, v])
        if rescale or self.kind == "pspline":
            lo = inputs.min(axis=0)
            span = inputs.max(axis=0) - lo
            span[span == 0] = 1.0
        else:
            lo = np.zeros(inputs.shape[1])
            span = np.ones(inputs.shape[1])
        knots = None
        if self.kind == "pspline":
            u = (arg - lo[0]) / span[0]
            interior = np.quantile(u, np.arange(1, self.knots + 1) / (self.knots + 1))
            knots = np.concatenate([np.zeros(self.degree + 1), interior, np.ones(self.degree + 1)])
        return FittedBasis(self, lo, span, knots)


def parse_basis(text) -> BasisSpec:
    """Parse a basis specification string (see module docstring)."""
    if isinstance(text, BasisSpec):
        return text
    raw = str(text).strip().lower()
    head, _, suffix = raw.partition("+")
    if suffix not in _COVARIATE_MODES:
        raise ConfigurationError(f"unknown basis suffix {'+' + suffix!r} in {text!r}")
    covariates = _COVARIATE_MODES[suffix]
    head = _ALIASES.get(head, head)
    parts = head.split(":")
    try:
        if parts[0] == "poly" and len(parts) == 2:
            spec = BasisSpec("poly", int(parts[1]), 0, covariates)
        elif parts[0] == "pol" and len(parts) == 2:
            spec = BasisSpec("poly", int(parts[1]) - 1, 0, covariates)
        elif parts[0] == "pspline" and len(parts) == 3:
            spec = BasisSpec("pspline", int(parts[1]), int(parts[2]), covariates)
        else:
            raise ValueError
    except ValueError:
        raise ConfigurationError(f"cannot parse basis specification {text!r}") from None
    if spec.degree < 1:
        raise ConfigurationError(f"basis {text!r} needs degree >= 1")
    if spec.kind == "pspline" and spec.knots < 0:
        raise ConfigurationError(f"basis {text!r} needs a non-negative knot count")
    if spec.kind == "pspline" and covariates == "poly":
        raise ConfigurationError("+poly-covariates is only available for polynomial bases")
    return spec


def _covariate_block(v, n) -> np.ndarray:
    if v is None:
        return np.empty((n, 0))
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    return v


@dataclass(frozen=True, eq=False)
class FittedBasis:
    """A basis with its input rescaling (and knots) fixed."""

    spec: BasisSpec
    lo: np.ndarray
    span: np.ndarray
    knots: np.ndarray | None = None
    _exponents: list = field(init=False, repr=False)

    def __post_init__(self):
        p = len(self.lo) - 1
        if self.spec.kind == "poly" and self.spec.covariates == "poly":
            exps = [e for total in range(self.spec.degree + 1)
                    for e in _compositions(total, p + 1)]
        else:
            exps = None
        object.__setattr__(self, "_exponents", exps)

    @property
    def n_inputs(self) -> int:
        return len(self.lo)

    @property
    def dim(self) -> int:
        if self._exponents is not None:
            return len(self._exponents)
        if self.spec.kind == "poly":
            main = self.spec.degree + 1
        else:
            main = self.spec.degree + self.spec.knots + 1
        extra = self.n_inputs - 1 if self.spec.covariates == "linear" else 0
        return main + extra

    def _inputs(self, arg, v) -> np.ndarray:
        arg = np.asarray(arg, dtype=float)
        v = _covariate_block(v, arg.shape[0])
        if self.spec.covariates == "none":
            v = v[:, :0]
        if v.shape[1] != self.n_inputs - 1:
            raise ConfigurationError(
                f"basis was fitted with {self.n_inputs - 1} covariates, got {v.shape[1]}")
        return (np.column_stack([arg, v]) - self.lo) / self.span

    def _main(self, u: np.ndarray, deriv: int) -> np.ndarray:
        if self.spec.kind == "poly":
            deg = self.spec.degree
            powers = np.arange(deg + 1)
            if deriv == 0:
                return u[:, None] ** powers
            coef = powers.astype(float)
            lowered = np.maximum(powers - 1, 0)
            return coef * u[:, None] ** lowered
        q = len(self.knots) - self.spec.degree - 1
        spline = BSpline(self.knots, np.eye(q), self.spec.degree, extrapolate=True)
        if deriv:
            spline = spline.derivative(deriv)
        return spline(u)

    def evaluate(self, arg, v=None) -> np.ndarray:
        """Design matrix, shape ``(n, dim)``."""
        u = self._inputs(arg, v)
        if self._exponents is not None:
            return np.column_stack([np.prod(u ** np.array(e), axis=1) for e in self._exponents])
        cols = [self._main(u[:, 0], 0)]
        if self.spec.covariates == "linear":
            cols.append(u[:, 1:])
        return np.column_stack(cols)

    def derivatives(self, arg, v=None) -> list:
        """Derivative design matrices with respect to each original input
        (argument first, then covariates)."""
        u = self._inputs(arg, v)
        n = u.shape[0]
        out = []
        for i in range(self.n_inputs):
            if self._exponents is not None:
                cols = []
                for e in self._exponents:
                    e = np.array(e)
                    if e[i] == 0:
                        cols.append(np.zeros(n))
                        continue
                    lowered = e.copy()
                    lowered[i] -= 1
                    cols.append(e[i] * np.prod(u ** lowered, axis=1))
                mat = np.column_stack(cols)
            elif i == 0:
                mat = self._main(u[:, 0], 1)
                if self.spec.covariates == "linear":
                    mat = np.column_stack([mat, np.zeros((n, self.n_inputs - 1))])
            else:
                mat = np.zeros((n, self.dim))
                mat[:, self.dim - (self.n_inputs - 1) + (i - 1)] = 1.0
            out.append(mat / self.span[i])
        return out


def _compositions(total: int, parts: int):
    """Exponent tuples of ``parts`` non-negative integers summing to ``total``."""
    for cut in itertools.combinations(range(total + parts - 1), parts - 1):
        bounds = (-1,) + cut + (total + parts - 1,)
        yield tuple(bounds[i + 1] - bounds[i] - 1 for i in range(parts))
