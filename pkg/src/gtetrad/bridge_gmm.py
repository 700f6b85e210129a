"""Parametric confounding-bridge estimation by the generalized method of moments.

The bridge ``h(w; theta) = theta' phi(w)`` is linear in its parameters, so the
GMM criterion ``m_n(theta)' Omega m_n(theta)`` with moments
``m_n(theta) = n^{-1} sum_j {Y_j - h(W_j; theta)} B(Z_j)`` is quadratic and is
minimized in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .bases import BasisSpec, FittedBasis, parse_basis
from .dataset import ObservationTable
from .energy import InfluenceRep
from .errors import ConfigurationError, IdentificationError

COND_LIMIT = 1e12


def _with_covariates(spec: BasisSpec, table: ObservationTable) -> BasisSpec:
    if table.covariates and spec.covariates == "none":
        return replace(spec, covariates="linear")
    return spec


def _check_roles(argument: str, instrument: str) -> None:
    if {argument, instrument} != {"W", "Z"}:
        raise ConfigurationError("bridge argument and instrument must be the roles W and Z (either order)")


@dataclass(frozen=True, eq=False)
class ParametricBridge:
    """Fitted GMM bridge.

    Attributes
    ----------
    theta : ndarray, shape (p,)
    jacobian : ndarray, shape (k, p)
        ``M = d m_n / d theta'`` at the solution, equal to ``-n^{-1} sum B phi'``.
    sigma1 : ndarray, shape (p, k)
        ``(M' Omega M)^{-1} M' Omega``.
    """

    argument: str
    instrument: str
    basis: FittedBasis
    instruments: FittedBasis
    theta: np.ndarray
    omega: np.ndarray
    jacobian: np.ndarray
    sigma1: np.ndarray

    kind = "gmm"

    def __call__(self, arg, v=None) -> np.ndarray:
        return self.basis.evaluate(arg, v) @ self.theta

    def predict(self, table: ObservationTable) -> np.ndarray:
        return self(table.role(self.argument), table.v)

    def residuals(self, table: ObservationTable) -> np.ndarray:
        return table.y - self.predict(table)

    def moments(self, table: ObservationTable, theta=None) -> np.ndarray:
        """Sample moment vector ``m_n(theta)`` (default: at the estimate)."""
        theta = self.theta if theta is None else np.asarray(theta, dtype=float)
        phi = self.basis.evaluate(table.role(self.argument), table.v)
        b = self.instruments.evaluate(table.role(self.instrument), table.v)
        return b.T @ (table.y - phi @ theta) / table.n

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "argument": self.argument,
            "basis": self.basis.spec.text(),
            "instruments": self.instruments.spec.text(),
            "coefficients": [float(t) for t in self.theta],
        }


def fit_gmm(table: ObservationTable, argument: str = "W", instrument: str = "Z",
            basis="poly:1", instruments=None, omega=None) -> ParametricBridge:
    """Fit ``E[{Y - h(arg; theta)} B(instr)] = 0`` by linear GMM.

    Parameters
    ----------
    table : ObservationTable
    argument, instrument : {"W", "Z"}
        Bridge argument and instrument roles (``h0``: W/Z, ``g0``: Z/W).
    basis : str or BasisSpec
        Bridge features; covariates are added as linear terms when the table
        has any.
    instruments : str or BasisSpec, optional
        Instrument features; defaults to the same specification as ``basis``.
    omega : array_like, optional
        Positive-definite weight matrix (default identity; inert when just
        identified).
    """
    _check_roles(argument, instrument)
    bspec = _with_covariates(parse_basis(basis), table)
    ispec = _with_covariates(parse_basis(instruments if instruments is not None else basis), table)
    arg, instr, v = table.role(argument), table.role(instrument), table.v
    fb = bspec.fit(arg, v)
    fi = ispec.fit(instr, v)
    phi = fb.evaluate(arg, v)
    b = fi.evaluate(instr, v)
    n, p = phi.shape
    k = b.shape[1]
    if k < p:
        raise ConfigurationError(f"need at least as many instruments ({k}) as parameters ({p})")
    if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(b))):
        raise ConfigurationError("basis or instrument features are not finite on the sample")
    a = b.T @ phi / n
    rhs = b.T @ table.y / n
    omega = np.eye(k) if omega is None else np.asarray(omega, dtype=float)
    if omega.shape != (k, k):
        raise ConfigurationError(f"weight matrix must be {k}x{k}")
    if k == p:
        if np.linalg.cond(a) > COND_LIMIT:
            raise IdentificationError(
                "instrument and basis nearly orthogonal (completeness plausibly violated)")
        theta = np.linalg.solve(a, rhs)
    else:
        normal = a.T @ omega @ a
        if np.linalg.cond(normal) > COND_LIMIT:
            raise IdentificationError(
                "instrument and basis nearly orthogonal (completeness plausibly violated)")
        theta = np.linalg.solve(normal, a.T @ omega @ rhs)
    jac = -a
    sigma1 = np.linalg.solve(jac.T @ omega @ jac, jac.T @ omega)
    return ParametricBridge(argument, instrument, fb, fi, theta, omega, jac, sigma1)


def influence_rep(bridge: ParametricBridge, table: ObservationTable) -> InfluenceRep:
    """Factor the estimated influence term into common combinations and loadings.

    Combination ``p`` has coefficients ``n^{-1} (d h(W_k)/d theta_p - mean)``;
    the loadings are ``Sigma1 J(O_j; theta_hat)``.
    """
    arg, instr, v = table.role(bridge.argument), table.role(bridge.instrument), table.v
    grad = bridge.basis.evaluate(arg, v)
    b = bridge.instruments.evaluate(instr, v)
    n = table.n
    combos = (grad - grad.mean(axis=0)) / n
    resid = table.y - grad @ bridge.theta
    moments = resid[:, None] * b
    loadings = moments @ bridge.sigma1.T
    return InfluenceRep(combos, loadings)
