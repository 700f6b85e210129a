"""Nonparametric bridge estimation by penalized sieve minimum distance.

With a linear sieve ``h(w) = gamma' xi(w)`` and the conditional mean
``E{Y - h(W) | Z}`` estimated by least squares on instrument functions
``p(z)``, the empirical criterion is
``Q_n(gamma) = n^{-1} (Y - Xi gamma)' H (Y - Xi gamma)`` with ``H`` the
projection onto the span of the instrument design. Adding
``lambda * gamma' G gamma`` keeps it quadratic, so the minimizer is

    gamma = (Xi' H Xi + n lambda G)^{-1} Xi' H Y.

Arguments and instruments are mapped affinely onto ``[0, 1]`` before the
basis is evaluated; penalties are computed for the function of the original
variable, so the fitted function does not depend on that rescaling.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .bases import FittedBasis, parse_basis
from .dataset import ObservationTable
from .energy import InfluenceRep
from .errors import ConfigurationError, IdentificationError, NumericalError

COND_LIMIT = 1e12
PINV_RTOL = 1e-10
PENALTIES = ("l2", "l2+grad", "none")

SIMULATION_LAMBDA = 4e-5
DATA_LAMBDA = 1e-5


def _projection_factor(p: np.ndarray) -> np.ndarray:
    """Orthonormal basis ``U`` of the column span of ``p`` so that ``H = U U'``."""
    u, s, _ = np.linalg.svd(p, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise IdentificationError("instrument design is identically zero")
    keep = s > PINV_RTOL * s[0]
    return u[:, keep]


def _with_covariates(spec, table):
    if table.covariates and spec.covariates == "none":
        return replace(spec, covariates="linear")
    return spec


@dataclass(frozen=True, eq=False)
class SieveBridge:
    """Fitted PSMD bridge.

    Attributes
    ----------
    gamma : ndarray, shape (q,)
        Sieve coefficients (for the rescaled basis).
    penalty_gram : ndarray, shape (q, q)
        ``G`` with ``Pen(h) = gamma' G gamma``.
    lam : float
    d_n : ndarray, shape (q, q)
        ``n^{-1} sum_j E[xi(W)|Z_j] E[xi(W)|Z_j]'``.
    d_n_pinv : ndarray, shape (q, q)
    """

    argument: str
    instrument: str
    basis: FittedBasis
    instruments: FittedBasis
    gamma: np.ndarray
    penalty: str
    lam: float
    penalty_gram: np.ndarray
    proj: np.ndarray
    d_n: np.ndarray
    d_n_pinv: np.ndarray

    kind = "psmd"

    def __call__(self, arg, v=None) -> np.ndarray:
        return self.basis.evaluate(arg, v) @ self.gamma

    def predict(self, table: ObservationTable) -> np.ndarray:
        return self(table.role(self.argument), table.v)

    def residuals(self, table: ObservationTable) -> np.ndarray:
        return table.y - self.predict(table)

    def projection_matrix(self) -> np.ndarray:
        """Dense ``H`` (``n x n``); for diagnostics."""
        return self.proj @ self.proj.T

    def criterion(self, table: ObservationTable, gamma=None) -> float:
        """Penalized criterion ``Q_n(gamma) + lambda * gamma' G gamma``."""
        gamma = self.gamma if gamma is None else np.asarray(gamma, dtype=float)
        xi = self.basis.evaluate(table.role(self.argument), table.v)
        r = self.proj.T @ (table.y - xi @ gamma)
        return float(r @ r / table.n + self.lam * gamma @ self.penalty_gram @ gamma)

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "argument": self.argument,
            "basis": self.basis.spec.text(),
            "instruments": self.instruments.spec.text(),
            "penalty": self.penalty,
            "lambda": self.lam,
            "coefficients": [float(g) for g in self.gamma],
        }


def penalty_gram(basis: FittedBasis, arg, v, penalty: str) -> np.ndarray:
    """Empirical penalty Gram: ``n^{-1} Xi'Xi`` plus ``n^{-1} sum_i dXi_i' dXi_i`` for ``l2+grad``."""
    if penalty not in PENALTIES:
        raise ConfigurationError(f"unknown penalty {penalty!r}; choose from {', '.join(PENALTIES)}")
    xi = basis.evaluate(arg, v)
    n = xi.shape[0]
    if penalty == "none":
        return np.zeros((xi.shape[1], xi.shape[1]))
    gram = xi.T @ xi / n
    if penalty == "l2+grad":
        for dxi in basis.derivatives(arg, v):
            gram = gram + dxi.T @ dxi / n
    return gram


def fit_psmd(table: ObservationTable, argument: str = "W", instrument: str = "Z",
             arg_basis="pol:4", inst_basis="pol:7", penalty: str = "l2+grad",
             lam: float = SIMULATION_LAMBDA) -> SieveBridge:
    """Closed-form PSMD fit of the bridge with target Y.

    Parameters
    ----------
    arg_basis, inst_basis : str or BasisSpec
        Sieve for the bridge argument and for the instrument regressions.
        Covariates are added as linear terms unless the basis specification says otherwise.
    penalty : {"l2", "l2+grad", "none"}
    lam : float
        Penalty weight ``lambda_n`` (>= 0).
    """
    if {argument, instrument} != {"W", "Z"}:
        raise ConfigurationError("bridge argument and instrument must be the roles W and Z (either order)")
    if lam < 0:
        raise ConfigurationError("penalty weight must be non-negative")
    aspec = _with_covariates(parse_basis(arg_basis), table)
    ispec = _with_covariates(parse_basis(inst_basis), table)
    arg, instr, v = table.role(argument), table.role(instrument), table.v
    fa = aspec.fit(arg, v, rescale=True)
    fi = ispec.fit(instr, v, rescale=True)
    if fa.dim < 2:
        raise ConfigurationError("sieve dimension must be at least 2")
    if fi.dim < fa.dim:
        raise ConfigurationError(
            f"instrument sieve dimension ({fi.dim}) must be at least the bridge sieve dimension ({fa.dim})")
    n = table.n
    if n <= fi.dim:
        raise ConfigurationError(f"need more observations than instrument functions ({fi.dim})")
    xi = fa.evaluate(arg, v)
    pz = fi.evaluate(instr, v)
    proj = _projection_factor(pz)
    hxi_r = proj.T @ xi
    hy_r = proj.T @ table.y
    gram = penalty_gram(fa, arg, v, penalty)
    lhs = hxi_r.T @ hxi_r + n * lam * gram
    if np.linalg.cond(lhs) > COND_LIMIT:
        raise NumericalError("PSMD normal equations are ill-conditioned; "
                             "increase the penalty weight or reduce the sieve dimension")
    gamma = np.linalg.solve(lhs, hxi_r.T @ hy_r)
    d_n = hxi_r.T @ hxi_r / n
    d_n = 0.5 * (d_n + d_n.T)
    d_pinv = _pinv(d_n)
    return SieveBridge(argument, instrument, fa, fi, gamma, penalty, lam, gram, proj, d_n, d_pinv)


def _pinv(mat: np.ndarray) -> np.ndarray:
    u, s, vt = np.linalg.svd(mat)
    if s.size == 0 or s[0] <= 0.0 or not np.isfinite(s[0]):
        raise IdentificationError("D_n is numerically zero: the instruments carry no information "
                                  "about the sieve (completeness failure)")
    inv = np.where(s > PINV_RTOL * s[0], 1.0 / np.where(s > 0, s, 1.0), 0.0)
    return (vt.T * inv) @ u.T


def influence_rep_psmd(bridge: SieveBridge, table: ObservationTable) -> InfluenceRep:
    """Factor ``{Y_j - h(W_j)} E[v*_s(W) | Z_j]`` into combinations and loadings.

    Combination ``l`` is the Gateaux derivative of the centred characteristic
    covariance in direction ``xi_l``: coefficients ``-n^{-1} (xi_l(W_k) - mean)``.
    Loadings are ``R_j * E[xi(W)|Z_j]' D_n^-``.
    """
    arg, instr, v = table.role(bridge.argument), table.role(bridge.instrument), table.v
    xi = bridge.basis.evaluate(arg, v)
    n = table.n
    proj = _projection_factor(bridge.instruments.evaluate(instr, v))
    cond_xi = proj @ (proj.T @ xi)
    resid = table.y - xi @ bridge.gamma
    combos = -(xi - xi.mean(axis=0)) / n
    loadings = resid[:, None] * (cond_xi @ bridge.d_n_pinv)
    return InfluenceRep(combos, loadings)
