"""Classical vanishing-tetrad test with a distribution-free covariance estimate."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .dataset import ObservationTable, residualize
from .errors import ConfigurationError, NumericalError

# distinct covariance pairs (0-based variable indices), in Jacobian column order
PAIRS = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))


def tetrad_differences(sigma) -> np.ndarray:
    """``(s12 s34 - s13 s24, s12 s34 - s14 s23, s13 s24 - s14 s23)``.

    The third entry equals the second minus the first.
    """
    s = np.asarray(sigma, dtype=float)
    a = s[0, 1] * s[2, 3]
    b = s[0, 2] * s[1, 3]
    c = s[0, 3] * s[1, 2]
    return np.array([a - b, a - c, b - c])


def _tetrad_pair(s: np.ndarray) -> np.ndarray:
    # (s_XY s_ZW - s_XW s_YZ, s_XY s_ZW - s_XZ s_YW)
    a = s[0, 1] * s[2, 3]
    return np.array([a - s[0, 3] * s[1, 2], a - s[0, 2] * s[1, 3]])


def _tetrad_jacobian(s: np.ndarray) -> np.ndarray:
    # rows: the two tetrads; columns: PAIRS
    return np.array([
        [s[2, 3], 0.0, -s[1, 2], -s[0, 3], 0.0, s[0, 1]],
        [s[2, 3], -s[1, 3], 0.0, 0.0, -s[0, 2], s[0, 1]],
    ])


@dataclass(frozen=True)
class CtReport:
    sigma: np.ndarray
    t_hat: np.ndarray
    t_cov: np.ndarray
    statistic: float
    df: int
    p_value: float
    alpha: float
    reject: bool
    n: int
    method: str = "ct"

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "n": self.n,
            "alpha": self.alpha,
            "statistic": self.statistic,
            "df": self.df,
            "p_value": self.p_value,
            "reject": self.reject,
            "t_hat": [float(v) for v in self.t_hat],
            "t_cov": [[float(v) for v in row] for row in self.t_cov],
        }


def tetrad_covariance(data: np.ndarray):
    """Sample covariance (denominator n), the two tetrads and the asymptotic
    covariance of ``sqrt(n) * t_hat`` by the delta method."""
    n = data.shape[0]
    centered = data - data.mean(axis=0)
    sigma = centered.T @ centered / n
    m = np.column_stack([centered[:, i] * centered[:, j] for i, j in PAIRS])
    svec = np.array([sigma[i, j] for i, j in PAIRS])
    gamma = m.T @ m / n - np.outer(svec, svec)
    jac = _tetrad_jacobian(sigma)
    return sigma, _tetrad_pair(sigma), jac @ gamma @ jac.T


def classical_test(table: ObservationTable, alpha: float = 0.05) -> CtReport:
    """Wald test of the two vanishing tetrads against chi-square(2).

    Covariates, when present, are partialled out by linear regression first.
    """
    if not 0.0 < alpha < 1.0:
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")
    if table.covariates:
        table = residualize(table)
    n = table.n
    if n < 20:
        warnings.warn(f"classical tetrad test with only n={n} observations", stacklevel=2)
    data = np.column_stack([table.x, table.y, table.z, table.w])
    sigma, t_hat, t_cov = tetrad_covariance(data)
    if not np.all(np.isfinite(t_cov)) or np.linalg.cond(t_cov) > 1e12:
        raise NumericalError("tetrad covariance estimate is singular (degenerate fourth moments); "
                             "a larger sample may help")
    stat = float(n * t_hat @ np.linalg.solve(t_cov, t_hat))
    stat = max(stat, 0.0)
    p = float(stats.chi2.sf(stat, 2))
    return CtReport(sigma, t_hat, t_cov, stat, 2, p, alpha, p < alpha, n)
