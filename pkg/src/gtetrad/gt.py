"""The generalized tetrad test.

For a fitted bridge ``h`` with residuals ``R_j = Y_j - h(W_j)`` the squared
measure of generalized tetrad difference is

    MGT_n(h)^2 = -n^{-2} (R - Rbar)' D (R - Rbar),

with ``D`` the distance matrix of the conditioning block (``X``, or ``(X, V)``
with covariates). The standardizer ``S_n(h)`` averages, over observations,
the weighted squared norm of ``R_j (e_j - 1/n) + sum_p kappa_jp c_p``, where
``(c_p, kappa)`` is the influence representation of the bridge estimator.
The statistic ``T_n = n (MGT_n(h)^2 + MGT_n(g)^2) / (S_n(h) + S_n(g))`` is
compared with ``z_{1 - alpha/2}^2``, which bounds the level for
``alpha <= 0.215``.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import bridge_gmm, bridge_psmd
from .dataset import ObservationTable, RolePermutation, enumerate_permutations
from .energy import DistanceMatrix, InfluenceRep, distance_matrix, double_center
from .errors import ConfigurationError, DegenerateDataError, GTetradError, NumericalError, ValidationError

ALPHA_MAX = 0.215
CLAMP_RTOL = 1e-10
DEGENERATE_RTOL = 1e-12
METHODS = ("gmm", "psmd")


@dataclass(frozen=True)
class GtConfig:
    """Bridge estimation settings for both ``h0`` (argument W) and ``g0`` (argument Z).

    ``basis_g``/``instrument_g`` default to the ``h`` settings.
    """

    method: str = "gmm"
    basis_h: str = "poly:1"
    basis_g: str | None = None
    instrument_h: str | None = None
    instrument_g: str | None = None
    lam: float = bridge_psmd.SIMULATION_LAMBDA
    penalty: str = "l2+grad"
    omega: object = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown method {self.method!r}; choose from {', '.join(METHODS)}")

    @classmethod
    def gmm(cls, basis: str = "poly:1", instruments: str | None = None) -> "GtConfig":
        return cls("gmm", basis, None, instruments, None)

    @classmethod
    def psmd(cls, basis: str = "pol:4", instruments: str = "pol:7",
             lam: float = bridge_psmd.SIMULATION_LAMBDA, penalty: str = "l2+grad") -> "GtConfig":
        return cls("psmd", basis, None, instruments, None, lam, penalty)

    @classmethod
    def psmd_data(cls) -> "GtConfig":
        """Sieve settings for real-data analyses: Pol(6)/Pol(9), L2 penalty, lambda 1e-5."""
        return cls.psmd("pol:6", "pol:9", bridge_psmd.DATA_LAMBDA, "l2")

    def for_bridge(self, which: str) -> tuple:
        if which == "h":
            basis, inst = self.basis_h, self.instrument_h
        else:
            basis = self.basis_g or self.basis_h
            inst = self.instrument_g or self.instrument_h
        return basis, inst

    def to_dict(self) -> dict:
        out = {"method": self.method, "basis_h": self.basis_h, "basis_g": self.basis_g or self.basis_h,
               "instrument_h": self.instrument_h, "instrument_g": self.instrument_g or self.instrument_h}
        if self.method == "psmd":
            out.update(lam=self.lam, penalty=self.penalty)
        return out


def fit_bridge(table: ObservationTable, config: GtConfig, which: str):
    """Fit ``h0`` (``which="h"``: argument W, instrument Z) or ``g0`` (``"g"``)."""
    argument, instrument = ("W", "Z") if which == "h" else ("Z", "W")
    basis, inst = config.for_bridge(which)
    if config.method == "gmm":
        return bridge_gmm.fit_gmm(table, argument, instrument, basis, inst, config.omega)
    return bridge_psmd.fit_psmd(table, argument, instrument, basis, inst or "pol:7",
                                config.penalty, config.lam)


def bridge_influence(bridge, table: ObservationTable) -> InfluenceRep:
    if bridge.kind == "gmm":
        return bridge_gmm.influence_rep(bridge, table)
    return bridge_psmd.influence_rep_psmd(bridge, table)


# --- statistics ------------------------------------------------------------

def mgt_sq(residuals, dm: DistanceMatrix) -> float:
    """``-n^{-2} (R - Rbar)' D (R - Rbar)``, clamped at zero within roundoff."""
    r = np.asarray(residuals, dtype=float)
    n = r.shape[0]
    rc = r - r.mean()
    val = -float(rc @ dm.matvec(rc)) / n ** 2
    if os.environ.get("GTETRAD_DEBUG"):
        other = mgt_sq_centered(r, dm)
        assert abs(val - other) <= 1e-9 * max(1.0, abs(val)), (val, other)
    return _clamp(val, rc, dm, n)


def mgt_sq_centered(residuals, dm: DistanceMatrix) -> float:
    """Same quantity through the double-centred matrix: ``-n^{-2} sum R_j R_k Delta_jk``."""
    r = np.asarray(residuals, dtype=float)
    n = r.shape[0]
    rc = r - r.mean()
    val = -float(rc @ double_center(dm) @ rc) / n ** 2
    return _clamp(val, rc, dm, n)


def _clamp(val: float, rc: np.ndarray, dm: DistanceMatrix, n: int) -> float:
    if val >= 0:
        return val
    scale = float(np.abs(rc) @ dm.matvec(np.abs(rc))) / n ** 2
    if val >= -CLAMP_RTOL * scale - 1e-300:
        return 0.0
    raise NumericalError(f"negative squared measure {val:.3e} beyond roundoff")


def s_n_component(residuals, influence: InfluenceRep, dm: DistanceMatrix) -> float:
    """Standardizer ``S_n(h)`` for one bridge via the distance identity.

    Expands ``n^{-1} sum_j |R_j (e_j - 1/n) + sum_p kappa_jp c_p|^2_w`` as
    ``R_j^2 (2 dbar_j - dbarbar) + 2 R_j kappa_j' K_j + kappa_j' G kappa_j``.
    """
    r = np.asarray(residuals, dtype=float)
    n = dm.n
    if r.shape != (n,) or influence.combos.shape[0] != n or influence.loadings.shape[0] != n:
        raise ValidationError("residuals, influence representation and anchors must have the same n")
    own = r ** 2 * (2.0 * dm.row_means - dm.grand_mean)
    total = float(own.sum())
    if influence.m:
        dc = dm.matvec(influence.combos)
        cross = -(dc - dc.mean(axis=0))
        gram = -(influence.combos.T @ dc)
        kap = influence.loadings
        total += 2.0 * float(np.sum(r[:, None] * kap * cross))
        total += float(np.einsum("jp,pq,jq->", kap, gram, kap))
    return max(total / n, 0.0)


def threshold(alpha: float) -> float:
    """Critical value ``z_{1-alpha/2}^2``."""
    return float(stats.norm.ppf(1.0 - alpha / 2.0) ** 2)


def check_alpha(alpha: float) -> None:
    if not 0.0 < alpha <= ALPHA_MAX:
        raise ConfigurationError(
            f"alpha={alpha} is outside (0, {ALPHA_MAX}]; the chi-square(1) bound only controls the "
            f"level for alpha <= {ALPHA_MAX}")


@dataclass(frozen=True)
class GtReport:
    mgt_h_sq: float
    mgt_g_sq: float
    amgt_sq: float
    s_n_h: float
    s_n_g: float
    s_n: float
    t_n: float
    p_value: float
    alpha: float
    threshold: float
    reject: bool
    n: int
    method: str
    permutation: str = "(1,2,3,4)"
    bridges: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "permutation": self.permutation,
            "n": self.n,
            "alpha": self.alpha,
            "mgt_h_sq": self.mgt_h_sq,
            "mgt_g_sq": self.mgt_g_sq,
            "amgt_sq": self.amgt_sq,
            "s_n_h": self.s_n_h,
            "s_n_g": self.s_n_g,
            "s_n": self.s_n,
            "t_n": self.t_n,
            "threshold": self.threshold,
            "p_value": self.p_value,
            "reject": self.reject,
            "bridges": self.bridges,
        }


def gt_statistic(table: ObservationTable, resid_h, resid_g, infl_h: InfluenceRep,
                 infl_g: InfluenceRep, alpha: float = 0.05, method: str = "custom",
                 dm: DistanceMatrix | None = None, bridges: dict | None = None,
                 permutation: str = "(1,2,3,4)") -> GtReport:
    """Assemble the test from residuals and influence representations of both bridges.

    With empty influence representations this is the test for known bridges.
    """
    check_alpha(alpha)
    if dm is None:
        dm = distance_matrix(table.block("X"))
    n = table.n
    mh = mgt_sq(resid_h, dm)
    mg = mgt_sq(resid_g, dm)
    sh = s_n_component(resid_h, infl_h, dm)
    sg = s_n_component(resid_g, infl_g, dm)
    s = sh + sg
    scale = float(np.var(table.y)) * dm.grand_mean
    if not s > DEGENERATE_RTOL * scale or not math.isfinite(s):
        raise DegenerateDataError("standardizer S_n is zero; the residuals carry no variation")
    t = n * (mh + mg) / s
    crit = threshold(alpha)
    p = float(stats.chi2.sf(t, 1))
    return GtReport(mh, mg, mh + mg, sh, sg, s, t, p, alpha, crit, bool(t >= crit), n, method,
                    permutation, bridges or {})


def gt_test(table: ObservationTable, method: str = "gmm", config: GtConfig | None = None,
            alpha: float = 0.05, permutation: str = "(1,2,3,4)") -> GtReport:
    """Generalized tetrad test of ``X, Y, Z, W`` independent given one latent factor.

    Parameters
    ----------
    table : ObservationTable
        Covariates, when present, enter the bridges linearly and join ``X``
        in the conditioning block.
    method : {"gmm", "psmd"}
        Used to pick default bridge settings when ``config`` is omitted.
    config : GtConfig, optional
    alpha : float
        Level in ``(0, 0.215]``.
    """
    check_alpha(alpha)
    if config is None:
        config = GtConfig.gmm() if method == "gmm" else GtConfig.psmd()
    h = fit_bridge(table, config, "h")
    g = fit_bridge(table, config, "g")
    dm = distance_matrix(table.block("X"))
    return gt_statistic(
        table, h.residuals(table), g.residuals(table),
        bridge_influence(h, table), bridge_influence(g, table),
        alpha, f"gt-{config.method}", dm, {"h": h.summary(), "g": g.summary()}, permutation)


@dataclass
class SweepEntry:
    permutation: RolePermutation
    report: GtReport | None
    error: str | None = None

    def __iter__(self):
        return iter((self.permutation, self.report))

    def to_dict(self) -> dict:
        if self.report is not None:
            return self.report.to_dict()
        return {"permutation": self.permutation.label, "error": self.error}


def permutation_sweep(table: ObservationTable, method: str = "gmm", config: GtConfig | None = None,
                      alpha: float = 0.05) -> list:
    """Run :func:`gt_test` for all 12 role assignments; failures are recorded, not raised."""
    check_alpha(alpha)
    out = []
    for perm in enumerate_permutations(table):
        try:
            report = gt_test(table.apply(perm), method, config, alpha, perm.label)
            out.append(SweepEntry(perm, report))
        except GTetradError as exc:
            out.append(SweepEntry(perm, None, f"{type(exc).__name__}: {exc}"))
    return out
