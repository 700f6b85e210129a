"""Observed data: tables with role assignments, CSV I/O, permutations and
covariate residualization."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, NumericalError, ParseError, ValidationError

ROLES = ("X", "Y", "Z", "W")


def _is_constant(values: np.ndarray) -> bool:
    scale = max(1.0, float(np.max(np.abs(values)))) if values.size else 1.0
    return float(np.std(values)) <= 1e-12 * scale


def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ObservationTable:
    """Immutable numeric dataset with role assignments.

    Parameters
    ----------
    columns : mapping of str to array_like
        Named numeric columns, all of equal length.
    roles : mapping of str to str
        Column name for each of the roles ``X``, ``Y``, ``Z`` and ``W``.
    covariates : sequence of str, optional
        Ordered covariate column names (the ``V`` block).
    """

    columns: Mapping[str, np.ndarray]
    roles: Mapping[str, str]
    covariates: tuple = ()
    n: int = field(init=False)

    def __post_init__(self):
        cols = {str(k): _frozen(v) for k, v in self.columns.items()}
        roles = dict(self.roles)
        missing_roles = [r for r in ROLES if r not in roles]
        if missing_roles:
            raise ConfigurationError(f"missing role assignment(s): {', '.join(missing_roles)}")
        extra = set(roles) - set(ROLES)
        if extra:
            raise ConfigurationError(f"unknown role(s): {', '.join(sorted(extra))}")
        covariates = tuple(self.covariates)
        used = [roles[r] for r in ROLES] + list(covariates)
        for name in used:
            if name not in cols:
                raise ConfigurationError(f"column {name!r} not found")
        if len(set(roles[r] for r in ROLES)) != 4:
            raise ConfigurationError("the four roles must map to distinct columns")
        lengths = {len(cols[name]) for name in used}
        if len(lengths) != 1:
            raise ValidationError("role columns have unequal lengths")
        n = lengths.pop()
        for name in used:
            col = cols[name]
            if col.ndim != 1:
                raise ValidationError(f"column {name!r} is not one-dimensional")
            if not np.all(np.isfinite(col)):
                raise ValidationError(f"column {name!r} contains non-finite values")
        for r in ROLES:
            if _is_constant(cols[roles[r]]):
                raise ValidationError(f"role column {roles[r]!r} ({r}) is constant")
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "roles", roles)
        object.__setattr__(self, "covariates", covariates)
        object.__setattr__(self, "n", n)

    @classmethod
    def from_arrays(cls, x, y, z, w, v=None, names=None) -> "ObservationTable":
        """Build a table from role arrays; ``v`` is ``(n,)`` or ``(n, p)``."""
        cols = {"x": x, "y": y, "z": z, "w": w}
        covs = []
        if v is not None:
            v = np.asarray(v, dtype=float)
            if v.ndim == 1:
                v = v[:, None]
            names = names or [f"v{i + 1}" for i in range(v.shape[1])]
            for i, name in enumerate(names):
                cols[name] = v[:, i]
                covs.append(name)
        return cls(cols, {"X": "x", "Y": "y", "Z": "z", "W": "w"}, tuple(covs))

    def role(self, name: str) -> np.ndarray:
        return self.columns[self.roles[name]]

    @property
    def x(self) -> np.ndarray:
        return self.role("X")

    @property
    def y(self) -> np.ndarray:
        return self.role("Y")

    @property
    def z(self) -> np.ndarray:
        return self.role("Z")

    @property
    def w(self) -> np.ndarray:
        return self.role("W")

    @property
    def v(self) -> np.ndarray:
        """Covariate block as an ``(n, p)`` array (``p`` may be 0)."""
        if not self.covariates:
            return np.empty((self.n, 0))
        return np.column_stack([self.columns[c] for c in self.covariates])

    def block(self, name: str) -> np.ndarray:
        """Role column concatenated with the covariates, shape ``(n, 1 + p)``."""
        return np.column_stack([self.role(name), self.v])

    def block_dim(self, name: str = "X") -> int:
        return 1 + len(self.covariates)

    def observed_names(self) -> tuple:
        """The four role columns in the original ``(X, Y, Z, W)`` order."""
        return tuple(self.roles[r] for r in ROLES)

    def with_roles(self, roles: Mapping[str, str]) -> "ObservationTable":
        return ObservationTable(self.columns, roles, self.covariates)

    def apply(self, perm: "RolePermutation") -> "ObservationTable":
        """Reassign roles according to ``perm`` (indices refer to :meth:`observed_names`)."""
        names = self.observed_names()
        return self.with_roles({r: names[i - 1] for r, i in zip(ROLES, perm.assignment)})

    def standardized(self) -> "ObservationTable":
        """Copy with role columns centred and scaled to unit (population) variance."""
        cols = dict(self.columns)
        for r in ROLES:
            c = cols[self.roles[r]]
            cols[self.roles[r]] = (c - c.mean()) / c.std()
        return ObservationTable(cols, self.roles, self.covariates)

    def to_csv(self, path) -> None:
        """Write all used columns with 17 significant digits (round-trip exact)."""
        names = list(self.observed_names()) + list(self.covariates)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(names)
            data = [self.columns[name] for name in names]
            for row in zip(*data):
                writer.writerow([format(float(val), ".17g") for val in row])


@dataclass(frozen=True)
class RolePermutation:
    """Assignment ``(i, j, k, l)``: X, Y, Z and W take observed columns i, j, k, l (1-based)."""

    assignment: tuple

    @property
    def label(self) -> str:
        return "(" + ",".join(str(i) for i in self.assignment) + ")"

    def __str__(self):
        return self.label


def load_csv(path, role_spec: Mapping[str, str], covariates: Sequence[str] = ()) -> ObservationTable:
    """Read a CSV file into a validated :class:`ObservationTable`.

    Only the columns referenced by ``role_spec`` and ``covariates`` are parsed;
    blank cells and non-numeric values are rejected (no imputation).
    """
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"input file {str(path)!r} does not exist")
    role_spec = {k.upper(): v for k, v in role_spec.items()}
    wanted = [role_spec.get(r) for r in ROLES]
    if any(name is None for name in wanted):
        missing = [r for r, name in zip(ROLES, wanted) if name is None]
        raise ConfigurationError(f"no column given for role(s) {', '.join(missing)}")
    wanted = wanted + [c for c in covariates]
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        index = {}
        for name in wanted:
            if name not in header:
                raise ConfigurationError(f"column {name!r} not found in {path.name} header")
            index[name] = header.index(name)
        values = {name: [] for name in wanted}
        for rownum, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            for name, col in index.items():
                cell = row[col].strip() if col < len(row) else ""
                try:
                    val = float(cell)
                except ValueError:
                    raise ParseError(
                        f"row {rownum}, column {name!r}: cannot parse {cell!r} as a number",
                        row=rownum, column=name) from None
                if not math.isfinite(val):
                    raise ParseError(f"row {rownum}, column {name!r}: non-finite value {cell!r}",
                                     row=rownum, column=name)
                values[name].append(val)
    return ObservationTable(values, {r: role_spec[r] for r in ROLES}, tuple(covariates))


def residualize(table: ObservationTable) -> ObservationTable:
    """Replace each role column by its OLS residual on an intercept plus ``V``.

    The covariates are dropped from the returned table. A role column that is
    an exact linear function of the covariates becomes constant and is
    rejected by the table validation.
    """
    p = len(table.covariates)
    if p == 0:
        raise ConfigurationError("residualize needs at least one covariate")
    if table.n <= p + 1:
        raise ConfigurationError(f"need n > {p + 1} rows to residualize on {p} covariates")
    design = np.column_stack([np.ones(table.n), table.v])
    rank = np.linalg.matrix_rank(design)
    if rank < design.shape[1]:
        names = ["intercept"] + list(table.covariates)
        collinear = [names[j] for j in range(1, design.shape[1])
                     if np.linalg.matrix_rank(design[:, :j + 1]) <= np.linalg.matrix_rank(design[:, :j])]
        raise NumericalError(f"covariate design is rank deficient; collinear column(s): {', '.join(collinear)}")
    q, _ = np.linalg.qr(design)
    cols = {}
    for r in ROLES:
        col = table.role(r)
        cols[table.roles[r]] = col - q @ (q.T @ col)
    return ObservationTable(cols, table.roles, ())


def enumerate_permutations(table: ObservationTable | None = None) -> list:
    """The 12 role assignments with Z and W unordered, in lexicographic order.

    The order starts ``(1,2,3,4), (1,3,2,4), (1,4,2,3), (2,1,3,4)`` and ends
    with ``(4,3,1,2)``.
    """
    perms = []
    for p in itertools.permutations((1, 2, 3, 4)):
        if p[2] < p[3]:
            perms.append(RolePermutation(p))
    return perms
