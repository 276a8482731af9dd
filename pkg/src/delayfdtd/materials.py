"""Material tensor fields and the assumption checks they must pass.

Permittivity and permeability are symmetric positive-definite 3x3 tensors
stored per cell.  The checks compute the global eigenvalue floor alpha, and
the growth constant d1 defined as the largest number such that
phi + (m . grad) phi - d1 * phi stays positive semidefinite cellwise for both
tensors, with the directional derivative taken by second-order differences
on the cell lattice (one-sided at the outermost layer).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .domain import MultiplierField, YeeGrid
from .errors import ConfigError

SYMMETRY_TOL = 1e-12

BOX_GEOMETRY_NOTE = (
    "domain is an axis-aligned box: the boundary has edges and corners, so "
    "smooth-boundary hypotheses hold only on the interior of each face"
)


@dataclass
class TensorField:
    """Per-cell symmetric 3x3 tensor with spectral summaries."""

    values: np.ndarray  # (nx, ny, nz, 3, 3)
    diagonal_only: bool
    lambda_min_global: float
    lambda_max_global: float

    @classmethod
    def from_values(cls, values: np.ndarray) -> "TensorField":
        values = np.asarray(values, dtype=float)
        if values.ndim != 5 or values.shape[3:] != (3, 3):
            raise ConfigError(f"tensor field must have shape (nx,ny,nz,3,3), got {values.shape}")
        off = values.copy()
        off[..., range(3), range(3)] = 0.0
        diagonal = bool(np.all(off == 0.0))
        sym = 0.5 * (values + np.swapaxes(values, -1, -2))
        eig = np.linalg.eigvalsh(sym.reshape(-1, 3, 3))
        return cls(
            values=values,
            diagonal_only=diagonal,
            lambda_min_global=float(eig.min()),
            lambda_max_global=float(eig.max()),
        )

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape[:3]

    def diag(self) -> np.ndarray:
        """(nx, ny, nz, 3) diagonal entries."""
        return self.values[..., range(3), range(3)]

    def max_asymmetry(self) -> tuple[float, tuple]:
        gap = np.abs(self.values - np.swapaxes(self.values, -1, -2))
        idx = np.unravel_index(np.argmax(gap), gap.shape)
        return float(gap[idx]), idx[:3]


# ---------------------------------------------------------------------------
# Shipped presets
# ---------------------------------------------------------------------------

def constant_isotropic(grid: YeeGrid, value: float) -> TensorField:
    nx, ny, nz = grid.shape
    vals = np.zeros((nx, ny, nz, 3, 3))
    vals[..., range(3), range(3)] = value
    return TensorField.from_values(vals)


def constant_diagonal(grid: YeeGrid, diag) -> TensorField:
    nx, ny, nz = grid.shape
    vals = np.zeros((nx, ny, nz, 3, 3))
    vals[..., range(3), range(3)] = np.asarray(diag, dtype=float)
    return TensorField.from_values(vals)


def diagonal_ramp(grid: YeeGrid, base, axis: int = 0, slope: float = 1.0, entry: int = 0) -> TensorField:
    """diag(base) with a linear ramp slope*x_axis added to one diagonal entry."""
    nx, ny, nz = grid.shape
    vals = np.zeros((nx, ny, nz, 3, 3))
    vals[..., range(3), range(3)] = np.asarray(base, dtype=float)
    coord = grid.cell_centers()[..., axis]
    vals[..., entry, entry] += slope * coord
    return TensorField.from_values(vals)


def exponential_isotropic(grid: YeeGrid, k: float, axis: int = 0) -> TensorField:
    """exp(k * x_axis) times the identity."""
    nx, ny, nz = grid.shape
    coord = grid.cell_centers()[..., axis]
    vals = np.zeros((nx, ny, nz, 3, 3))
    for c in range(3):
        vals[..., c, c] = np.exp(k * coord)
    return TensorField.from_values(vals)


def constant_full(grid: YeeGrid, upper) -> TensorField:
    """Constant full symmetric tensor from (e11,e22,e33,e12,e13,e23)."""
    e11, e22, e33, e12, e13, e23 = (float(v) for v in upper)
    mat = np.array([[e11, e12, e13], [e12, e22, e23], [e13, e23, e33]])
    nx, ny, nz = grid.shape
    vals = np.broadcast_to(mat, (nx, ny, nz, 3, 3)).copy()
    return TensorField.from_values(vals)


def load_tensor_file(grid: YeeGrid, path) -> TensorField:
    """Read `i j k e11 e22 e33 [e12 e13 e23]` lines, row-major cell indices."""
    nx, ny, nz = grid.shape
    vals = np.zeros((nx, ny, nz, 3, 3))
    seen = np.zeros((nx, ny, nz), dtype=bool)
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            if len(parts) not in (6, 9):
                raise ConfigError(f"{path}:{ln}: expected 6 or 9 fields, got {len(parts)}")
            i, j, k = (int(p) for p in parts[:3])
            if not (0 <= i < nx and 0 <= j < ny and 0 <= k < nz):
                raise ConfigError(f"{path}:{ln}: cell index ({i},{j},{k}) out of range")
            nums = [float(p) for p in parts[3:]]
            if not all(np.isfinite(nums)):
                raise ConfigError(f"{path}:{ln}: non-finite entry")
            e11, e22, e33 = nums[:3]
            e12, e13, e23 = (nums[3:] + [0.0, 0.0, 0.0])[:3]
            vals[i, j, k] = [[e11, e12, e13], [e12, e22, e23], [e13, e23, e33]]
            seen[i, j, k] = True
    if not seen.all():
        missing = np.argwhere(~seen)[0]
        raise ConfigError(f"{path}: no entry for cell {tuple(int(v) for v in missing)}")
    return TensorField.from_values(vals)


# ---------------------------------------------------------------------------
# Assumption checks
# ---------------------------------------------------------------------------

@dataclass
class MaterialReport:
    """Outcome of the material and geometry assumption checks."""

    alpha: float | None = None
    d1: float | None = None
    beta: float | None = None
    m_sup: float | None = None
    lambda_max_eps: float | None = None
    lambda_max_mu: float | None = None
    checks: dict = field(default_factory=dict)  # name -> (ok, detail)
    notes: tuple[str, ...] = (BOX_GEOMETRY_NOTE,)

    @property
    def passed(self) -> bool:
        return all(ok for ok, _ in self.checks.values())

    def merge(self, other: "MaterialReport") -> "MaterialReport":
        out = MaterialReport(
            alpha=self.alpha if other.alpha is None else other.alpha,
            d1=self.d1 if other.d1 is None else other.d1,
            beta=self.beta if other.beta is None else other.beta,
            m_sup=self.m_sup if other.m_sup is None else other.m_sup,
            lambda_max_eps=other.lambda_max_eps or self.lambda_max_eps,
            lambda_max_mu=other.lambda_max_mu or self.lambda_max_mu,
        )
        out.checks = {**self.checks, **other.checks}
        return out

    def summary_lines(self) -> list[str]:
        lines = []
        for key in ("alpha", "d1", "beta", "m_sup", "lambda_max_eps", "lambda_max_mu"):
            val = getattr(self, key)
            if val is not None:
                lines.append(f"{key} = {val:.17g}")
        for name, (ok, detail) in self.checks.items():
            lines.append(f"check.{name} = {'pass' if ok else 'FAIL'} ({detail})")
        for note in self.notes:
            lines.append(f"note = {note}")
        return lines


def _symmetry_check(name: str, t: TensorField, checks: dict) -> bool:
    gap, cell = t.max_asymmetry()
    ok = gap <= SYMMETRY_TOL
    checks[f"{name}_symmetric"] = (ok, f"max |A - A^T| = {gap:.3e} at cell {cell}")
    return ok


def check_assumption_materials(eps: TensorField, mu: TensorField) -> MaterialReport:
    """Symmetry, uniform positive definiteness, and the eigen floor alpha."""
    if eps.shape != mu.shape:
        raise ConfigError(f"eps and mu sampled on different grids: {eps.shape} vs {mu.shape}")
    report = MaterialReport()
    sym_ok = _symmetry_check("eps", eps, report.checks) & _symmetry_check("mu", mu, report.checks)

    report.lambda_max_eps = eps.lambda_max_global
    report.lambda_max_mu = mu.lambda_max_global
    alpha = min(eps.lambda_min_global, mu.lambda_min_global)
    report.alpha = alpha
    pd_ok = alpha > 0
    worst = "eps" if eps.lambda_min_global <= mu.lambda_min_global else "mu"
    report.checks["positive_definite"] = (
        pd_ok,
        f"alpha = {alpha:.6g} (limited by {worst})",
    )
    if not sym_ok:
        report.checks["positive_definite"] = (False, "skipped eigen floor validity: asymmetric input")
    return report


def _directional_derivative(values: np.ndarray, m_cells: np.ndarray, spacings) -> np.ndarray:
    """(m . grad) of a per-cell tensor field, second order, one-sided at layers."""
    out = np.zeros_like(values)
    for axis in range(3):
        d = np.gradient(values, spacings[axis], axis=axis, edge_order=2)
        out += m_cells[..., axis, None, None] * d
    return out


def _min_generalized_eig(a: np.ndarray, b: np.ndarray, diagonal: bool) -> np.ndarray:
    """Cellwise min eigenvalue of (A, B) with B SPD, vectorized."""
    if diagonal:
        da = a[..., range(3), range(3)]
        db = b[..., range(3), range(3)]
        return np.min(da / db, axis=-1)
    ell = np.linalg.cholesky(b.reshape(-1, 3, 3))
    inv_ell = np.linalg.inv(ell)
    mid = inv_ell @ a.reshape(-1, 3, 3) @ np.swapaxes(inv_ell, -1, -2)
    mid = 0.5 * (mid + np.swapaxes(mid, -1, -2))
    eig = np.linalg.eigvalsh(mid)[:, 0]
    return eig.reshape(a.shape[:3])


def check_assumption_geometry(
    eps: TensorField, mu: TensorField, m: MultiplierField, grid: YeeGrid
) -> MaterialReport:
    """Largest d1 with phi + (m.grad)phi >= d1 phi cellwise for both tensors."""
    report = MaterialReport()
    spac = grid.spacings
    d1 = np.inf
    worst_cell, worst_name = None, None
    for name, t in (("eps", eps), ("mu", mu)):
        der = _directional_derivative(t.values, m.at_cells, spac)
        a = t.values + der
        diag_der = not np.any(der[..., [0, 0, 1], [1, 2, 2]]) and t.diagonal_only
        local = _min_generalized_eig(a, t.values, t.diagonal_only and diag_der)
        cell = np.unravel_index(np.argmin(local), local.shape)
        if local[cell] < d1:
            d1 = float(local[cell])
            worst_cell, worst_name = cell, name
    report.d1 = d1
    report.beta = m.beta
    report.m_sup = m.m_sup
    report.checks["growth_bound"] = (
        d1 > 0,
        f"d1 = {d1:.6g}, worst cell {worst_cell} of {worst_name}",
    )
    report.checks["star_shaped"] = (m.beta > 0, f"beta = {m.beta:.6g}")
    return report


def full_report(
    eps: TensorField, mu: TensorField, m: MultiplierField, grid: YeeGrid
) -> MaterialReport:
    base = check_assumption_materials(eps, mu)
    if not base.passed:
        return base
    return base.merge(check_assumption_geometry(eps, mu, m, grid))
