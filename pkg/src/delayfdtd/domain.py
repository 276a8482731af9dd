"""Axis-aligned box domain, staggered grid and boundary sample geometry.

The electric field lives on cell edges (three families, one per axis), the
magnetic field on cell faces.  Tangential boundary data is collocated at the
centers of the boundary faces of boundary cells; those face centers are the
"boundary samples" used by the delay line, the feedback law and every surface
quadrature.  Samples carry the full face-cell area, so the summed areas
reproduce the analytic surface area exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

# Face enumeration: (axis, side) with side -1 for the low face, +1 for the
# high face.  Tangent axes of a face are the two remaining axes in sorted
# order; trace component 0 is along the first tangent axis.
FACES = ((0, -1), (0, +1), (1, -1), (1, +1), (2, -1), (2, +1))


def tangent_axes(axis: int) -> tuple[int, int]:
    return tuple(a for a in range(3) if a != axis)  # type: ignore[return-value]


@dataclass(frozen=True)
class BoxDomain:
    """Rectangular box [0,Lx] x [0,Ly] x [0,Lz] with a star center x0."""

    lengths: tuple[float, float, float]
    resolution: tuple[int, int, int]
    x0: tuple[float, float, float]

    def __post_init__(self):
        if any(L <= 0 for L in self.lengths):
            raise ConfigError(f"box lengths must be positive, got {self.lengths}")
        if any(n < 4 for n in self.resolution):
            raise ConfigError(
                f"need at least 4 cells per axis for interior stencils, got {self.resolution}"
            )
        for c, L in zip(self.x0, self.lengths):
            if not (0.0 < c < L):
                raise ConfigError(f"star center {self.x0} must be strictly interior")

    @property
    def spacings(self) -> tuple[float, float, float]:
        return tuple(L / n for L, n in zip(self.lengths, self.resolution))


@dataclass
class SampleSet:
    """Boundary face-center samples: geometry and trace bookkeeping.

    Arrays are indexed by sample id.  ``cells`` holds the (i,j,k) index of
    the boundary cell owning the face; ``axis``/``side`` identify the face;
    ``tangents`` the two tangential coordinate axes.  ``vol_mass`` is the
    half-cell volume weight of each tangential trace component, shaved at
    box edges so the component masses tile the box volume exactly.
    """

    positions: np.ndarray  # (S, 3)
    normals: np.ndarray  # (S, 3)
    areas: np.ndarray  # (S,)
    dn: np.ndarray  # (S,) normal spacing of the owning cell
    axis: np.ndarray  # (S,) face normal axis
    side: np.ndarray  # (S,) -1 / +1
    tangents: np.ndarray  # (S, 2) tangential axes
    cells: np.ndarray  # (S, 3) owning cell index
    vol_mass: np.ndarray  # (S, 2) per-component volume weight
    face_slices: dict = field(default_factory=dict)  # face id -> (start, n1, n2)

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    def to_vectors(self, comps: np.ndarray) -> np.ndarray:
        """Expand (S, 2) tangential components into tangential 3-vectors."""
        out = np.zeros((self.count, 3))
        rows = np.arange(self.count)
        out[rows, self.tangents[:, 0]] = comps[:, 0]
        out[rows, self.tangents[:, 1]] = comps[:, 1]
        return out

    def to_components(self, vectors: np.ndarray) -> np.ndarray:
        """Project tangential 3-vectors onto the per-face tangent axes."""
        rows = np.arange(self.count)
        return np.stack(
            [vectors[rows, self.tangents[:, 0]], vectors[rows, self.tangents[:, 1]]],
            axis=1,
        )


@dataclass
class YeeGrid:
    """Staggered lattice over a box plus its boundary sample manifold."""

    domain: BoxDomain
    samples: SampleSet

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.domain.resolution

    @property
    def spacings(self) -> tuple[float, float, float]:
        return self.domain.spacings

    def edge_counts(self) -> dict[str, int]:
        """Full per-family edge counts, boundary-sited edges included."""
        nx, ny, nz = self.shape
        return {
            "x": nx * (ny + 1) * (nz + 1),
            "y": (nx + 1) * ny * (nz + 1),
            "z": (nx + 1) * (ny + 1) * nz,
        }

    def face_counts(self) -> dict[str, int]:
        nx, ny, nz = self.shape
        return {
            "x": (nx + 1) * ny * nz,
            "y": nx * (ny + 1) * nz,
            "z": nx * ny * (nz + 1),
        }

    def cell_centers(self) -> np.ndarray:
        """(nx, ny, nz, 3) array of cell-center coordinates."""
        nx, ny, nz = self.shape
        dx, dy, dz = self.spacings
        xs = (np.arange(nx) + 0.5) * dx
        ys = (np.arange(ny) + 0.5) * dy
        zs = (np.arange(nz) + 0.5) * dz
        X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
        return np.stack([X, Y, Z], axis=-1)


def build_grid(domain: BoxDomain) -> YeeGrid:
    """Build the staggered grid and its boundary sample manifold."""
    n = domain.resolution
    d = domain.spacings
    L = domain.lengths

    pos, nrm, areas, dns = [], [], [], []
    ax_arr, side_arr, tans, cells, vol_mass = [], [], [], [], []
    face_slices = {}
    start = 0
    for fid, (axis, side) in enumerate(FACES):
        t1, t2 = tangent_axes(axis)
        n1, n2 = n[t1], n[t2]
        face_slices[fid] = (start, n1, n2)
        coord_a = 0.0 if side < 0 else L[axis]
        cell_a = 0 if side < 0 else n[axis] - 1
        for u in range(n1):
            for v in range(n2):
                p = np.zeros(3)
                p[axis] = coord_a
                p[t1] = (u + 0.5) * d[t1]
                p[t2] = (v + 0.5) * d[t2]
                nu = np.zeros(3)
                nu[axis] = float(side)
                cell = [0, 0, 0]
                cell[axis] = cell_a
                cell[t1], cell[t2] = u, v
                # Half-cell normal extent; the transverse extent of each
                # tangential component is shaved by a quarter spacing at box
                # edges along the *other* tangent axis (the shared corner
                # strips are split evenly with the neighbouring face).
                ext2 = d[t2] * (1.0 - 0.25 * (v == 0) - 0.25 * (v == n2 - 1))
                ext1 = d[t1] * (1.0 - 0.25 * (u == 0) - 0.25 * (u == n1 - 1))
                m1 = 0.5 * d[axis] * d[t1] * ext2  # component along t1
                m2 = 0.5 * d[axis] * ext1 * d[t2]  # component along t2
                pos.append(p)
                nrm.append(nu)
                areas.append(d[t1] * d[t2])
                dns.append(d[axis])
                ax_arr.append(axis)
                side_arr.append(side)
                tans.append((t1, t2))
                cells.append(cell)
                vol_mass.append((m1, m2))
        start += n1 * n2

    samples = SampleSet(
        positions=np.array(pos),
        normals=np.array(nrm),
        areas=np.array(areas),
        dn=np.array(dns),
        axis=np.array(ax_arr),
        side=np.array(side_arr),
        tangents=np.array(tans),
        cells=np.array(cells),
        vol_mass=np.array(vol_mass),
        face_slices=face_slices,
    )
    return YeeGrid(domain=domain, samples=samples)


@dataclass
class MultiplierField:
    """The radial multiplier field x - x0 and its geometric extremes."""

    x0: np.ndarray
    at_samples: np.ndarray  # (S, 3)
    at_cells: np.ndarray  # (nx, ny, nz, 3)
    beta: float  # min over boundary samples of m . nu
    m_sup: float  # exact sup of |m| over the closed box


def multiplier_field(grid: YeeGrid, x0) -> MultiplierField:
    """Evaluate m(x) = x - x0 on samples and cells; fail unless m.nu > 0."""
    x0 = np.asarray(x0, dtype=float)
    dom = grid.domain
    for c, L in zip(x0, dom.lengths):
        if not (0.0 < c < L):
            raise ConfigError(f"x0={x0.tolist()} lies on or outside the boundary")
    s = grid.samples
    m_samples = s.positions - x0
    beta = float(np.min(np.einsum("ij,ij->i", m_samples, s.normals)))
    if beta <= 0:
        raise ConfigError(
            f"box is not strictly star-shaped about x0={x0.tolist()} (min m.nu = {beta})"
        )
    # |m| over the closed box is attained at a corner.
    corners = np.array(
        [[cx, cy, cz] for cx in (0, dom.lengths[0]) for cy in (0, dom.lengths[1]) for cz in (0, dom.lengths[2])]
    )
    m_sup = float(np.max(np.linalg.norm(corners - x0, axis=1)))
    return MultiplierField(
        x0=x0,
        at_samples=m_samples,
        at_cells=grid.cell_centers() - x0,
        beta=beta,
        m_sup=m_sup,
    )
