"""Model-problem generator: structured grid, slab decomposition, 7-point stencil.

Builds the cubic benchmark grid, cuts it into contiguous slabs
along its longest axis, and assembles a unit-coefficient Laplacian per part:
diag = number of faces of the cell (internal + interface + domain boundary),
every coupling -1.  Dirichlet-type boundary contributions are folded into the
diagonal, so the global matrix is symmetric positive definite with exact
integer data.
"""

import numpy as np
from dataclasses import dataclass

from .core import InterfaceBlock, LduMatrix


@dataclass(frozen=True)
class StructuredGrid:
    """Uniform cell-centered grid; cells are unit cubes, no geometry stored.

    Global cell numbering is C-order over axes permuted so that the slab axis
    (longest axis, ties resolved toward z) varies slowest.  That makes slab
    parts contiguous in global numbering, which the repartitioner relies on.
    """

    nx: int
    ny: int
    nz: int

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 1:
            raise ValueError("grid extents must be >= 1")

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def total_cells(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def dimension(self) -> int:
        """Number of non-degenerate axes (extent > 1)."""
        return sum(1 for d in self.dims if d > 1)

    @property
    def slab_axis(self) -> int:
        """Cut axis: the longest one, ties resolved toward z."""
        dims = self.dims
        best = 0
        for ax in (1, 2):
            if dims[ax] >= dims[best]:
                best = ax
        return best

    @property
    def axis_order(self) -> tuple[int, int, int]:
        """Axes from fastest- to slowest-varying in the global numbering."""
        slow = self.slab_axis
        fast = tuple(ax for ax in (0, 1, 2) if ax != slow)
        return (fast[0], fast[1], slow)

    @property
    def n_internal_faces(self) -> int:
        nx, ny, nz = self.dims
        return (nx - 1) * ny * nz + nx * (ny - 1) * nz + nx * ny * (nz - 1)


def build_grid(n_p: int) -> StructuredGrid:
    """Benchmark-sized cube: 2*3*5*7*n_p = 210*n_p cells along each axis."""
    if n_p < 1:
        raise ValueError(f"n_p must be >= 1, got {n_p}")
    edge = 2 * 3 * 5 * 7 * n_p
    return StructuredGrid(edge, edge, edge)


@dataclass(frozen=True)
class MeshInterface:
    """Face pairs shared with one neighbor part, in matching order on both sides."""

    neighbor_rank: int
    cells: np.ndarray
    neighbor_cells: np.ndarray


@dataclass(frozen=True)
class SubdomainMesh:
    """One contiguous slab of the grid, with local connectivity.

    ``internal_faces`` is an (n_faces, 2) array of local cell pairs, strictly
    sorted by (lower, upper).  Interface faces are mirrored pairwise with the
    neighbor's mesh.
    """

    cpu_rank: int
    n_cells: int
    global_offset: int
    internal_faces: np.ndarray
    boundary_face_count: np.ndarray
    interfaces: tuple[MeshInterface, ...]

    @property
    def global_cell_ids(self) -> np.ndarray:
        return np.arange(self.global_offset, self.global_offset + self.n_cells, dtype=np.int64)


def _slab_layers(n_layers: int, n_parts: int) -> list[tuple[int, int]]:
    # balanced contiguous layer ranges; the first (n_layers % n_parts) parts get one extra
    base, extra = divmod(n_layers, n_parts)
    ranges = []
    start = 0
    for r in range(n_parts):
        size = base + (1 if r < extra else 0)
        ranges.append((start, start + size))
        start += size
    return ranges


def decompose_slab(grid: StructuredGrid, n_parts: int) -> list[SubdomainMesh]:
    """Cut the grid into contiguous slabs along its longest axis."""
    if n_parts < 1:
        raise ValueError("n_parts must be >= 1")
    a0, a1, a2 = grid.axis_order
    dims = grid.dims
    d0, d1, d2 = dims[a0], dims[a1], dims[a2]
    if n_parts > d2:
        raise ValueError(f"too many parts: {n_parts} slabs requested along an axis of {d2} cells")
    layers = _slab_layers(d2, n_parts)
    plane = d0 * d1
    active0, active1, active2 = d0 > 1, d1 > 1, d2 > 1

    parts = []
    for r, (z0, z1) in enumerate(layers):
        nzl = z1 - z0
        n_local = plane * nzl
        i = np.arange(n_local, dtype=np.int64)
        i0 = i % d0
        i1 = (i // d0) % d1
        i2 = i // plane  # slab-local layer

        faces = []
        if active0:
            a = i[i0 < d0 - 1]
            faces.append(np.stack((a, a + 1), axis=1))
        if active1:
            a = i[i1 < d1 - 1]
            faces.append(np.stack((a, a + d0), axis=1))
        if nzl > 1:
            a = i[i2 < nzl - 1]
            faces.append(np.stack((a, a + plane), axis=1))
        if faces:
            internal = np.concatenate(faces)
            order = np.lexsort((internal[:, 1], internal[:, 0]))
            internal = internal[order]
        else:
            internal = np.zeros((0, 2), dtype=np.int64)

        boundary = np.zeros(n_local, dtype=np.int64)
        if active0:
            boundary += (i0 == 0)
            boundary += (i0 == d0 - 1)
        if active1:
            boundary += (i1 == 0)
            boundary += (i1 == d1 - 1)
        if active2:
            boundary += ((i2 + z0) == 0)
            boundary += ((i2 + z0) == d2 - 1)

        ifaces = []
        face_plane = np.arange(plane, dtype=np.int64)
        if z0 > 0:
            prev_nzl = layers[r - 1][1] - layers[r - 1][0]
            ifaces.append(MeshInterface(
                neighbor_rank=r - 1,
                cells=face_plane.copy(),
                neighbor_cells=face_plane + plane * (prev_nzl - 1)))
        if z1 < d2:
            ifaces.append(MeshInterface(
                neighbor_rank=r + 1,
                cells=face_plane + plane * (nzl - 1),
                neighbor_cells=face_plane.copy()))
        ifaces.sort(key=lambda b: b.neighbor_rank)

        parts.append(SubdomainMesh(
            cpu_rank=r,
            n_cells=n_local,
            global_offset=plane * z0,
            internal_faces=internal,
            boundary_face_count=boundary,
            interfaces=tuple(ifaces)))
    return parts


def assemble_poisson(part: SubdomainMesh) -> tuple[LduMatrix, list[InterfaceBlock]]:
    """Assemble the unit Laplacian of one part into LDU plus interface blocks."""
    n = part.n_cells
    face_count = part.boundary_face_count.astype(np.int64).copy()
    lower = part.internal_faces[:, 0]
    upper = part.internal_faces[:, 1]
    np.add.at(face_count, lower, 1)
    np.add.at(face_count, upper, 1)

    blocks = []
    for iface in part.interfaces:
        np.add.at(face_count, iface.cells, 1)
        order = np.lexsort((iface.neighbor_cells, iface.cells))
        blocks.append(InterfaceBlock(
            neighbor_rank=iface.neighbor_rank,
            rows=iface.cells[order],
            cols_remote=iface.neighbor_cells[order],
            values=-np.ones(len(iface.cells))))

    n_faces = len(lower)
    m = LduMatrix(
        n_cells=n,
        lower_addr=lower,
        upper_addr=upper,
        diag=face_count.astype(np.float64),
        lower_val=-np.ones(n_faces),
        upper_val=-np.ones(n_faces))
    return m, blocks


def perturb_coefficients(m: LduMatrix, ifaces: list[InterfaceBlock],
                         step: int) -> tuple[LduMatrix, list[InterfaceBlock]]:
    """Pseudo-timestep coefficient change: diag scaled by (1 + step/100).

    ``m`` must be the pristine base matrix; every step recomputes from it, so
    repeated calls with the same step are identical and nothing drifts.  The
    sparsity and all off-diagonal/interface values stay untouched, which keeps
    the matrix diagonally dominant and hence SPD.
    """
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    scaled = LduMatrix(
        n_cells=m.n_cells,
        lower_addr=m.lower_addr,
        upper_addr=m.upper_addr,
        diag=m.diag * (1.0 + step / 100.0),
        lower_val=m.lower_val,
        upper_val=m.upper_val)
    return scaled, ifaces
