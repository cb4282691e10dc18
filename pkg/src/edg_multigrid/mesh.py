"""
Triangular meshes, red refinement and mesh hierarchies.

Local conventions used throughout the package:
    - cells are vertex-index triples in counterclockwise order
    - local edge e of a cell is the edge opposite local vertex e, traversed
      from local vertex (e+1)%3 to (e+2)%3
    - faces are stored with the lower vertex index first; the per-cell sign
      is +1 when the local traversal agrees with that canonical orientation
"""
import logging

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import List, NamedTuple, Optional, Tuple, Union

import numpy as np

from edg_multigrid.exceptions import DegenerateCell, InvalidFaceIndex, MeshFormatError

logger = logging.getLogger(__name__)

# Local edge e runs from EDGE_START[e] to EDGE_END[e]
EDGE_START = np.array([1, 2, 0])
EDGE_END = np.array([2, 0, 1])


class Point2(NamedTuple):
    x: float
    y: float


class FaceGeometry(NamedTuple):
    length: float
    # (cell index, outward unit normal) per adjacent cell
    normals: Tuple[Tuple[int, Point2], ...]


@dataclass(frozen=True, eq=False)
class CellGeometry:
    """Vectorized affine geometry of every cell of a mesh."""
    origin: np.ndarray          # (nc, 2) coordinates of local vertex 0
    jacobian: np.ndarray        # (nc, 2, 2) columns v1 - v0, v2 - v0
    det: np.ndarray             # (nc,) twice the cell area
    inverse: np.ndarray         # (nc, 2, 2)
    edge_lengths: np.ndarray    # (nc, 3)
    normals: np.ndarray         # (nc, 3, 2) outward unit normals per local edge
    signs: np.ndarray           # (nc, 3) orientation signs of the local edges

    @property
    def areas(self) -> np.ndarray:
        return 0.5 * self.det

    @property
    def perimeters(self) -> np.ndarray:
        return self.edge_lengths.sum(axis=1)

    @property
    def diameters(self) -> np.ndarray:
        return self.edge_lengths.max(axis=1)

    def to_physical(self, points: np.ndarray) -> np.ndarray:
        """Map reference points (n, 2) to physical points (nc, n, 2)."""
        return self.origin[:, None, :] + np.einsum("cij,nj->cni", self.jacobian, points)


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: np.ndarray        # (nv, 2)
    cells: np.ndarray           # (nc, 3)
    faces: np.ndarray           # (nf, 2) lower vertex index first
    face_cells: np.ndarray      # (nf, 2) second entry -1 on boundary faces
    boundary: np.ndarray        # (nf,) bool
    cell_faces: np.ndarray      # (nc, 3) face index of each local edge
    cell_face_signs: np.ndarray # (nc, 3)
    level: int = 0

    @classmethod
    def from_cells(cls, vertices, cells, level: int = 0) -> "TriMesh":
        """
        Build a mesh and its face topology from vertices and counterclockwise cells.

        Args:
            vertices: (nv, 2) coordinates
            cells: (nc, 3) vertex indices, counterclockwise
            level (int): Level index in a hierarchy
        Raises:
            DegenerateCell: If a cell has non-positive signed area.
            ValueError: If a face is shared by more than two cells.
        Returns:
            TriMesh
        """
        vertices = np.ascontiguousarray(vertices, dtype=float)
        cells = np.ascontiguousarray(cells, dtype=np.int64)

        areas = _signed_areas(vertices, cells)
        bad = np.flatnonzero(areas <= 0.0)
        if bad.size:
            logger.error("Mesh level [%d] has %d degenerate or clockwise cells", level, bad.size)
            raise DegenerateCell(int(bad[0]), float(areas[bad[0]]))

        start = cells[:, EDGE_START]
        end = cells[:, EDGE_END]
        lo = np.minimum(start, end).ravel()
        hi = np.maximum(start, end).ravel()
        signs = np.where(start < end, 1, -1)

        faces, inverse = np.unique(np.stack([lo, hi], axis=1), axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        counts = np.bincount(inverse, minlength=len(faces))
        if np.any(counts > 2):
            raise ValueError(f"Face shared by more than two cells on level {level}")

        # occurrences sorted by face, then by cell index
        order = np.argsort(inverse, kind="stable")
        first = np.cumsum(counts) - counts
        face_cells = np.full((len(faces), 2), -1, dtype=np.int64)
        face_cells[:, 0] = order[first] // 3
        interior = counts == 2
        face_cells[interior, 1] = order[first[interior] + 1] // 3

        return cls(
            vertices=vertices,
            cells=cells,
            faces=faces,
            face_cells=face_cells,
            boundary=counts == 1,
            cell_faces=inverse.reshape(-1, 3),
            cell_face_signs=signs,
            level=level,
        )

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[self.faces[self.boundary].ravel()] = True
        return mask

    @cached_property
    def geometry(self) -> CellGeometry:
        return cell_geometry(self)

    @property
    def areas(self) -> np.ndarray:
        return self.geometry.areas

    @property
    def h(self) -> float:
        """Maximal cell diameter."""
        return float(self.geometry.diameters.max())


@dataclass(frozen=True, eq=False)
class MeshHierarchy:
    levels: List[TriMesh]
    # child_maps[l - 1] holds the 4 children on level l of each cell of level l - 1
    child_maps: List[np.ndarray] = field(default_factory=list)

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def h(self) -> List[float]:
        return [mesh.h for mesh in self.levels]

    def children(self, level: int) -> np.ndarray:
        return self.child_maps[level - 1]

    def parents(self, level: int) -> np.ndarray:
        return locate_in_parent(self, level)


def _signed_areas(vertices: np.ndarray, cells: np.ndarray) -> np.ndarray:
    a = vertices[cells[:, 0]]
    b = vertices[cells[:, 1]]
    c = vertices[cells[:, 2]]
    return 0.5 * ((b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0]))


def cell_geometry(mesh: TriMesh) -> CellGeometry:
    x = mesh.vertices
    v0 = x[mesh.cells[:, 0]]
    jac = np.stack([x[mesh.cells[:, 1]] - v0, x[mesh.cells[:, 2]] - v0], axis=2)
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    inverse = np.empty_like(jac)
    inverse[:, 0, 0] = jac[:, 1, 1]
    inverse[:, 0, 1] = -jac[:, 0, 1]
    inverse[:, 1, 0] = -jac[:, 1, 0]
    inverse[:, 1, 1] = jac[:, 0, 0]
    inverse /= det[:, None, None]

    tangents = x[mesh.cells[:, EDGE_END]] - x[mesh.cells[:, EDGE_START]]
    lengths = np.hypot(tangents[..., 0], tangents[..., 1])
    normals = np.stack([tangents[..., 1], -tangents[..., 0]], axis=-1) / lengths[..., None]
    return CellGeometry(
        origin=v0,
        jacobian=jac,
        det=det,
        inverse=inverse,
        edge_lengths=lengths,
        normals=normals,
        signs=mesh.cell_face_signs,
    )


def face_geometry(mesh: TriMesh, face: int) -> FaceGeometry:
    """
    Length of a face and its outward unit normal with respect to each adjacent cell.

    Raises:
        InvalidFaceIndex: If face is out of range.
    """
    if not 0 <= face < mesh.n_faces:
        raise InvalidFaceIndex(face, mesh.n_faces)
    lo, hi = mesh.faces[face]
    tangent = mesh.vertices[hi] - mesh.vertices[lo]
    length = float(np.hypot(*tangent))
    normals = []
    for cell in mesh.face_cells[face]:
        if cell < 0:
            continue
        local = int(np.flatnonzero(mesh.cell_faces[cell] == face)[0])
        t = mesh.cell_face_signs[cell, local] * tangent / length
        normals.append((int(cell), Point2(float(t[1]), float(-t[0]))))
    return FaceGeometry(length, tuple(normals))


def build_figure1_coarse(diagonals: str = "figure") -> TriMesh:
    """
    Level-0 grid of the unit square: a 2x2 block of squares split into 8 triangles.

    Args:
        diagonals (str): "figure" splits every square along its NW-SE diagonal
            as drawn in the reference coarse grid; "union_jack" uses NE-SW
            diagonals in the lower-left and upper-right squares instead.
    Returns:
        TriMesh
    """
    if diagonals not in ("figure", "union_jack"):
        raise ValueError(f"Unknown diagonal pattern: {diagonals}")
    vertices = [(0.5 * i, 0.5 * j) for j in range(3) for i in range(3)]
    cells = []
    for j in range(2):
        for i in range(2):
            a, b = 3 * j + i, 3 * j + i + 1
            d, c = a + 3, b + 3
            if diagonals == "union_jack" and i == j:
                cells += [(a, b, c), (a, c, d)]
            else:
                cells += [(a, b, d), (b, c, d)]
    return TriMesh.from_cells(np.array(vertices), np.array(cells), level=0)


def refine(mesh: TriMesh) -> Tuple[TriMesh, np.ndarray]:
    """
    Red refinement: every cell is split into four congruent children through
    its edge midpoints. The midpoint of face f gets vertex index nv + f.

    Returns:
        The refined mesh and the (nc, 4) child map of the coarse cells.
    """
    nv = mesh.n_vertices
    midpoints = 0.5 * (mesh.vertices[mesh.faces[:, 0]] + mesh.vertices[mesh.faces[:, 1]])
    vertices = np.vstack([mesh.vertices, midpoints])

    v0, v1, v2 = mesh.cells.T
    m0, m1, m2 = (nv + mesh.cell_faces).T
    children = np.stack([
        np.stack([v0, m2, m1], axis=1),
        np.stack([m2, v1, m0], axis=1),
        np.stack([m1, m0, v2], axis=1),
        np.stack([m0, m1, m2], axis=1),
    ], axis=1)
    cells = children.reshape(-1, 3)
    child_map = np.arange(len(cells)).reshape(-1, 4)
    fine = TriMesh.from_cells(vertices, cells, level=mesh.level + 1)
    logger.debug("Refined level [%d] -> [%d]: %d cells", mesh.level, fine.level, fine.n_cells)
    return fine, child_map


def build_hierarchy(coarse: TriMesh, levels: int) -> MeshHierarchy:
    """
    Uniformly refine a coarse mesh `levels` times.

    Returns:
        MeshHierarchy with levels[0..levels]
    """
    if levels < 0:
        raise ValueError(f"Number of refinements must be non-negative, got {levels}")
    meshes = [coarse]
    child_maps = []
    for _ in range(levels):
        fine, child_map = refine(meshes[-1])
        meshes.append(fine)
        child_maps.append(child_map)
    logger.info("Mesh hierarchy built: %s cells per level", [m.n_cells for m in meshes])
    return MeshHierarchy(levels=meshes, child_maps=child_maps)


def locate_in_parent(hierarchy: MeshHierarchy, level: int) -> np.ndarray:
    """Parent cell on level - 1 of every cell on `level`."""
    child_map = hierarchy.children(level)
    parents = np.empty(child_map.size, dtype=np.int64)
    parents[child_map.ravel()] = np.repeat(np.arange(len(child_map)), child_map.shape[1])
    return parents


def read_mesh(path: Union[str, Path]) -> TriMesh:
    """
    Read a coarse mesh in the line-oriented text format:

        vertices N
        x y            (N lines)
        cells M
        i j k          (M lines, 0-based)

    Blank lines and lines starting with '#' are ignored. Clockwise cells are
    reoriented.

    Raises:
        MeshFormatError: If the file is malformed.
    """
    path = Path(path)
    try:
        raw = path.read_text().splitlines()
    except OSError as e:
        raise MeshFormatError(str(path), 0, f"cannot read file ({e})") from e
    lines = [(n + 1, line.split()) for n, line in enumerate(raw)
             if line.strip() and not line.lstrip().startswith("#")]

    def section(pos: int, name: str, width: int, kind):
        if pos >= len(lines):
            raise MeshFormatError(str(path), len(raw), f"missing '{name}' header")
        number, tokens = lines[pos]
        if len(tokens) != 2 or tokens[0] != name:
            raise MeshFormatError(str(path), number, f"expected '{name} <count>'")
        try:
            count = int(tokens[1])
        except ValueError:
            raise MeshFormatError(str(path), number, f"invalid count {tokens[1]!r}") from None
        rows = []
        for number, tokens in lines[pos + 1: pos + 1 + count]:
            if len(tokens) != width:
                raise MeshFormatError(str(path), number, f"expected {width} values")
            try:
                rows.append([kind(t) for t in tokens])
            except ValueError:
                raise MeshFormatError(str(path), number, "non-numeric value") from None
        if len(rows) != count:
            raise MeshFormatError(str(path), len(raw), f"expected {count} {name} entries, found {len(rows)}")
        return np.array(rows, dtype=kind).reshape(count, width), pos + 1 + count

    vertices, pos = section(0, "vertices", 2, float)
    cells, pos = section(pos, "cells", 3, int)
    if not np.all(np.isfinite(vertices)):
        raise MeshFormatError(str(path), 0, "non-finite vertex coordinates")
    if cells.size and (cells.min() < 0 or cells.max() >= len(vertices)):
        raise MeshFormatError(str(path), 0, "cell references unknown vertex")

    clockwise = _signed_areas(vertices, cells) < 0
    if np.any(clockwise):
        logger.warning("Reorienting %d clockwise cells from [%s]", int(clockwise.sum()), path)
        cells[clockwise] = cells[clockwise][:, [0, 2, 1]]
    logger.info("Read mesh [%s]: %d vertices, %d cells", path, len(vertices), len(cells))
    return TriMesh.from_cells(vertices, cells, level=0)


def write_mesh(mesh: TriMesh, path: Union[str, Path], comment: Optional[str] = None) -> None:
    path = Path(path)
    lines = [f"# {comment}"] if comment else []
    lines.append(f"vertices {mesh.n_vertices}")
    lines += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices]
    lines.append(f"cells {mesh.n_cells}")
    lines += [f"{i} {j} {k}" for i, j, k in mesh.cells]
    path.write_text("\n".join(lines) + "\n")
