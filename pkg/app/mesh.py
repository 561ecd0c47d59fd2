"""Uniform refinement of T_{a,b}, dof indexing and exact pencil assembly.

The triangle is split into n^2 similar sub-triangles. Vertices, edges and
faces are numbered through oblique integer coordinates: a vertex (p, q)
sits at p*h*(1, 0) + q*h*(a, b); edges and faces are keyed by the sums of
the coordinates of their vertices, so the doubled edge midpoint and the
tripled face centroid are integer keys. Numbering follows a fixed
iteration order (q outer, p inner, up element before down element), and
every id here is 1-based.
"""

import json
import logging
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from app.elements import local_matrix_at
from app.geometry import TriangleShape
from app.schemas import AssemblyError, ConsistencyError, DegenerateTriangleError, FormKind, SpaceKind
from app.symbolic import SymRatMatrix, to_fraction

logger = logging.getLogger(__name__)

UP = 1
DOWN = 2

# (space, j) -> (numerator form A, denominator form B)
PENCIL_FORMS = {
    (SpaceKind.V11, 1): (FormKind.ALPHA0, FormKind.ALPHA1),
    (SpaceKind.V12, 2): (FormKind.ALPHA0, FormKind.ALPHA1),
    (SpaceKind.V2, 3): (FormKind.BETA0, FormKind.BETA2),
    (SpaceKind.V2, 4): (FormKind.BETA1, FormKind.BETA2),
}

SPACE_FOR_J = {1: SpaceKind.V11, 2: SpaceKind.V12, 3: SpaceKind.V2, 4: SpaceKind.V2}

# Flux dofs of a down element point against the global edge normal
BETA_DOWN_SIGNS = np.array([1, 1, 1, -1, -1, -1], dtype=object)


@dataclass(frozen=True)
class MeshIndexing:
    """Id maps of the uniform n^2 refinement.

    vertex_ids[p, q], edge_ids[P, Q] and face_ids[P, Q] hold 1-based ids
    (0 where no entity has that key). Vertices, edges and faces are each
    numbered from 1; the dof layout of a space offsets them (edges before
    faces for the alpha family, vertices before edges for the beta family).
    """

    n: int
    vertex_ids: np.ndarray
    edge_ids: np.ndarray
    face_ids: np.ndarray
    orientation: Tuple[int, ...]

    @property
    def vertex_count(self) -> int:
        return int(self.vertex_ids.max())

    @property
    def edge_count(self) -> int:
        return int(self.edge_ids.max())

    @property
    def face_count(self) -> int:
        return int(self.face_ids.max())

    @property
    def element_count(self) -> int:
        return len(self.orientation)

    def vertex_id(self, row: int, col: int) -> int:
        """Vertex id at a 1-based oblique key."""
        return int(self.vertex_ids[row - 1, col - 1])

    def edge_id(self, row: int, col: int) -> int:
        """Edge id at a 1-based doubled-midpoint key."""
        return int(self.edge_ids[row - 1, col - 1])

    def face_id(self, row: int, col: int) -> int:
        """Face id at a 1-based tripled-centroid key."""
        return int(self.face_ids[row - 1, col - 1])

    def space_size(self, space: SpaceKind) -> int:
        """Number of global dofs before constraints."""
        if SpaceKind(space) == SpaceKind.V2:
            return self.vertex_count + self.edge_count
        return self.edge_count + self.face_count

    def triangle_dofs(self, space: SpaceKind) -> np.ndarray:
        """Per-element 1-based global dof ids in local dof order.

        Alpha family: [edge1, edge2, edge3, face]; beta family:
        [vertex1, vertex2, vertex3, edge1, edge2, edge3]. Edge k is the edge
        opposite vertex k.
        """
        rows = []
        beta = SpaceKind(space) == SpaceKind.V2
        edge_offset = self.vertex_count if beta else 0
        face_offset = self.edge_count
        for cp, cq, _ in _elements(self.n):
            edges = [
                int(self.edge_ids[cp[1] + cp[2], cq[1] + cq[2]]) + edge_offset,
                int(self.edge_ids[cp[2] + cp[0], cq[2] + cq[0]]) + edge_offset,
                int(self.edge_ids[cp[0] + cp[1], cq[0] + cq[1]]) + edge_offset,
            ]
            if beta:
                vertices = [int(self.vertex_ids[cp[k], cq[k]]) for k in range(3)]
                rows.append(vertices + edges)
            else:
                rows.append(edges + [int(self.face_ids[sum(cp), sum(cq)]) + face_offset])
        return np.array(rows, dtype=np.int64)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "n": self.n,
            "vertex_ids": self.vertex_ids.tolist(),
            "edge_ids": self.edge_ids.tolist(),
            "face_ids": self.face_ids.tolist(),
            "orientation": list(self.orientation),
        }


def _elements(n: int) -> Iterator[Tuple[Tuple[int, int, int], Tuple[int, int, int], int]]:
    """Oblique vertex coordinates of every element in numbering order."""
    for q in range(n):
        for p in range(n - q):
            yield (p, p + 1, p), (q, q, q + 1), UP
            if p + q < n - 1:
                yield (p + 1, p, p + 1), (q + 1, q + 1, q), DOWN


def build_indexing(n: int) -> MeshIndexing:
    """Number vertices, edges and faces of the uniform refinement.

    Args:
        n: Subdivisions per side

    Returns:
        MeshIndexing with ids assigned in the reference iteration order

    Raises:
        AssemblyError: If n < 2

    Example:
        >>> idx = build_indexing(2)
        >>> idx.edge_id(2, 2), idx.face_id(2, 5)
        (1, 4)
    """
    if int(n) != n or n < 2:
        raise AssemblyError(f"Subdivision count must be an integer >= 2, got {n}")
    n = int(n)

    vertex_ids = np.zeros((n + 1, n + 1), dtype=np.int64)
    i = 1
    for q in range(n + 1):
        for p in range(n + 1 - q):
            vertex_ids[p, q] = i
            i += 1

    # each edge belongs to exactly one up element
    edge_ids = np.zeros((2 * n, 2 * n), dtype=np.int64)
    i = 1
    for q in range(n):
        for p in range(n - q):
            cp, cq = (p, p + 1, p), (q, q, q + 1)
            for first, second in ((1, 2), (2, 0), (0, 1)):
                edge_ids[cp[first] + cp[second], cq[first] + cq[second]] = i
                i += 1

    face_ids = np.zeros((3 * n, 3 * n), dtype=np.int64)
    orientation = []
    for i, (cp, cq, kind) in enumerate(_elements(n), 1):
        face_ids[sum(cp), sum(cq)] = i
        orientation.append(kind)

    idx = MeshIndexing(n, vertex_ids, edge_ids, face_ids, tuple(orientation))
    logger.debug(
        f"Indexing n={n}: {idx.vertex_count} vertices, {idx.edge_count} edges, {idx.face_count} faces"
    )
    return idx


def constraint_groups(space: SpaceKind, idx: MeshIndexing) -> List[List[int]]:
    """Constraint groups as lists of 1-based global dof ids.

    A group of several ids means "these dofs sum to zero"; the first id is
    the one eliminated. A singleton group pins its dof to zero.
    """
    space = SpaceKind(space)
    n = idx.n
    if space == SpaceKind.V11:
        faces = idx.face_ids.flatten(order="F")
        return [[int(f) + idx.edge_count for f in faces if f > 0]]
    if space == SpaceKind.V12:
        hypotenuse = [idx.edge_ids[i - 1, 2 * n + 1 - i] for i in range(2, 2 * n + 1)]
        left = idx.edge_ids[0, :]
        bottom = idx.edge_ids[:, 0]
        return [[int(e) for e in side if e > 0] for side in (hypotenuse, left, bottom)]
    corners = (idx.vertex_ids[0, 0], idx.vertex_ids[n, 0], idx.vertex_ids[0, n])
    return [[int(v)] for v in corners]


def expected_dimension(space: SpaceKind, n: int) -> int:
    """Dimension of the constrained space."""
    space = SpaceKind(space)
    if space == SpaceKind.V11:
        return (n + 1) * (5 * n - 2) // 2
    if space == SpaceKind.V12:
        return (5 * n * n + 3 * n - 6) // 2
    return (n + 2) * (2 * n - 1)


def pencil_forms(space: SpaceKind, j: int) -> Tuple[FormKind, FormKind]:
    try:
        return PENCIL_FORMS[(SpaceKind(space), int(j))]
    except (KeyError, ValueError) as e:
        raise AssemblyError(f"Space {space} does not carry constant C_{j}") from e


def _zeros(order: int) -> np.ndarray:
    array = np.empty((order, order), dtype=object)
    array.fill(Fraction(0))
    return array


def scatter(local: SymRatMatrix, idx: MeshIndexing, space: SpaceKind) -> np.ndarray:
    """Sum one local matrix over all elements into a dense global array."""
    space = SpaceKind(space)
    up = local.entries
    if space == SpaceKind.V2:
        down = up * np.outer(BETA_DOWN_SIGNS, BETA_DOWN_SIGNS)
    else:
        down = up
    out = _zeros(idx.space_size(space))
    for dofs, kind in zip(idx.triangle_dofs(space) - 1, idx.orientation):
        block = np.ix_(dofs, dofs)
        out[block] = out[block] + (up if kind == UP else down)
    return out


def eliminate(matrix: np.ndarray, groups: Sequence[Sequence[int]]) -> Tuple[np.ndarray, List[int]]:
    """Fold sum-zero and pin-to-zero constraints into a global matrix.

    For each group the first dof s is substituted by minus the sum of the
    rest t (rank-one row and column updates on the current matrix), then
    every s row and column is deleted. This is P^T M P for the substitution
    matrix P.

    Args:
        matrix: Square object array over global dofs (0-based)
        groups: 1-based dof ids per constraint group

    Returns:
        The reduced matrix and the 0-based global dofs it keeps, in order
    """
    cm = matrix.copy()
    removed = []
    for group in groups:
        s = group[0] - 1
        t = [g - 1 for g in group[1:]]
        if t:
            p = cm[:, s].copy()
            q = cm[s, :].copy()
            r = cm[s, s]
            cm[:, t] = cm[:, t] - p[:, None]
            cm[t, :] = cm[t, :] - q[None, :]
            cm[np.ix_(t, t)] = cm[np.ix_(t, t)] + r
        removed.append(s)
    removed_set = set(removed)
    kept = [i for i in range(cm.shape[0]) if i not in removed_set]
    return cm[np.ix_(kept, kept)], kept


@dataclass(frozen=True)
class AssembledPencil:
    """Exact pencil (A, B) of one discrete constant on the constrained space."""

    space: SpaceKind
    j: int
    n: int
    shape: TriangleShape
    A: SymRatMatrix
    B: SymRatMatrix
    kept: Tuple[int, ...]
    groups: Tuple[Tuple[int, ...], ...]
    size: int

    @property
    def dim(self) -> int:
        return self.A.order

    def expand(self, y: Sequence[Any]) -> List[Any]:
        """Lift a reduced dof vector to the full global dof vector."""
        if len(y) != self.dim:
            raise ValueError(f"Expected {self.dim} reduced dofs, got {len(y)}")
        x: List[Any] = [Fraction(0)] * self.size
        for position, value in zip(self.kept, y):
            x[position] = value
        for group in self.groups:
            s = group[0] - 1
            x[s] = -sum((x[g - 1] for g in group[1:]), Fraction(0))
        return x


def assemble_global(
    space: SpaceKind,
    j: int,
    n: int,
    shape: TriangleShape,
    idx: Optional[MeshIndexing] = None,
) -> Tuple[np.ndarray, np.ndarray, MeshIndexing]:
    """Unconstrained global matrices of the pencil for C_j."""
    form_a, form_b = pencil_forms(space, j)
    if shape.b <= 0:
        raise DegenerateTriangleError(f"Shape height must be positive, got b={shape.b}")
    idx = idx if idx is not None else build_indexing(n)
    h = Fraction(1, idx.n)
    a_local = local_matrix_at(form_a, shape, h)
    b_local = local_matrix_at(form_b, shape, h)
    return scatter(a_local, idx, space), scatter(b_local, idx, space), idx


def assemble(
    space: SpaceKind,
    j: int,
    n: int,
    shape: TriangleShape,
    check_definite: bool = True,
) -> AssembledPencil:
    """Assemble the exact pencil (A, B) of C_j^(n)(T_{a,b}).

    Args:
        space: V11 (j=1), V12 (j=2) or V2 (j=3, 4)
        j: Constant index
        n: Subdivisions per side
        shape: Exact shape of the parent triangle
        check_definite: Attempt a float Cholesky of B as a sanity check

    Returns:
        AssembledPencil on the constrained space

    Raises:
        AssemblyError: Incompatible (space, j) or n < 2
        DegenerateTriangleError: b <= 0
        ConsistencyError: Wrong reduced dimension or B numerically indefinite
    """
    space = SpaceKind(space)
    a_full, b_full, idx = assemble_global(space, j, n, shape)
    groups = constraint_groups(space, idx)
    a_red, kept = eliminate(a_full, groups)
    b_red, _ = eliminate(b_full, groups)

    expected = expected_dimension(space, idx.n)
    if len(kept) != expected:
        raise ConsistencyError(f"{space.value} n={idx.n}: dimension {len(kept)}, expected {expected}")

    pencil = AssembledPencil(
        space=space,
        j=int(j),
        n=idx.n,
        shape=shape,
        A=SymRatMatrix(a_red),
        B=SymRatMatrix(b_red),
        kept=tuple(kept),
        groups=tuple(tuple(g) for g in groups),
        size=idx.space_size(space),
    )
    if check_definite:
        try:
            np.linalg.cholesky(pencil.B.to_float())
        except np.linalg.LinAlgError as e:
            raise ConsistencyError(f"Denominator form of {space.value} is not positive definite") from e
    logger.info(f"Assembled {space.value} pencil for C_{j}, n={idx.n}, dim={pencil.dim}")
    return pencil


def rayleigh_quotient(pencil: AssembledPencil, x: Sequence[Any]) -> Fraction:
    """Exact x^T A x / x^T B x on the reduced space."""
    x = [to_fraction(v) for v in x]
    if len(x) != pencil.dim:
        raise ValueError(f"Vector length {len(x)} does not match dimension {pencil.dim}")
    if all(v == 0 for v in x):
        raise ValueError("Rayleigh quotient of the zero vector")
    denominator = pencil.B.quadratic_form(x)
    if denominator == 0:
        raise ConsistencyError("x^T B x = 0 for a nonzero vector")
    return Fraction(pencil.A.quadratic_form(x)) / denominator


def dump_debug(idx: MeshIndexing, pencil: Optional[AssembledPencil], path: Path) -> Path:
    """Write the indexing and, optionally, the pencil as JSON."""
    payload: Dict[str, Any] = {"indexing": idx.to_dict()}
    if pencil is not None:
        payload["pencil"] = {
            "space": pencil.space.value,
            "j": pencil.j,
            "n": pencil.n,
            "a": str(pencil.shape.a),
            "b": str(pencil.shape.b),
            "kept": list(pencil.kept),
            "A": pencil.A.to_strings(),
            "B": pencil.B.to_strings(),
        }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
    logger.info(f"Mesh debug dump written to {path}")
    return path
