"""
Incremental (Bowyer-Watson) 3D Delaunay tetrahedralization.

Orientation and in-sphere signs come from a float64 evaluation when it is
clear of its rounding error bound and from exact rational arithmetic
otherwise. In-sphere ties are resolved by symbolically perturbing the lifted
coordinate of each point, lower point index dominating, so co-spherical and
grid-aligned inputs (cube corners, voxel lattices) still produce a valid,
deterministic tetrahedralization.
"""
from dataclasses import dataclass
from fractions import Fraction
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import ConvexHull

from utils.errors import DegenerateConfigurationError, ValidationError

logger = logging.getLogger(__name__)

# relative error bounds of the float determinants, well above the rounding error
ORIENT_FILTER = 1e-14
SPHERE_FILTER = 1e-13
# faces opposite vertex 0..3 of a tet (a, b, c, d)
FACE_VERTICES = ((1, 2, 3), (0, 2, 3), (0, 1, 3), (0, 1, 2))


def _det3(u, v, w):
    return (u[0] * (v[1] * w[2] - v[2] * w[1])
            - u[1] * (v[0] * w[2] - v[2] * w[0])
            + u[2] * (v[0] * w[1] - v[1] * w[0]))


def _permanent3(u, v, w) -> float:
    """Sum of the absolute products in _det3; bounds its rounding error"""
    return (abs(u[0]) * (abs(v[1] * w[2]) + abs(v[2] * w[1]))
            + abs(u[1]) * (abs(v[0] * w[2]) + abs(v[2] * w[0]))
            + abs(u[2]) * (abs(v[0] * w[1]) + abs(v[1] * w[0])))


def _exact(point) -> List[Fraction]:
    return [Fraction(float(x)) for x in point]


def _minus(p, q) -> list:
    return [p[k] - q[k] for k in range(3)]


def orient(a, b, c, d) -> float:
    """det[b - a; c - a; d - a]; positive for a right-handed tet, exactly 0.0 when flat"""
    u, v, w = b - a, c - a, d - a
    det = _det3(u, v, w)
    if abs(det) > ORIENT_FILTER * _permanent3(u, v, w):
        return float(det)
    a, b, c, d = (_exact(p) for p in (a, b, c, d))
    return float(_det3(_minus(b, a), _minus(c, a), _minus(d, a)))


def _cofactors(rows) -> list:
    return [(-1) ** (r + 3) * _det3(*[rows[s] for s in range(4) if s != r]) for r in range(4)]


class _Predicates:
    """Orientation / in-sphere on a fixed coordinate table"""

    def __init__(self, coords: np.ndarray):
        self.coords = coords

    def orient(self, i, j, k, l) -> float:
        c = self.coords
        return orient(c[i], c[j], c[k], c[l])

    def in_sphere(self, tet: Tuple[int, int, int, int], e: int) -> bool:
        """True if point e is (symbolically) strictly inside the circumsphere of positive tet"""
        c = self.coords
        rows = [c[q] - c[e] for q in tet]
        lifts = [float(r @ r) for r in rows]
        # 4x4 determinant of rows [q - e, |q - e|^2], expanded along the lift column
        det = sum(lifts[r] * cof for r, cof in enumerate(_cofactors(rows)))
        bound = sum(lifts[r] * _permanent3(*[rows[s] for s in range(4) if s != r]) for r in range(4))
        if abs(det) > SPHERE_FILTER * bound:
            return det < 0

        origin = _exact(c[e])
        rows = [_minus(_exact(c[q]), origin) for q in tet]
        cof = _cofactors(rows)
        det = sum(sum(x * x for x in rows[r]) * cof[r] for r in range(4))
        if det != 0:
            return det < 0
        # det' = det + sum_q eps_q C_q - eps_e sum_q C_q; smallest index dominates
        coefficients = {tet[r]: cof[r] for r in range(4)}
        coefficients[e] = -sum(cof)
        for index in sorted(coefficients):
            if coefficients[index] != 0:
                return coefficients[index] < 0
        # unreachable for non-degenerate tets: the e coefficient is +-orient(tet)
        return False


@dataclass(frozen=True, eq=False)
class Tetrahedralization:
    """Delaunay tets over deduplicated points.

    tets[t] are positively oriented index quadruples into points;
    adjacency[t, i] is the tet across the face opposite vertex i (-1 on the hull).
    source_index maps each kept point back to its position in the input list.
    """

    points: np.ndarray
    tets: np.ndarray
    adjacency: np.ndarray
    source_index: np.ndarray
    n_input: int

    @property
    def duplicates_removed(self) -> int:
        return self.n_input - len(self.points)

    def volumes(self) -> np.ndarray:
        p = self.points[self.tets]
        return np.linalg.det(np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=1)) / 6.0

    def total_volume(self) -> float:
        return float(self.volumes().sum())

    def inverse_transforms(self) -> np.ndarray:
        """(T, 3, 3) inverses of [v1 - v0, v2 - v0, v3 - v0] as columns"""
        p = self.points[self.tets]
        T = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0], p[:, 3] - p[:, 0]], axis=-1)
        return np.linalg.inv(T)

    def barycentric(self, tet_index: int, point: np.ndarray) -> np.ndarray:
        v = self.points[self.tets[tet_index]]
        T = np.stack([v[1] - v[0], v[2] - v[0], v[3] - v[0]], axis=-1)
        lam = np.linalg.solve(T, np.asarray(point, dtype=np.float64) - v[0])
        return np.concatenate([[1.0 - lam.sum()], lam])

    def locate(self, point, start: int = 0, tol: float = 1e-12) -> Tuple[int, np.ndarray]:
        """Walk across faces toward point; (-1, None) when it lies outside the hull"""
        point = np.asarray(point, dtype=np.float64)
        current = int(start) if 0 <= start < len(self.tets) else 0
        visited = set()
        while current not in visited:
            visited.add(current)
            bary = self.barycentric(current, point)
            worst = int(np.argmin(bary))
            if bary[worst] >= -tol:
                return current, bary
            nxt = int(self.adjacency[current, worst])
            if nxt < 0:
                return -1, None
            current = nxt
        return self._locate_exhaustive(point, tol)

    def _locate_exhaustive(self, point: np.ndarray, tol: float) -> Tuple[int, Optional[np.ndarray]]:
        inv = self.inverse_transforms()
        lam = np.einsum('tij,tj->ti', inv, point - self.points[self.tets[:, 0]])
        bary = np.concatenate([1.0 - lam.sum(axis=1, keepdims=True), lam], axis=1)
        best = int(np.argmax(bary.min(axis=1)))
        if bary[best].min() >= -tol:
            return best, bary[best]
        return -1, None


def _deduplicate(points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    _, first = np.unique(points, axis=0, return_index=True)
    keep = np.sort(first)
    if len(keep) != len(points):
        logger.warning(f"Delaunay input had {len(points) - len(keep)} exact duplicate point(s); "
                       f"keeping the first occurrence of each")
    return points[keep], keep


def _super_tet(points: np.ndarray, scale: float) -> np.ndarray:
    """Regular tetrahedron whose insphere contains every point with a wide margin"""
    center = points.mean(axis=0)
    r = max(float(np.linalg.norm(points - center, axis=1).max()), 1e-12)
    R = r * scale  # inradius
    a = R * np.sqrt(24.0)
    return np.array([
        [center[0] - a / 2, center[1] - np.sqrt(3) * a / 6, center[2] - R],
        [center[0] + a / 2, center[1] - np.sqrt(3) * a / 6, center[2] - R],
        [center[0], center[1] + np.sqrt(3) * a / 3, center[2] - R],
        [center[0], center[1], center[2] + np.sqrt(6) * a / 3 - R],
    ])


def _face_key(tet: Tuple[int, ...], i: int) -> Tuple[int, int, int]:
    return tuple(sorted(tet[v] for v in FACE_VERTICES[i]))


class _BowyerWatson:
    def __init__(self, coords: np.ndarray, n_real: int):
        self.pred = _Predicates(coords)
        self.coords = coords
        self.n_real = n_real
        self.tets: Dict[int, Tuple[int, int, int, int]] = {}
        self.faces: Dict[Tuple[int, int, int], List[int]] = {}
        self.next_id = 0
        self.last = None

    def add_tet(self, tet: Tuple[int, int, int, int]) -> int:
        a, b, c, d = tet
        o = self.pred.orient(a, b, c, d)
        if o == 0.0:
            raise DegenerateConfigurationError("flat tetrahedron during insertion", f"vertices {tet}")
        if o < 0:
            tet = (b, a, c, d)
        tid = self.next_id
        self.next_id += 1
        self.tets[tid] = tet
        for i in range(4):
            self.faces.setdefault(_face_key(tet, i), []).append(tid)
        self.last = tid
        return tid

    def remove_tet(self, tid: int):
        tet = self.tets.pop(tid)
        for i in range(4):
            key = _face_key(tet, i)
            owners = self.faces[key]
            owners.remove(tid)
            if not owners:
                del self.faces[key]

    def neighbor(self, tid: int, i: int) -> int:
        for other in self.faces[_face_key(self.tets[tid], i)]:
            if other != tid:
                return other
        return -1

    def _contains(self, tid: int, p: int) -> Tuple[bool, int]:
        """(inside, face to cross); closed containment with orientation tests"""
        tet = self.tets[tid]
        worst, worst_value = -1, 0.0
        for i in range(4):
            swapped = list(tet)
            swapped[i] = p
            o = self.pred.orient(*swapped)
            if o < worst_value:
                worst, worst_value = i, o
        return worst < 0, worst

    def locate(self, p: int) -> int:
        """A tet whose circumsphere contains p (the tet containing p when the walk succeeds)"""
        current = self.last if self.last in self.tets else next(iter(self.tets))
        for _ in range(4 * len(self.tets) + 16):
            inside, face = self._contains(current, p)
            if inside:
                if self.pred.in_sphere(self.tets[current], p):
                    return current
                break
            nxt = self.neighbor(current, face)
            if nxt < 0:
                break
            current = nxt
        # fall back to a scan for a tet in conflict with p
        for tid, tet in self.tets.items():
            if self.pred.in_sphere(tet, p):
                return tid
        raise DegenerateConfigurationError("point could not be located", f"index {p}")

    def insert(self, p: int):
        seed = self.locate(p)
        bad = {seed}
        stack = [seed]
        boundary = []
        while stack:
            tid = stack.pop()
            tet = self.tets[tid]
            for i in range(4):
                other = self.neighbor(tid, i)
                if other >= 0 and other in bad:
                    continue
                if other >= 0 and self.pred.in_sphere(self.tets[other], p):
                    bad.add(other)
                    stack.append(other)
                else:
                    boundary.append(tuple(tet[v] for v in FACE_VERTICES[i]))
        for tid in sorted(bad):
            self.remove_tet(tid)
        for face in boundary:
            self.add_tet((face[0], face[1], face[2], p))

    def result(self) -> np.ndarray:
        tets = [t for _, t in sorted(self.tets.items()) if max(t) < self.n_real]
        return np.array(tets, dtype=np.int64).reshape(-1, 4)


def _adjacency(tets: np.ndarray) -> np.ndarray:
    adjacency = -np.ones(tets.shape, dtype=np.int64)
    owners: Dict[Tuple[int, int, int], Tuple[int, int]] = {}
    for t, tet in enumerate(tets):
        for i in range(4):
            key = _face_key(tuple(tet), i)
            if key in owners:
                u, j = owners.pop(key)
                adjacency[t, i] = u
                adjacency[u, j] = t
            else:
                owners[key] = (t, i)
    return adjacency


def delaunay_build(points: Sequence, order: Optional[Sequence[int]] = None,
                   max_attempts: int = 4) -> Tetrahedralization:
    """Delaunay tetrahedralization of >= 4 non-coplanar points.

    order: optional insertion order over the deduplicated points (defaults to input order).
    """
    raw = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(raw)):
        raise ValidationError("Delaunay input contains non-finite coordinates")
    if len(raw) < 4:
        raise DegenerateConfigurationError("fewer than 4 points", f"got {len(raw)}")
    unique, source_index = _deduplicate(raw)
    if len(unique) < 4:
        raise DegenerateConfigurationError("fewer than 4 distinct points", f"got {len(unique)}")
    centered = unique - unique.mean(axis=0)
    singular = np.linalg.svd(centered, compute_uv=False)
    if singular[-1] <= 1e-10 * singular[0]:
        raise DegenerateConfigurationError("coplanar points", "no tetrahedron spans the input")

    n = len(unique)
    insertion = list(range(n)) if order is None else [int(i) for i in order]
    if sorted(insertion) != list(range(n)):
        raise ValidationError("insertion order must be a permutation of the point indices")

    hull_volume = ConvexHull(unique).volume
    scale = 100.0
    for attempt in range(max_attempts):
        coords = np.vstack([unique, _super_tet(unique, scale)])
        builder = _BowyerWatson(coords, n)
        builder.add_tet((n, n + 1, n + 2, n + 3))
        for p in insertion:
            builder.insert(p)
        tets = builder.result()
        tri = Tetrahedralization(unique, tets, _adjacency(tets), source_index, len(raw))
        volume = tri.total_volume() if len(tets) else 0.0
        if abs(volume - hull_volume) <= 1e-9 * max(hull_volume, 1e-300):
            logger.debug(f"Delaunay: {n} points, {len(tets)} tets")
            return tri
        logger.debug(f"Delaunay hull incomplete ({volume:.6g} of {hull_volume:.6g}); enlarging super-tet")
        scale *= 100.0
    raise DegenerateConfigurationError("tetrahedralization does not cover the convex hull",
                                       f"after {max_attempts} super-tetrahedron sizes")
