"""Bilayer AB-stacked hexagonal geometry, neighbor stencils and truncation.

Lattice constant a = 1. Upper layer: A at s, B at s + p. Lower layer: A at
s + d, B at s + d + p, where s = v1*e1 + v2*e2 runs over the Bravais lattice.
Displacements are scalar and act along x only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SQRT3 = np.sqrt(3.0)
E1 = np.array([1.0, 0.0])
E2 = np.array([0.5, SQRT3 / 2.0])
P = np.array([0.5, SQRT3 / 6.0])
D = np.array([0.5, -SQRT3 / 6.0])
CELL_AREA = SQRT3 / 2.0
Y_PERIOD = SQRT3

UPPER, LOWER = 0, 1
SUB_A, SUB_B = 0, 1


@dataclass(frozen=True)
class LatticeSpec:
    """Fixed bilayer geometry; only the interlayer gap dz is adjustable."""

    a: float = 1.0
    dz: float = 1.0 / SQRT3

    def __post_init__(self):
        if self.a != 1.0:
            raise ValueError("the artifact works in units with a = 1")
        if self.dz <= 0:
            raise ValueError("dz must be positive")


def sublattice_offset(layer: int, kappa: int) -> np.ndarray:
    """Position of a sublattice site relative to its cell origin s."""
    off = np.zeros(2)
    if layer == LOWER:
        off = off + D
    if kappa == SUB_B:
        off = off + P
    return off


def bravais_within(radius: float, shift=(0.0, 0.0), include_zero: bool = True):
    """Integer pairs (v1, v2) and vectors v1*e1 + v2*e2 + shift with norm < radius."""
    k = int(np.ceil(radius / (SQRT3 / 2.0))) + 2
    v1, v2 = np.meshgrid(np.arange(-k, k + 1), np.arange(-k, k + 1), indexing="ij")
    v1 = v1.ravel()
    v2 = v2.ravel()
    vec = v1[:, None] * E1 + v2[:, None] * E2 + np.asarray(shift, dtype=float)
    n = np.linalg.norm(vec, axis=1)
    keep = n < radius
    if not include_zero:
        keep &= n > 1e-12
    idx = np.stack([v1[keep], v2[keep]], axis=1)
    order = np.lexsort((vec[keep][:, 1], vec[keep][:, 0], n[keep]))
    return idx[order], vec[keep][order]


@dataclass(frozen=True)
class IntraStencil:
    """Three-body stencil centered at a site of sublattice ``kappa``.

    Each row couples the center to two neighbours given by cell offsets and
    sublattices, with reference vectors r1, r2 and a weight.
    """

    off1: np.ndarray
    sub1: np.ndarray
    off2: np.ndarray
    sub2: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    weight: np.ndarray
    kind: np.ndarray


KIND_SAME, KIND_MIXED = 0, 1


def intra_stencil(kappa: int, rc: float, fold_exchange: bool = True) -> IntraStencil:
    """All three-body terms centered at one site of sublattice kappa.

    Same-sublattice triples carry weight 1/6 per ordered pair (1/3 per
    unordered pair when ``fold_exchange``); mixed triples carry weight 1/2.
    """
    other = 1 - kappa
    sign = 1.0 if kappa == SUB_A else -1.0
    idx_s, vec_s = bravais_within(rc, include_zero=False)
    idx_m, vec_m = bravais_within(rc, shift=sign * P)
    rows = []
    n = len(vec_s)
    for i in range(n):
        for j in range(n):
            if i == j or (fold_exchange and j < i):
                continue
            w = 1.0 / 3.0 if fold_exchange else 1.0 / 6.0
            rows.append((idx_s[i], kappa, idx_s[j], kappa, vec_s[i], vec_s[j], w, KIND_SAME))
    for i in range(len(vec_m)):
        for j in range(n):
            rows.append((idx_m[i], other, idx_s[j], kappa, vec_m[i], vec_s[j], 0.5, KIND_MIXED))
    return IntraStencil(
        off1=np.array([r[0] for r in rows], dtype=np.int64).reshape(-1, 2),
        sub1=np.array([r[1] for r in rows], dtype=np.int64),
        off2=np.array([r[2] for r in rows], dtype=np.int64).reshape(-1, 2),
        sub2=np.array([r[3] for r in rows], dtype=np.int64),
        r1=np.array([r[4] for r in rows]).reshape(-1, 2),
        r2=np.array([r[5] for r in rows]).reshape(-1, 2),
        weight=np.array([r[6] for r in rows]),
        kind=np.array([r[7] for r in rows], dtype=np.int64),
    )


# (upper sublattice, lower sublattice, reference shift added to s)
MISFIT_ROWS = (
    (SUB_A, SUB_A, -D),
    (SUB_A, SUB_B, -D - P),
    (SUB_B, SUB_A, P - D),
    (SUB_B, SUB_B, -D),
)


def misfit_offsets(planar_reach: float):
    """Per row: cell offsets s and reference in-plane vectors xi = s + shift
    with |xi| < planar_reach."""
    out = []
    for ku, kl, shift in MISFIT_ROWS:
        idx, vec = bravais_within(planar_reach, shift=shift)
        out.append((ku, kl, idx, vec))
    return out


@dataclass
class TruncatedLattice:
    """Atoms of both layers in the window |x| <= L, periodic in y.

    The y-period holds ``n_y`` copies of the minimal period sqrt(3); cells are
    (v1, v2) with 0 <= v2 < 2*n_y, and (v1, v2 + 2*n_y) is identified with
    (v1 + n_y, v2).
    """

    L: float
    n_y: int
    R_cut: float
    layer: np.ndarray
    kappa: np.ndarray
    cell: np.ndarray
    pos: np.ndarray
    interior: np.ndarray
    _lookup: dict = field(repr=False, default_factory=dict)
    _v1min: int = 0
    _table: np.ndarray = field(repr=False, default=None)

    @property
    def n_atoms(self) -> int:
        return len(self.layer)

    @property
    def y_length(self) -> float:
        return self.n_y * Y_PERIOD

    def wrap(self, v1, v2):
        """Canonical cell indices under the y identification."""
        v1 = np.asarray(v1)
        v2 = np.asarray(v2)
        m = 2 * self.n_y
        q = np.floor_divide(v2, m)
        return v1 + q * self.n_y, v2 - q * m

    def index(self, layer, kappa, v1, v2):
        """Atom index for the given sites, -1 where the atom is not stored."""
        v1, v2 = self.wrap(v1, v2)
        layer = np.broadcast_to(layer, v1.shape)
        kappa = np.broadcast_to(kappa, v1.shape)
        j = v1 - self._v1min
        ok = (j >= 0) & (j < self._table.shape[2])
        out = np.full(v1.shape, -1, dtype=np.int64)
        out[ok] = self._table[layer[ok], kappa[ok], j[ok], v2[ok]]
        return out

    def sites(self, layer: int, kappa: int) -> np.ndarray:
        return np.nonzero((self.layer == layer) & (self.kappa == kappa))[0]


def build_lattice(L: float, n_y: int, R_cut: float, spec: LatticeSpec | None = None) -> TruncatedLattice:
    """Store every atom with |x| <= L; flag atoms with |x| <= L - R_cut as interior."""
    if not L > 0 or not R_cut > 0 or n_y < 1:
        raise ValueError("L, R_cut and n_y must be positive")
    if R_cut < 1.0:
        raise ValueError("R_cut must be at least one lattice constant")
    if not L > 2 * R_cut:
        raise ValueError("window half-width must exceed twice the cutoff")
    v1min = int(np.floor(-L - n_y - 2))
    v1max = int(np.ceil(L + 2))
    v1 = np.arange(v1min, v1max + 1)
    v2 = np.arange(2 * n_y)
    V1, V2 = np.meshgrid(v1, v2, indexing="ij")
    base = V1.ravel()[:, None] * E1 + V2.ravel()[:, None] * E2
    layers, kappas, cells, poss = [], [], [], []
    for layer in (UPPER, LOWER):
        for kappa in (SUB_A, SUB_B):
            pos = base + sublattice_offset(layer, kappa)
            keep = np.abs(pos[:, 0]) <= L + 1e-9
            layers.append(np.full(keep.sum(), layer))
            kappas.append(np.full(keep.sum(), kappa))
            cells.append(np.stack([V1.ravel()[keep], V2.ravel()[keep]], axis=1))
            poss.append(pos[keep])
    layer_a = np.concatenate(layers)
    kappa_a = np.concatenate(kappas)
    cell_a = np.concatenate(cells)
    pos_a = np.concatenate(poss)
    # order by x, then y, so coupled atoms have nearby indices
    order = np.lexsort((layer_a, pos_a[:, 1], np.round(pos_a[:, 0], 9)))
    layer_a, kappa_a, cell_a, pos_a = layer_a[order], kappa_a[order], cell_a[order], pos_a[order]
    table = np.full((2, 2, v1max - v1min + 1, 2 * n_y), -1, dtype=np.int64)
    table[layer_a, kappa_a, cell_a[:, 0] - v1min, cell_a[:, 1]] = np.arange(len(layer_a))
    lat = TruncatedLattice(
        L=float(L), n_y=int(n_y), R_cut=float(R_cut), layer=layer_a, kappa=kappa_a,
        cell=cell_a, pos=pos_a, interior=np.abs(pos_a[:, 0]) <= L - R_cut + 1e-9,
    )
    lat._v1min = v1min
    lat._table = table
    return lat


@dataclass(frozen=True)
class Triangulation:
    """Triangles with vertices given by (unwrapped) cell indices and sublattices.

    ``mixed`` marks triangles with vertices on both sublattices.
    """

    base: int
    cells: np.ndarray  # (nt, 3, 2)
    subl: np.ndarray   # (nt, 3)
    mixed: np.ndarray  # (nt,)

    def __len__(self) -> int:
        return len(self.subl)

    def positions(self, layer: int = UPPER) -> np.ndarray:
        c = self.cells
        pos = c[..., 0, None] * E1 + c[..., 1, None] * E2
        off = np.stack([sublattice_offset(layer, SUB_A), sublattice_offset(layer, SUB_B)])
        return pos + off[self.subl]

    def area2(self, layer: int = UPPER) -> np.ndarray:
        """Twice the signed area of every triangle."""
        p = self.positions(layer)
        a = p[:, 1] - p[:, 0]
        b = p[:, 2] - p[:, 0]
        return a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]


def triangulate(n1: int, n2: int, base: int = SUB_A, split_mixed: bool = True,
                v1_start: int = 0, v2_start: int = 0) -> Triangulation:
    """Base-sublattice triangulation of an n1 x n2 patch of cells.

    The base sublattice is cut into equilateral triangles, two per cell.
    For base A the other sublattice sits at the centroid of the up-triangles
    (s, s+e1, s+e2); for base B at the centroid of the down-triangles
    (s+e1, s+e1+e2, s+e2). With ``split_mixed`` each such triangle is split
    into three mixed triangles through that site.
    """
    if n1 < 1 or n2 < 1:
        raise ValueError("need at least one cell in each direction")
    other = 1 - base
    up = np.array([(0, 0), (1, 0), (0, 1)])
    down = np.array([(1, 0), (1, 1), (0, 1)])
    # cell of the other-sublattice site inside the split triangle
    centre = np.array([0, 0]) if base == SUB_A else np.array([1, 1])
    split_shape = up if base == SUB_A else down
    plain_shape = down if base == SUB_A else up
    v1, v2 = np.meshgrid(np.arange(n1) + v1_start, np.arange(n2) + v2_start, indexing="ij")
    s = np.stack([v1.ravel(), v2.ravel()], axis=1)
    cells, subl, mixed = [], [], []
    plain = s[:, None, :] + plain_shape[None]
    cells.append(plain)
    subl.append(np.full((len(s), 3), base))
    mixed.append(np.zeros(len(s), dtype=bool))
    tri = s[:, None, :] + split_shape[None]
    if split_mixed:
        c = s + centre
        for i in range(3):
            j = (i + 1) % 3
            cells.append(np.stack([tri[:, i], tri[:, j], c], axis=1))
            subl.append(np.tile([base, base, other], (len(s), 1)))
            mixed.append(np.ones(len(s), dtype=bool))
    else:
        cells.append(tri)
        subl.append(np.full((len(s), 3), base))
        mixed.append(np.zeros(len(s), dtype=bool))
    return Triangulation(base=base, cells=np.concatenate(cells), subl=np.concatenate(subl),
                         mixed=np.concatenate(mixed))


def triangulate_window(lat: "TruncatedLattice", base: int = SUB_A, layer: int | None = UPPER) -> Triangulation:
    """Triangles of one period in y whose vertices are all stored atoms of
    ``layer``, or of both layers when ``layer`` is None."""
    v1min = lat._v1min
    n1 = lat._table.shape[2]
    tri = triangulate(n1, 2 * lat.n_y, base, True, v1_start=v1min - 1, v2_start=0)
    layers = (UPPER, LOWER) if layer is None else (layer,)
    keep = np.ones(len(tri), dtype=bool)
    for ly in layers:
        idx = lat.index(ly, tri.subl, tri.cells[..., 0], tri.cells[..., 1])
        keep &= (idx >= 0).all(axis=1)
    return Triangulation(base=base, cells=tri.cells[keep], subl=tri.subl[keep], mixed=tri.mixed[keep])


def site_position(v1, v2, layer: int, kappa: int) -> np.ndarray:
    return v1 * E1 + v2 * E2 + sublattice_offset(layer, kappa)


def triangle_area2(p0, p1, p2) -> float:
    """Twice the signed area of a triangle."""
    return float((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]))
