"""
Four-dimensional (dual-polarization) signal constellations.

A constellation is stored as an ``(M, 4)`` array of real coordinates
``(xI, xQ, yI, yQ)``; the complex view ``cx = xI + j xQ``, ``cy = yI + j yQ``
is available through :attr:`Constellation.cx` / :attr:`Constellation.cy`.

Generators
----------
generate_d4_lam :
    Spherical carve of a shifted D4 (chequerboard) lattice.
generate_sphere_4dpsk :
    Equal-energy points spread over the unit 3-sphere by repulsion.
generate_hex_cylinder_psk :
    Constant-amplitude points on a hexagonal grid in phase space.
generate_biorthogonal :
    The 8-point cross-polytope, optionally rotated to constant amplitude.
generate_classic_dual :
    Cartesian product of a classic 2-D set with itself.
"""

from __future__ import annotations

import enum
import itertools
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import pdist

from .errors import CountUnreachable, InvalidCount, NonConvergence

# deep hole of D4; the origin is not a lattice node after the shift
DEEP_HOLE = (0.5, 0.5, 0.5, 0.5)

# decimal places used to identify coincident symbol-elements
_ELEMENT_DECIMALS = 9


class DetectionMode(str, enum.Enum):
    JOINT = "Joint4D"
    PER_POL = "PerPolarization"


@dataclass(frozen=True)
class Symbol4D:
    """One dual-polarization symbol (Jones-vector amplitudes)."""

    cx: complex
    cy: complex

    @property
    def energy(self) -> float:
        return abs(self.cx) ** 2 + abs(self.cy) ** 2

    def to_real(self) -> tuple[float, float, float, float]:
        return (self.cx.real, self.cx.imag, self.cy.real, self.cy.imag)

    @classmethod
    def from_real(cls, xi, xq, yi, yq) -> "Symbol4D":
        return cls(complex(xi, xq), complex(yi, yq))


def _unique_in_order(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distinct rows of ``values`` in first-appearance order and the inverse map."""
    keys = np.round(values, _ELEMENT_DECIMALS) + 0.0  # collapse -0.0
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    order = np.argsort(first)
    rank = np.empty_like(order)
    rank[order] = np.arange(order.size)
    return values[first[order]], rank[inverse.ravel()]


@dataclass(frozen=True, eq=False)
class Constellation:
    """A finite set of 4-D symbols plus detection metadata.

    ``points`` has shape ``(M, 4)``. For ``PerPolarization`` constellations the
    point with index ``i * Ky + j`` carries X element ``i`` and Y element ``j``;
    the factor sets are derived at construction and an exact Cartesian product
    is enforced.
    """

    points: np.ndarray
    name: str = "custom"
    detection_mode: DetectionMode = DetectionMode.JOINT
    factor_x: Optional[np.ndarray] = field(default=None, repr=False)
    factor_y: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 4 or len(pts) == 0:
            raise ValueError(f"points must have shape (M, 4), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        mode = DetectionMode(self.detection_mode)
        object.__setattr__(self, "detection_mode", mode)
        if mode is DetectionMode.PER_POL:
            fx, ix = _unique_in_order(pts[:, :2])
            fy, iy = _unique_in_order(pts[:, 2:])
            if len(fx) * len(fy) != len(pts) or np.any(ix * len(fy) + iy != np.arange(len(pts))):
                raise ValueError(f"{self.name}: PerPolarization requires an ordered Cartesian product")
            object.__setattr__(self, "factor_x", fx[:, 0] + 1j * fx[:, 1])
            object.__setattr__(self, "factor_y", fy[:, 0] + 1j * fy[:, 1])

    def __len__(self):
        return len(self.points)

    def __getitem__(self, k) -> Symbol4D:
        return Symbol4D.from_real(*self.points[k])

    @property
    def size(self) -> int:
        return len(self.points)

    @property
    def bits_per_symbol(self) -> float:
        return math.log2(len(self.points))

    @property
    def cx(self) -> np.ndarray:
        return self.points[:, 0] + 1j * self.points[:, 1]

    @property
    def cy(self) -> np.ndarray:
        return self.points[:, 2] + 1j * self.points[:, 3]

    @property
    def energies(self) -> np.ndarray:
        return np.einsum("ij,ij->i", self.points, self.points)

    @property
    def avg_energy(self) -> float:
        return float(self.energies.mean())

    def normalize(self) -> "Constellation":
        """Return a copy scaled to unit average energy."""
        return self.scaled(1.0 / math.sqrt(self.avg_energy))

    def scaled(self, factor: float) -> "Constellation":
        return Constellation(self.points * factor, self.name, self.detection_mode)

    def rotated(self, rotation: np.ndarray) -> "Constellation":
        """Apply a 4x4 orthogonal matrix; the result is always jointly detected."""
        return Constellation(self.points @ np.asarray(rotation).T, self.name, DetectionMode.JOINT)

    def renamed(self, name: str) -> "Constellation":
        return Constellation(self.points, name, self.detection_mode)


def min_distance(c: Constellation) -> float:
    """Exact minimum 4-D Euclidean distance over all point pairs."""
    if len(c) < 2:
        raise ValueError("min_distance needs at least two points")
    return float(pdist(c.points).min())


def distance_spectrum(c: Constellation, decimals: int = 9) -> dict[float, int]:
    """Histogram of pairwise distances (rounded), mainly for diagnostics."""
    d = np.round(pdist(c.points), decimals)
    values, counts = np.unique(d, return_counts=True)
    return dict(zip(values.tolist(), counts.tolist()))


# ---------------------------------------------------------------------------
# Lattice carve
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LatticeCarveSpec:
    """Carve request. ``partial_shell="reject"`` forbids cutting through a shell."""

    target_count: int
    offset: tuple[float, float, float, float] = DEEP_HOLE
    search_radius_hint: Optional[float] = None
    partial_shell: str = "lex"

    def __post_init__(self):
        if self.target_count < 1:
            raise ValueError("target_count must be >= 1")
        if len(self.offset) != 4:
            raise ValueError("offset must be a 4-vector")
        if self.partial_shell not in ("lex", "reject"):
            raise ValueError("partial_shell must be 'lex' or 'reject'")


def d4_nodes_in_ball(offset: Sequence[float], radius: float) -> np.ndarray:
    """All ``v + offset`` with ``v`` in D4 and ``|v + offset| <= radius``."""
    off = np.asarray(offset, dtype=float)
    lo = np.floor(-radius - off).astype(int)
    hi = np.ceil(radius - off).astype(int)
    axes = [np.arange(lo[k], hi[k] + 1) for k in range(4)]
    grid = np.array(np.meshgrid(*axes, indexing="ij")).reshape(4, -1).T
    grid = grid[grid.sum(axis=1) % 2 == 0]
    shifted = grid + off
    keep = np.einsum("ij,ij->i", shifted, shifted) <= radius**2 + 1e-9
    return shifted[keep]


def carve_d4(spec: LatticeCarveSpec) -> np.ndarray:
    """The ``target_count`` shifted-D4 nodes of smallest norm, in lattice units.

    Nodes on the outermost used shell are taken in lexicographic coordinate
    order. With ``partial_shell="reject"`` a cut through a shell raises
    :class:`CountUnreachable` carrying the shell populations instead.
    """
    m = spec.target_count
    off = np.asarray(spec.offset, dtype=float)
    # D4 has covolume 2, so a ball of radius r holds about pi^2 r^4 / 4 nodes
    radius = spec.search_radius_hint or (8.0 * m / math.pi**2) ** 0.25 + 1.0
    while True:
        nodes = d4_nodes_in_ball(off, radius)
        norms = np.round(np.einsum("ij,ij->i", nodes, nodes), 9)
        # the boundary shell must lie wholly inside the ball
        if len(nodes) > m and np.sort(norms)[m - 1] < radius**2 - 1e-6:
            break
        radius *= 1.5
    order = np.lexsort(tuple(nodes[:, k] for k in range(3, -1, -1)) + (norms,))
    nodes, norms = nodes[order], norms[order]
    cut = norms[m - 1]
    if spec.partial_shell == "reject" and norms[m] == cut:
        vals, pops = np.unique(norms[norms <= cut + 4], return_counts=True)
        shells = [(float(v), int(p)) for v, p in zip(vals, pops)]
        raise CountUnreachable(f"{m} points cut the shell |v|^2={cut:g} partially", shells=shells)
    return nodes[:m]


def generate_d4_lam(spec: LatticeCarveSpec | int, name: Optional[str] = None) -> Constellation:
    """Lattice amplitude modulation: spherical carve of the shifted D4 lattice."""
    if isinstance(spec, int):
        spec = LatticeCarveSpec(spec)
    nodes = carve_d4(spec)
    return Constellation(nodes, name or f"{spec.target_count}-LAM").normalize()


def shell_populations(offset: Sequence[float] = DEEP_HOLE, max_norm: float = 16.0):
    """``[(squared_norm, count, cumulative), ...]`` for the shifted lattice."""
    nodes = d4_nodes_in_ball(offset, math.sqrt(max_norm))
    vals, pops = np.unique(np.round(np.einsum("ij,ij->i", nodes, nodes), 9), return_counts=True)
    return [(float(v), int(p), int(c)) for v, p, c in zip(vals, pops, np.cumsum(pops))]


# ---------------------------------------------------------------------------
# Sphere packing on S^3
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PackingParams:
    """Settings for the inverse-power repulsion optimizer."""

    seed: int = 1
    exponents: tuple[int, ...] = (32, 128, 512)
    max_iter: int = 5000
    step: float = 0.05
    min_step: float = 1e-12
    # a stage ends once one accepted step lowers the energy by less than this
    rtol: float = 1e-8


@dataclass(frozen=True, eq=False)
class PackingResult:
    constellation: Constellation
    converged: bool
    min_distance_history: np.ndarray


def _repulsion(x: np.ndarray, s: int, scale: float):
    diff = x[:, None, :] - x[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    np.fill_diagonal(d2, np.inf)
    w = (scale * scale / d2) ** (s / 2)
    energy = w.sum() / 2
    # dE/dx_i = -s * sum_j w_ij (x_i - x_j) / d2_ij
    grad = -s * np.einsum("ij,ijk->ik", w / d2, diff)
    return energy, grad, math.sqrt(d2.min())


def optimize_sphere_packing(count: int, params: PackingParams = PackingParams()) -> PackingResult:
    if count < 2:
        raise ValueError("count must be >= 2")
    rng = np.random.default_rng(params.seed)
    x = rng.standard_normal((count, 4))
    x /= np.linalg.norm(x, axis=1, keepdims=True)
    best_x, best_d = x.copy(), float(pdist(x).min())
    history = [best_d]
    converged = True
    for s in params.exponents:
        scale = float(pdist(x).min())
        energy, grad, _ = _repulsion(x, s, scale)
        step = params.step
        for _ in range(params.max_iter):
            # tangent component only
            g = grad - np.einsum("ij,ij->i", grad, x)[:, None] * x
            gnorm = np.abs(g).max()
            if gnorm == 0:
                break
            while step > params.min_step:
                trial = x - (step / gnorm) * g
                trial /= np.linalg.norm(trial, axis=1, keepdims=True)
                e_new, g_new, d_new = _repulsion(trial, s, scale)
                if e_new < energy:
                    break
                step *= 0.5
            else:
                break
            gain = (energy - e_new) / energy
            x, energy, grad = trial, e_new, g_new
            step *= 1.5
            if d_new > best_d:
                best_x, best_d = x.copy(), d_new
            history.append(best_d)
            if gain < params.rtol:
                break
        else:
            converged = False
    if not converged:
        warnings.warn(
            f"sphere packing of {count} points hit max_iter before converging",
            NonConvergence,
            stacklevel=2,
        )
    c = Constellation(best_x, f"{count}-4D-PSK").normalize()
    return PackingResult(c, converged, np.asarray(history))


def generate_sphere_4dpsk(count: int, optimizer: PackingParams = PackingParams()) -> Constellation:
    """Equal-energy 4-D constellation from the repulsion optimizer."""
    return optimize_sphere_packing(count, optimizer).constellation


# ---------------------------------------------------------------------------
# Constant-amplitude designs
# ---------------------------------------------------------------------------


def _grid_shape(count: int, columns: Optional[int]) -> tuple[int, int]:
    if columns is not None:
        if columns < 2 or count % columns or count // columns < 2:
            raise InvalidCount(f"{count} points cannot form rows of {columns} columns")
        return columns, count // columns
    for q in range(math.isqrt(count), 1, -1):
        if count % q == 0 and count // q >= 2:
            return count // q, q
    raise InvalidCount(f"{count} is not a product p*q with p, q >= 2")


def generate_hex_cylinder_psk(
    count: int = 64,
    amp_x: float = 1 / math.sqrt(2),
    amp_y: float = 1 / math.sqrt(2),
    columns: Optional[int] = None,
) -> Constellation:
    """Hexagonally arranged phases on the torus, fixed amplitude per polarization.

    Rows sit at ``phi_y = 2 pi r / q``; each row has ``p`` phases
    ``phi_x = 2 pi k / p`` shifted by half a column step on odd rows.
    """
    p, q = _grid_shape(count, columns)
    pts = []
    for r in range(q):
        phi_y = 2 * math.pi * r / q
        for k in range(p):
            phi_x = 2 * math.pi * k / p + (math.pi / p if r % 2 else 0.0)
            pts.append(
                (amp_x * math.cos(phi_x), amp_x * math.sin(phi_x),
                 amp_y * math.cos(phi_y), amp_y * math.sin(phi_y))
            )
    return Constellation(np.array(pts), f"hex-cyl-{count}-PSK")


def _qpsk_phase_pairs():
    return [(i, j) for i in range(4) for j in range(4)]


def biorthogonal_subsets() -> tuple[np.ndarray, np.ndarray]:
    """Indices into dual QPSK of the kept (even) and complementary (odd) halves."""
    pairs = _qpsk_phase_pairs()
    even = np.array([n for n, (i, j) in enumerate(pairs) if (i + j) % 2 == 0])
    odd = np.array([n for n, (i, j) in enumerate(pairs) if (i + j) % 2 == 1])
    return even, odd


def generate_biorthogonal(rotated: bool = False) -> Constellation:
    """Bi-orthogonal 8-point set: +-1 on each axis, or its constant-amplitude rotation."""
    if not rotated:
        pts = np.vstack([np.eye(4), -np.eye(4)])
        return Constellation(pts, "bi-orthogonal").normalize()
    qpsk = generate_classic_dual("QPSK")
    even, _ = biorthogonal_subsets()
    return Constellation(qpsk.points[even], "bi-orthogonal").normalize()


# ---------------------------------------------------------------------------
# Classic 2-D sets in dual operation
# ---------------------------------------------------------------------------

APSK_RING_RATIO = 2.5
SQRT3 = math.sqrt(3.0)

# unit d: nearest-neighbour spacing d = 2 * (d/2)
HEX8_COORDS = [-1, 1, -1j * SQRT3, 1j * SQRT3, -2 - 1j * SQRT3, -2 + 1j * SQRT3, 2 - 1j * SQRT3, 2 + 1j * SQRT3]


def classic_2d(kind: str, d: float = 2.0) -> np.ndarray:
    """The complex 2-D constellation behind :func:`generate_classic_dual`."""
    kind = kind.upper()
    if kind == "QPSK":
        return np.exp(1j * (np.pi / 4 + np.pi / 2 * np.arange(4)))
    if kind == "PSK8":
        return np.exp(1j * np.pi / 4 * np.arange(8))
    if kind == "PSK3":
        return np.exp(2j * np.pi / 3 * np.arange(3))
    if kind == "QAM16":
        levels = np.array([-3, -1, 1, 3])
        return np.array([a + 1j * b for a, b in itertools.product(levels, levels)], dtype=complex)
    if kind == "APSK16":
        inner = np.exp(1j * (np.pi / 4 + np.pi / 2 * np.arange(4)))
        outer = APSK_RING_RATIO * np.exp(1j * (np.pi / 12 + np.pi / 6 * np.arange(12)))
        return np.concatenate([inner, outer])
    if kind == "HEXQAM8":
        return np.array(HEX8_COORDS, dtype=complex) * (d / 2)
    raise ValueError(f"unknown classic constellation {kind!r}")


_DUAL_NAMES = {
    "QPSK": "dual QPSK",
    "PSK8": "dual 8-PSK",
    "PSK3": "dual 3-PSK",
    "QAM16": "dual 16-QAM",
    "APSK16": "dual 16-APSK",
    "HEXQAM8": "dual 8-hex QAM",
}


def dual_from_2d(s: np.ndarray, name: str) -> Constellation:
    s = np.asarray(s, dtype=complex)
    cx, cy = np.repeat(s, len(s)), np.tile(s, len(s))
    pts = np.column_stack([cx.real, cx.imag, cy.real, cy.imag])
    return Constellation(pts, name, DetectionMode.PER_POL).normalize()


def generate_classic_dual(kind: str) -> Constellation:
    return dual_from_2d(classic_2d(kind), _DUAL_NAMES[kind.upper()])


def project_constituents(c: Constellation, rotation: Optional[np.ndarray] = None):
    """Distinct symbol-elements per polarization with their frequencies.

    Returns ``(x_elements, x_counts), (y_elements, y_counts)``; each element
    array is complex and sorted by energy, then phase.
    """
    pts = c.points if rotation is None else c.points @ np.asarray(rotation).T
    out = []
    for cols in (slice(0, 2), slice(2, 4)):
        elems, inv = _unique_in_order(pts[:, cols])
        counts = np.bincount(inv, minlength=len(elems))
        z = elems[:, 0] + 1j * elems[:, 1]
        order = np.lexsort((np.round(np.angle(z), 9), np.round(np.abs(z), 9)))
        out.append((z[order], counts[order]))
    return tuple(out)


# ---------------------------------------------------------------------------
# Interchange file
# ---------------------------------------------------------------------------


def write_constellation(c: Constellation, path) -> None:
    """Write the plain-text interchange format (17 significant digits)."""
    name = c.name.replace(" ", "_")
    lines = [f"# {name} {len(c)} {c.bits_per_symbol:.17g} {c.detection_mode.value}"]
    lines += [" ".join(f"{v:.17g}" for v in row) for row in c.points]
    Path(path).write_text("\n".join(lines) + "\n")


def read_constellation(path) -> Constellation:
    text = Path(path).read_text().splitlines()
    if not text or not text[0].startswith("#"):
        raise ValueError(f"{path}: missing '# name M bits detection_mode' header")
    fields = text[0][1:].split()
    if len(fields) != 4:
        raise ValueError(f"{path}:1: header needs 4 fields, got {len(fields)}")
    name, m, _bits, mode = fields
    rows = []
    for lineno, line in enumerate(text[1:], start=2):
        if not line.strip():
            continue
        vals = line.split()
        if len(vals) != 4:
            raise ValueError(f"{path}:{lineno}: expected 4 floats, got {len(vals)}")
        rows.append([float(v) for v in vals])
    if len(rows) != int(m):
        raise ValueError(f"{path}: header announces {m} points, found {len(rows)}")
    return Constellation(np.array(rows), name.replace("_", " "), DetectionMode(mode))
