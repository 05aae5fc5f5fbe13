"""Complex-analytic utilities: sphere points, chordal metric, root finding, RNG streams.

Arrays of sphere points are plain complex ndarrays in which the point at
infinity is stored as ``complex(inf, 0)``; :class:`SpherePoint` is the scalar
form used at API boundaries.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import RootFindingError, ValidationError

INF = complex(np.inf, 0.0)

DEFAULT_ROOT_TOL = 1e-8
DEFAULT_CLUSTER_RADIUS = 1e-7
DEFAULT_ZERO_TOL = 1e-14


@dataclass(frozen=True, eq=False)
class SpherePoint:
    """A point of the Riemann sphere."""

    value: complex = 0j
    at_infinity: bool = False

    @classmethod
    def infinity(cls) -> "SpherePoint":
        return cls(0j, True)

    @classmethod
    def from_complex(cls, z) -> "SpherePoint":
        if isinstance(z, SpherePoint):
            return z
        z = complex(z)
        if not (np.isfinite(z.real) and np.isfinite(z.imag)):
            return cls.infinity()
        return cls(z, False)

    def to_complex(self) -> complex:
        return INF if self.at_infinity else complex(self.value)

    def __eq__(self, other):
        if not isinstance(other, SpherePoint):
            try:
                other = SpherePoint.from_complex(other)
            except (TypeError, ValueError):
                return NotImplemented
        if self.at_infinity or other.at_infinity:
            return self.at_infinity and other.at_infinity
        return complex(self.value) == complex(other.value)

    def __hash__(self):
        return hash(("inf",)) if self.at_infinity else hash(complex(self.value))

    def __repr__(self):
        return "SpherePoint(inf)" if self.at_infinity else f"SpherePoint({complex(self.value)!r})"


def is_infinite(z) -> np.ndarray:
    z = np.asarray(z, dtype=complex)
    return ~(np.isfinite(z.real) & np.isfinite(z.imag))


def to_array(points: Iterable) -> np.ndarray:
    """Convert SpherePoints / complex numbers to the internal complex array form."""
    out = [SpherePoint.from_complex(p).to_complex() for p in points]
    return np.asarray(out, dtype=complex)


def from_array(values) -> list[SpherePoint]:
    return [SpherePoint.from_complex(v) for v in np.asarray(values, dtype=complex).ravel()]


def chordal_distance(p, q) -> float:
    """Chordal distance on the unit-diameter-2 sphere; accepts SpherePoints or complex."""
    a = SpherePoint.from_complex(p)
    b = SpherePoint.from_complex(q)
    if a.at_infinity and b.at_infinity:
        return 0.0
    if a.at_infinity or b.at_infinity:
        z = b.value if a.at_infinity else a.value
        return 2.0 / np.sqrt(1.0 + abs(z) ** 2)
    z, w = complex(a.value), complex(b.value)
    return float(2.0 * abs(z - w) / np.sqrt((1.0 + abs(z) ** 2) * (1.0 + abs(w) ** 2)))


def chordal_distance_array(a, b) -> np.ndarray:
    """Vectorized chordal distance with broadcasting; infinity encoded as complex inf."""
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    a, b = np.broadcast_arrays(a, b)
    ia, ib = is_infinite(a), is_infinite(b)
    az = np.where(ia, 0, a)
    bz = np.where(ib, 0, b)
    with np.errstate(invalid="ignore", over="ignore"):
        finite = 2.0 * np.abs(az - bz) / np.sqrt((1.0 + np.abs(az) ** 2) * (1.0 + np.abs(bz) ** 2))
        one_inf_a = 2.0 / np.sqrt(1.0 + np.abs(bz) ** 2)
        one_inf_b = 2.0 / np.sqrt(1.0 + np.abs(az) ** 2)
    out = np.where(ia & ib, 0.0, np.where(ia, one_inf_a, np.where(ib, one_inf_b, finite)))
    return out


def stereographic(z) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Coordinates (x1, x2, x3) of the unit-sphere embedding; infinity maps to (0, 0, 1)."""
    z = np.asarray(z, dtype=complex)
    inf = is_infinite(z)
    zz = np.where(inf, 0, z)
    r2 = np.abs(zz) ** 2
    # large |z|: 2z/(1+|z|^2) underflows gracefully, (r2-1)/(r2+1) -> 1
    denom = 1.0 + r2
    x1 = np.where(inf, 0.0, 2.0 * zz.real / denom)
    x2 = np.where(inf, 0.0, 2.0 * zz.imag / denom)
    x3 = np.where(inf, 1.0, (r2 - 1.0) / denom)
    return x1, x2, x3


@dataclass(frozen=True)
class ComplexPolynomial:
    """Univariate polynomial, coefficients in ascending degree order."""

    coefficients: tuple = field(default=())
    zero_tol: float = DEFAULT_ZERO_TOL

    def __post_init__(self):
        coeffs = tuple(complex(c) for c in np.atleast_1d(np.asarray(self.coefficients, dtype=complex)))
        if not coeffs:
            coeffs = (0j,)
        object.__setattr__(self, "coefficients", coeffs)

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.coefficients, dtype=complex)

    @property
    def nominal_degree(self) -> int:
        return len(self.coefficients) - 1

    @property
    def degree(self) -> int:
        """Index of the last coefficient above the relative zero tolerance (0 for the zero polynomial)."""
        c = np.abs(self.array)
        scale = c.max()
        if scale == 0:
            return 0
        nz = np.nonzero(c > self.zero_tol * scale)[0]
        return int(nz[-1])

    def is_zero(self) -> bool:
        return not np.any(self.array != 0)

    def __call__(self, z):
        return np.polyval(self.array[::-1], z)


def _residual_ok(c_asc: np.ndarray, roots: np.ndarray, tol: float) -> tuple[bool, float]:
    if roots.size == 0:
        return True, 0.0
    deg = len(c_asc) - 1
    scale = np.abs(c_asc).max() * np.maximum(1.0, np.abs(roots)) ** deg
    res = np.abs(np.polyval(c_asc[::-1], roots)) / scale
    worst = float(res.max())
    return worst <= tol, worst


def _aberth_refine(c_asc: np.ndarray, roots: np.ndarray, iters: int = 6) -> np.ndarray:
    """Simultaneous-root refinement; per-root updates are kept only when the residual drops."""
    if roots.size <= 1:
        if roots.size == 1 and len(c_asc) == 2:
            return np.array([-c_asc[0] / c_asc[1]])
        return roots
    desc = c_asc[::-1]
    ddesc = np.polyder(desc)
    z = roots.copy()
    for _ in range(iters):
        pz = np.polyval(desc, z)
        dz = np.polyval(ddesc, z)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = pz / dz
            diff = z[:, None] - z[None, :]
            np.fill_diagonal(diff, np.inf)
            s = np.sum(1.0 / diff, axis=1)
            step = ratio / (1.0 - ratio * s)
        cand = z - step
        ok = np.isfinite(cand) & (np.abs(np.polyval(desc, cand)) < np.abs(pz))
        if not np.any(ok):
            break
        z = np.where(ok, cand, z)
    return z


def cluster_roots(roots: np.ndarray, radius: float) -> np.ndarray:
    """Merge roots closer than ``radius`` (chordal, single linkage) into their cluster mean."""
    n = roots.size
    if n <= 1 or radius <= 0:
        return roots
    dist = chordal_distance_array(roots[:, None], roots[None, :])
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in zip(*np.nonzero(np.triu(dist < radius, 1))):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[rj] = ri
    labels = np.array([find(i) for i in range(n)])
    out = roots.copy()
    for lab in np.unique(labels):
        members = labels == lab
        if members.sum() > 1:
            vals = roots[members]
            if np.all(is_infinite(vals)):
                out[members] = INF
            else:
                out[members] = vals[~is_infinite(vals)].mean()
    return out


def poly_roots(
    p,
    tol: float = DEFAULT_ROOT_TOL,
    cluster_radius: float = DEFAULT_CLUSTER_RADIUS,
) -> list[SpherePoint]:
    """Projective roots of ``p``, repeated according to multiplicity.

    Exactly ``p.nominal_degree`` points are returned; vanishing top
    coefficients contribute roots at infinity.
    """
    if not isinstance(p, ComplexPolynomial):
        p = ComplexPolynomial(tuple(p))
    if p.is_zero():
        raise ValidationError("polynomial is identically zero")
    return from_array(_roots_array(p.array, tol, cluster_radius, p.zero_tol))


def _roots_array(c_asc: np.ndarray, tol=DEFAULT_ROOT_TOL, cluster_radius=DEFAULT_CLUSTER_RADIUS,
                 zero_tol=DEFAULT_ZERO_TOL) -> np.ndarray:
    c_asc = np.asarray(c_asc, dtype=complex)
    nominal = len(c_asc) - 1
    mags = np.abs(c_asc)
    scale = mags.max()
    if scale == 0:
        raise ValidationError("polynomial is identically zero")
    nz = np.nonzero(mags > zero_tol * scale)[0]
    eff = int(nz[-1])
    n_inf = nominal - eff
    # componentwise so that subnormal scales do not overflow complex division
    top = c_asc[: eff + 1]
    c = top.real / scale + 1j * (top.imag / scale)
    # zero roots split off exactly
    low = int(nz[0])
    finite = np.zeros(low, dtype=complex)
    core = c[low:]
    k = len(core) - 1
    if k >= 1:
        if k == 1:
            core_roots = np.array([-core[0] / core[1]])
        else:
            monic = core / core[-1]
            comp = np.zeros((k, k), dtype=complex)
            comp[1:, :-1] = np.eye(k - 1)
            comp[:, -1] = -monic[:-1]
            core_roots = np.linalg.eigvals(comp)
            core_roots = _aberth_refine(core, core_roots)
        finite = np.concatenate([finite, core_roots])
    ok, worst = _residual_ok(c, finite, tol)
    if not ok:
        refined = _aberth_refine(c, finite, iters=50)
        ok2, worst2 = _residual_ok(c, refined, tol)
        if not ok2:
            raise RootFindingError(
                f"root finder did not converge (best residual {min(worst, worst2):.3e})",
                best_residual=min(worst, worst2),
            )
        finite = refined
    roots = np.concatenate([finite, np.full(n_inf, INF)])
    return cluster_roots(roots, cluster_radius)


def batch_roots(coeffs: np.ndarray) -> np.ndarray:
    """Roots of many polynomials of the same nominal degree at once.

    ``coeffs`` has shape (N, k+1), ascending order. Rows are assumed to have a
    nonzero leading coefficient; callers route degenerate rows elsewhere.
    Returns an (N, k) complex array.
    """
    coeffs = np.asarray(coeffs, dtype=complex)
    n, k1 = coeffs.shape
    k = k1 - 1
    if k == 0:
        return np.zeros((n, 0), dtype=complex)
    lead = coeffs[:, -1]
    if k == 1:
        return (-coeffs[:, 0] / lead)[:, None]
    if k == 2:
        a, b, c = lead, coeffs[:, 1], coeffs[:, 0]
        disc = np.sqrt(b * b - 4.0 * a * c)
        sgn = np.where((b.real * disc.real + b.imag * disc.imag) >= 0, 1.0, -1.0)
        q = -0.5 * (b + sgn * disc)
        with np.errstate(divide="ignore", invalid="ignore"):
            r1 = q / a
            r2 = np.where(q == 0, 0.0, c / q)
        return np.stack([r1, r2], axis=1)
    monic = coeffs / lead[:, None]
    comp = np.zeros((n, k, k), dtype=complex)
    idx = np.arange(k - 1)
    comp[:, idx + 1, idx] = 1.0
    comp[:, :, -1] = -monic[:, :-1]
    roots = np.linalg.eigvals(comp)
    # one Newton polish; keep only improvements
    desc = coeffs[:, ::-1]
    pz = _batch_polyval(desc, roots)
    dz = _batch_polyval(desc[:, :-1] * np.arange(k, 0, -1)[None, :], roots)
    with np.errstate(divide="ignore", invalid="ignore"):
        cand = roots - pz / dz
    better = np.isfinite(cand) & (np.abs(_batch_polyval(desc, cand)) < np.abs(pz))
    return np.where(better, cand, roots)


def _batch_polyval(desc: np.ndarray, z: np.ndarray) -> np.ndarray:
    out = np.zeros_like(z)
    for j in range(desc.shape[1]):
        out = out * z + desc[:, j:j + 1]
    return out


def seeded_stream(seed: int, stream_id: int = 0) -> np.random.Generator:
    """Deterministic generator for (seed, stream_id); streams are statistically independent."""
    ss = np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1), spawn_key=(int(stream_id),))
    return np.random.Generator(np.random.PCG64(ss))


def match_multisets(a, b) -> float:
    """Max chordal error under the assignment minimizing total chordal error.

    Raises ValidationError when the multisets differ in size.
    """
    a = np.asarray(a if isinstance(a, np.ndarray) else to_array(a), dtype=complex)
    b = np.asarray(b if isinstance(b, np.ndarray) else to_array(b), dtype=complex)
    if a.size != b.size:
        raise ValidationError(f"multiset sizes differ: {a.size} vs {b.size}")
    if a.size == 0:
        return 0.0
    cost = chordal_distance_array(a[:, None], b[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].max())


def multiplicities(points: Sequence, radius: float = DEFAULT_CLUSTER_RADIUS) -> list[tuple[SpherePoint, int]]:
    """Group a multiset into (point, multiplicity) pairs."""
    out: list[tuple[SpherePoint, int]] = []
    for p in points:
        p = SpherePoint.from_complex(p)
        for i, (q, m) in enumerate(out):
            if chordal_distance(p, q) < radius:
                out[i] = (q, m + 1)
                break
        else:
            out.append((p, 1))
    return out
