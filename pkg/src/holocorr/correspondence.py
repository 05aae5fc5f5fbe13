"""Polynomial correspondences on the Riemann sphere.

A correspondence is a multiplicity-weighted sum of plane curves
``P_j(z, w) = sum c[i, k] z**i w**k = 0``. The backward image of ``w`` is
the multiset of ``z`` solving some ``P_j(z, w) = 0``, counted projectively,
so it always has exactly ``d`` points.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from itertools import product as _cartesian
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ConditioningError,
    DegreeCapError,
    ReducibilityWarning,
    RootFindingError,
    TreeTooLargeError,
    ValidationError,
)
from .numerics import (
    DEFAULT_CLUSTER_RADIUS,
    DEFAULT_ZERO_TOL,
    INF,
    SpherePoint,
    _roots_array,
    batch_roots,
    chordal_distance_array,
    from_array,
    is_infinite,
    seeded_stream,
    to_array,
)

DEFAULT_TREE_CAP = 10**6
DEFAULT_COMPOSE_MAX_DEGREE = 64
PROPORTIONAL_RTOL = 1e-8


def _trim(grid: np.ndarray) -> np.ndarray:
    mags = np.abs(grid)
    if not mags.any():
        raise ValidationError("component polynomial is identically zero")
    rows = np.nonzero(mags.any(axis=1))[0]
    cols = np.nonzero(mags.any(axis=0))[0]
    return grid[: rows[-1] + 1, : cols[-1] + 1]


def _normalized(grid: np.ndarray) -> np.ndarray:
    flat = grid.ravel()
    pivot = flat[np.argmax(np.abs(flat))]
    return grid / pivot


def _proportional(a: np.ndarray, b: np.ndarray, rtol: float = PROPORTIONAL_RTOL) -> bool:
    if a.shape != b.shape:
        return False
    na, nb = _normalized(a), _normalized(b)
    return bool(np.max(np.abs(na - nb)) <= rtol)


@dataclass(frozen=True)
class Component:
    grid: np.ndarray  # grid[i, k] multiplies z**i w**k
    multiplicity: int = 1

    @property
    def deg_z(self) -> int:
        return self.grid.shape[0] - 1

    @property
    def deg_w(self) -> int:
        return self.grid.shape[1] - 1

    def evaluate(self, z, w):
        z = np.asarray(z, dtype=complex)
        w = np.asarray(w, dtype=complex)
        out = np.zeros(np.broadcast(z, w).shape, dtype=complex)
        for i in range(self.deg_z, -1, -1):
            row = np.zeros_like(out)
            for k in range(self.deg_w, -1, -1):
                row = row * w + self.grid[i, k]
            out = out * z + row
        return out


class PolyCorrespondence:
    """Immutable formal sum of multiplicity-weighted polynomial curves."""

    def __init__(self, components: Iterable, label: str = "", check_reduced: bool = True):
        comps = []
        for item in components:
            if isinstance(item, Component):
                grid, mult = item.grid, item.multiplicity
            else:
                grid, mult = item
            grid = _trim(np.array(grid, dtype=complex, ndmin=2))
            mult = int(mult)
            if mult < 1:
                raise ValidationError("multiplicity must be a positive integer")
            if grid.shape[0] < 2 or grid.shape[1] < 2:
                raise ValidationError(
                    f"component {len(comps)} must have degree >= 1 in both z and w, got grid shape {grid.shape}"
                )
            grid.setflags(write=False)
            comps.append(Component(grid, mult))
        if not comps:
            raise ValidationError("a correspondence needs at least one component")
        for i in range(len(comps)):
            for j in range(i + 1, len(comps)):
                if _proportional(comps[i].grid, comps[j].grid):
                    raise ValidationError(f"components {i} and {j} are proportional")
        self.components: tuple[Component, ...] = tuple(comps)
        self.label = label
        if check_reduced:
            self._check_reduced()

    # construction helpers

    @classmethod
    def from_maps(cls, maps: Sequence[Sequence[complex]], multiplicities=None, label: str = ""):
        """Graphs ``w = p(z)`` of polynomial maps, each given by ascending coefficients."""
        comps = []
        mults = multiplicities or [1] * len(maps)
        for coeffs, m in zip(maps, mults):
            coeffs = np.asarray(coeffs, dtype=complex)
            grid = np.zeros((len(coeffs), 2), dtype=complex)
            grid[:, 0] = -coeffs
            grid[0, 1] = 1.0
            comps.append((grid, m))
        return cls(comps, label=label)

    @classmethod
    def identity(cls):
        return cls.from_maps([[0, 1]], label="identity")

    def _check_reduced(self, trials: int = 3):
        rng = seeded_stream(0x5EED, 7)
        for idx, comp in enumerate(self.components):
            if comp.deg_z < 2:
                continue
            repeated = 0
            for _ in range(trials):
                w = complex(rng.normal(), rng.normal())
                try:
                    roots = _component_roots_z(comp, w, cluster_radius=0.0)
                except RootFindingError:
                    continue
                roots = roots[~is_infinite(roots)]
                if roots.size < 2:
                    continue
                dist = chordal_distance_array(roots[:, None], roots[None, :])
                np.fill_diagonal(dist, np.inf)
                if dist.min() < 1e-5:
                    repeated += 1
            if repeated == trials:
                warnings.warn(
                    f"component {idx} has repeated z-roots along a random line; it may be non-reduced",
                    ReducibilityWarning,
                    stacklevel=3,
                )

    # degrees

    @property
    def topological_degree(self) -> int:
        return sum(c.multiplicity * c.deg_z for c in self.components)

    @property
    def forward_degree(self) -> int:
        return sum(c.multiplicity * c.deg_w for c in self.components)

    def transpose(self) -> "PolyCorrespondence":
        """Swap the roles of z and w."""
        return PolyCorrespondence(
            [(c.grid.T.copy(), c.multiplicity) for c in self.components],
            label=f"{self.label}^T" if self.label else "",
            check_reduced=False,
        )

    def __eq__(self, other):
        if not isinstance(other, PolyCorrespondence):
            return NotImplemented
        if len(self.components) != len(other.components):
            return False
        return all(
            a.multiplicity == b.multiplicity and a.grid.shape == b.grid.shape and np.array_equal(a.grid, b.grid)
            for a, b in zip(self.components, other.components)
        )

    def __repr__(self):
        return (
            f"PolyCorrespondence(label={self.label!r}, components={len(self.components)}, "
            f"d={self.topological_degree}, d_f={self.forward_degree})"
        )

    # images

    def backward_all(self, w: np.ndarray) -> np.ndarray:
        """Full backward images for an array of points: shape (N, d)."""
        return _backward_all(self.components, np.asarray(w, dtype=complex))

    def forward_all(self, z: np.ndarray) -> np.ndarray:
        return _backward_all(_transposed(self), np.asarray(z, dtype=complex))

    def fixed_points(self) -> np.ndarray:
        """Finite solutions of P_j(z, z) = 0 across components."""
        pts = []
        for comp in self.components:
            g = comp.grid
            deg = g.shape[0] + g.shape[1] - 2
            diag = np.zeros(deg + 1, dtype=complex)
            for i in range(g.shape[0]):
                for k in range(g.shape[1]):
                    diag[i + k] += g[i, k]
            if np.abs(diag).max() == 0:
                continue
            r = _roots_array(diag)
            pts.extend(r[~is_infinite(r)])
        return np.asarray(pts, dtype=complex)


def _transposed(corr: PolyCorrespondence) -> tuple[Component, ...]:
    return tuple(Component(c.grid.T, c.multiplicity) for c in corr.components)


def _z_coefficients(comp: Component, w: np.ndarray) -> np.ndarray:
    """Coefficients in z (ascending) of P(z, w), rescaled projectively in w.

    For |w| > 1 the chart zeta = 1/w is used so that infinity is handled
    and the coefficients stay bounded. Shape (N, deg_z+1).
    """
    w = np.asarray(w, dtype=complex)
    inf = is_infinite(w)
    big = inf | (np.abs(np.where(inf, 0, w)) > 1.0)
    g = comp.grid
    n_w = g.shape[1]
    with np.errstate(divide="ignore", invalid="ignore"):
        zeta = np.where(inf, 0.0, np.where(big, 1.0 / np.where(big & ~inf, w, 1.0), 0.0))
    # powers: small chart uses w**k, big chart uses zeta**(deg_w - k)
    ww = np.where(big, 0.0, np.where(inf, 0.0, w))
    pw_small = np.stack([ww**k for k in range(n_w)], axis=-1)
    pw_big = np.stack([zeta ** (n_w - 1 - k) for k in range(n_w)], axis=-1)
    pw = np.where(big[..., None], pw_big, pw_small)
    return pw @ g.T


def _component_roots_z(comp: Component, w: complex, cluster_radius=DEFAULT_CLUSTER_RADIUS) -> np.ndarray:
    coeffs = _z_coefficients(comp, np.array([w]))[0]
    if np.abs(coeffs).max() == 0:
        raise RootFindingError("fibre is not finite: P(z, w) vanishes identically in z")
    return _roots_array(coeffs, cluster_radius=cluster_radius)


def _backward_all(components: Sequence[Component], w: np.ndarray) -> np.ndarray:
    shape = w.shape
    w = w.ravel()
    n = w.size
    blocks = []
    for idx, comp in enumerate(components):
        coeffs = _z_coefficients(comp, w)
        mags = np.abs(coeffs)
        scale = mags.max(axis=1)
        lead_ok = mags[:, -1] > DEFAULT_ZERO_TOL * np.where(scale > 0, scale, 1.0)
        # generic rows: leading coefficient present and constant term not tiny-but-nonzero
        roots = np.empty((n, comp.deg_z), dtype=complex)
        good = lead_ok & (scale > 0)
        if good.any():
            roots[good] = batch_roots(coeffs[good])
        bad = np.nonzero(~good)[0]
        for r in bad:
            if scale[r] == 0:
                raise RootFindingError(
                    f"component {idx}: fibre over w={w[r]} is not finite", component=idx
                )
            try:
                roots[r] = _roots_array(coeffs[r])
            except RootFindingError as exc:
                raise RootFindingError(f"component {idx}: {exc}", exc.best_residual, idx) from exc
        bad_vals = ~np.isfinite(roots)
        if bad_vals.any():
            # overflow in the closed forms: redo those rows with the robust path
            for r in np.nonzero(bad_vals.any(axis=1) & good)[0]:
                roots[r] = _roots_array(coeffs[r])
        if comp.multiplicity > 1:
            roots = np.repeat(roots, comp.multiplicity, axis=1)
        blocks.append(roots)
    out = np.concatenate(blocks, axis=1)
    return out.reshape(shape + (out.shape[-1],))


# ---------------------------------------------------------------------------
# public operations


def topological_degree(corr: PolyCorrespondence) -> int:
    return corr.topological_degree


def forward_degree(corr: PolyCorrespondence) -> int:
    return corr.forward_degree


def backward_image(corr: PolyCorrespondence, w) -> list[SpherePoint]:
    """F-dagger(w): the d preimages of w, repeated by multiplicity."""
    w = SpherePoint.from_complex(w).to_complex()
    out = []
    for idx, comp in enumerate(corr.components):
        try:
            roots = _component_roots_z(comp, w)
        except RootFindingError as exc:
            raise RootFindingError(f"component {idx}: {exc}", exc.best_residual, idx) from exc
        out.extend(np.repeat(roots, comp.multiplicity))
    return from_array(out)


def forward_image(corr: PolyCorrespondence, z) -> list[SpherePoint]:
    """F(z): the d_f images of z, repeated by multiplicity."""
    z = SpherePoint.from_complex(z).to_complex()
    out = []
    for idx, comp in enumerate(_transposed(corr)):
        try:
            roots = _component_roots_z(comp, z)
        except RootFindingError as exc:
            raise RootFindingError(f"component {idx}: {exc}", exc.best_residual, idx) from exc
        out.extend(np.repeat(roots, comp.multiplicity))
    return from_array(out)


def check_tree(d: int, n: int, cap: int) -> int:
    size = d**n
    if size > cap:
        raise TreeTooLargeError(f"tree too large: {d}^{n} = {size} leaves exceeds cap {cap}")
    return size


def backward_tree_levels(corr: PolyCorrespondence, w: np.ndarray, n: int):
    """Yield the arrays of depth-0..n backward leaves; level j has shape (N, d**j)."""
    level = np.asarray(w, dtype=complex).reshape(-1, 1)
    yield level
    for _ in range(n):
        nxt = corr.backward_all(level.ravel())
        level = nxt.reshape(level.shape[0], -1)
        yield level


def iterate_backward_array(corr: PolyCorrespondence, w: np.ndarray, n: int, cap: int = DEFAULT_TREE_CAP):
    """Exact depth-n leaves for every point in ``w``: shape (N, d**n)."""
    check_tree(corr.topological_degree, n, cap)
    level = None
    for level in backward_tree_levels(corr, w, n):
        pass
    return level


def iterate_backward(corr: PolyCorrespondence, w, n: int, cap: int = DEFAULT_TREE_CAP) -> list[SpherePoint]:
    """(F^n)-dagger(w) as a multiset of d**n points."""
    if n < 0:
        raise ValidationError("n must be nonnegative")
    w = SpherePoint.from_complex(w).to_complex()
    leaves = iterate_backward_array(corr, np.array([w]), n, cap)
    return from_array(leaves[0])


# ---------------------------------------------------------------------------
# composition


def _sylvester_det(a_desc: np.ndarray, b_desc: np.ndarray) -> complex:
    """Determinant of the Sylvester matrix of two polynomials (descending coefficients)."""
    m = len(a_desc) - 1
    n = len(b_desc) - 1
    size = m + n
    s = np.zeros((size, size), dtype=complex)
    for i in range(n):
        s[i, i:i + m + 1] = a_desc
    for i in range(m):
        s[n + i, i:i + n + 1] = b_desc
    return np.linalg.det(s)


def _pair_resultant(outer: Component, inner: Component) -> np.ndarray:
    """Coefficient grid of Res_y(P_inner(z, y), P_outer(y, w)) via sample-and-interpolate."""
    a = inner.deg_w  # degree in y of P_inner(z, y)
    b = outer.deg_z  # degree in y of P_outer(y, w)
    dz = b * inner.deg_z
    dw = a * outer.deg_w
    nz, nw = dz + 1, dw + 1
    zs = np.exp(2j * np.pi * np.arange(nz) / nz)
    ws = np.exp(2j * np.pi * np.arange(nw) / nw)
    gi = inner.grid  # gi[i, k]: z**i y**k
    go = outer.grid  # go[k, l]: y**k w**l
    zpow = zs[:, None] ** np.arange(gi.shape[0])[None, :]
    wpow = ws[:, None] ** np.arange(go.shape[1])[None, :]
    a_coeffs = zpow @ gi  # (nz, a+1) ascending in y
    b_coeffs = wpow @ go.T  # (nw, b+1) ascending in y
    vals = np.empty((nz, nw), dtype=complex)
    for p in range(nz):
        for q in range(nw):
            vals[p, q] = _sylvester_det(a_coeffs[p, ::-1], b_coeffs[q, ::-1])
    # samples at exp(+2 pi i p/n): the forward DFT returns n * coefficient
    grid = np.fft.fft2(vals) / (nz * nw)
    scale = np.abs(grid).max()
    if scale == 0:
        raise ConditioningError("resultant vanishes identically: components share a factor")
    # verify interpolation off the sampling grid
    rng = seeded_stream(0xC0FFEE, nz * 1000 + nw)
    worst = 0.0
    for _ in range(3):
        z0 = complex(*rng.normal(size=2)) * 0.7
        w0 = complex(*rng.normal(size=2)) * 0.7
        direct = _sylvester_det(
            (np.power(z0, np.arange(gi.shape[0])) @ gi)[::-1],
            (np.power(w0, np.arange(go.shape[1])) @ go.T)[::-1],
        )
        interp = Component(grid, 1).evaluate(z0, w0)
        ref = scale * max(1.0, abs(z0)) ** dz * max(1.0, abs(w0)) ** dw
        worst = max(worst, abs(direct - interp) / ref)
    if worst > 1e-8:
        raise ConditioningError(
            f"resultant interpolation is ill-conditioned (relative mismatch {worst:.2e})",
            condition_estimate=worst / np.finfo(float).eps,
        )
    grid = np.where(np.abs(grid) <= 1e-12 * scale, 0.0, grid)
    return _normalized(_trim(grid))


def compose(outer: PolyCorrespondence, inner: PolyCorrespondence,
            max_degree: int = DEFAULT_COMPOSE_MAX_DEGREE) -> PolyCorrespondence:
    """The correspondence z -> outer(inner(z)).

    Its backward image is inner-dagger applied to outer-dagger(w). Each
    component pair contributes the resultant curve with multiplicity equal to
    the product of multiplicities; proportional curves are merged.
    """
    merged: list[list] = []
    for co in outer.components:
        for ci in inner.components:
            total = co.deg_z * ci.deg_z + ci.deg_w * co.deg_w
            if total > max_degree:
                raise DegreeCapError(f"composed total degree {total} exceeds cap {max_degree}")
            grid = _pair_resultant(co, ci)
            mult = co.multiplicity * ci.multiplicity
            for entry in merged:
                if _proportional(entry[0], grid):
                    entry[1] += mult
                    break
            else:
                merged.append([grid, mult])
    label = f"({outer.label})o({inner.label})" if outer.label or inner.label else ""
    return PolyCorrespondence([(g, m) for g, m in merged], label=label, check_reduced=False)


def compose_power(corr: PolyCorrespondence, n: int, max_degree: int = DEFAULT_COMPOSE_MAX_DEGREE):
    if n < 1:
        raise ValidationError("compose_power needs n >= 1")
    out = corr
    for _ in range(n - 1):
        out = compose(corr, out, max_degree=max_degree)
    return out


# ---------------------------------------------------------------------------
# products


@dataclass(frozen=True)
class ProductCorrespondence:
    left: PolyCorrespondence
    right: PolyCorrespondence

    @property
    def topological_degree(self) -> int:
        return self.left.topological_degree * self.right.topological_degree

    @property
    def forward_degree(self) -> int:
        return self.left.forward_degree * self.right.forward_degree

    def backward_all(self, w1: np.ndarray, w2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Cartesian backward images for paired arrays: two (N, d1*d2) arrays."""
        a = self.left.backward_all(np.asarray(w1, dtype=complex).ravel())
        b = self.right.backward_all(np.asarray(w2, dtype=complex).ravel())
        d1, d2 = a.shape[1], b.shape[1]
        return np.repeat(a, d2, axis=1), np.tile(b, (1, d1))


def product(left: PolyCorrespondence, right: PolyCorrespondence) -> ProductCorrespondence:
    return ProductCorrespondence(left, right)


def product_backward_image(pc: ProductCorrespondence, w1, w2) -> list[tuple[SpherePoint, SpherePoint]]:
    """(F1 x F2)-dagger(w1, w2) as a list of point pairs with multiplicity."""
    a = backward_image(pc.left, w1)
    b = backward_image(pc.right, w2)
    return [(p, q) for p, q in _cartesian(a, b)]


# ---------------------------------------------------------------------------
# persistence


def save_correspondence(corr: PolyCorrespondence, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_correspondence(corr))


def dumps_correspondence(corr: PolyCorrespondence) -> str:
    lines = ["# holomorphic correspondence; rows are 'i j re im' for c[i][j] z^i w^j", f"label = {corr.label}"]
    for comp in corr.components:
        lines.append("")
        lines.append("[component]")
        lines.append(f"multiplicity = {comp.multiplicity}")
        for i in range(comp.grid.shape[0]):
            for k in range(comp.grid.shape[1]):
                c = comp.grid[i, k]
                if c != 0:
                    lines.append(f"{i} {k} {float(c.real)!r} {float(c.imag)!r}")
    return "\n".join(lines) + "\n"


def load_correspondence(path) -> PolyCorrespondence:
    with open(path, encoding="utf-8") as fh:
        return loads_correspondence(fh.read())


def loads_correspondence(text: str) -> PolyCorrespondence:
    label = ""
    comps: list[dict] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line == "[component]":
            comps.append({"multiplicity": 1, "entries": []})
            continue
        if "=" in line:
            key, _, value = (s.strip() for s in line.partition("="))
            if key == "label" and not comps:
                label = value
            elif key == "multiplicity" and comps:
                try:
                    comps[-1]["multiplicity"] = int(value)
                except ValueError as exc:
                    raise ValidationError(f"line {lineno}: bad multiplicity {value!r}") from exc
            else:
                raise ValidationError(f"line {lineno}: unexpected key {key!r}")
            continue
        if not comps:
            raise ValidationError(f"line {lineno}: coefficient row outside a [component] section")
        parts = line.split()
        if len(parts) != 4:
            raise ValidationError(f"line {lineno}: expected 'i j re im', got {raw!r}")
        try:
            i, k = int(parts[0]), int(parts[1])
            c = complex(float(parts[2]), float(parts[3]))
        except ValueError as exc:
            raise ValidationError(f"line {lineno}: cannot parse {raw!r}") from exc
        if i < 0 or k < 0:
            raise ValidationError(f"line {lineno}: negative exponent")
        comps[-1]["entries"].append((i, k, c))
    built = []
    for comp in comps:
        if not comp["entries"]:
            raise ValidationError("component without coefficients")
        deg_i = max(e[0] for e in comp["entries"])
        deg_k = max(e[1] for e in comp["entries"])
        grid = np.zeros((deg_i + 1, deg_k + 1), dtype=complex)
        for i, k, c in comp["entries"]:
            grid[i, k] += c
        built.append((grid, comp["multiplicity"]))
    return PolyCorrespondence(built, label=label)


# the two worked examples


def squaring() -> PolyCorrespondence:
    """w = z**2."""
    return PolyCorrespondence.from_maps([[0, 0, 1]], label="z^2")


def semigroup_z2_half_z2() -> PolyCorrespondence:
    """The correspondence of the rational semigroup generated by z**2 and z**2/2."""
    return PolyCorrespondence.from_maps([[0, 0, 1], [0, 0, 0.5]], label="<z^2, z^2/2>")
