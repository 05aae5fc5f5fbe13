"""Empirical measures on the sphere and backward-orbit estimators."""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .correspondence import (
    DEFAULT_TREE_CAP,
    PolyCorrespondence,
    check_tree,
    iterate_backward_array,
)
from .errors import (
    DegreeHypothesisWarning,
    ExceptionalPointWarning,
    NumericalError,
    RootFindingError,
    ValidationError,
)
from .numerics import (
    SpherePoint,
    chordal_distance_array,
    from_array,
    is_infinite,
    seeded_stream,
    stereographic,
)

WEIGHT_TOL = 1e-12
BLOCK_SIZE = 4096
RETRY_CAP = 8
DEFAULT_START = 3 + 0j


@dataclass(frozen=True, eq=False)
class WeightedPointCloud:
    """Finitely supported probability measure on the sphere.

    ``values`` uses complex inf for the point at infinity.
    """

    values: np.ndarray
    weights: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.array(self.values, dtype=complex).ravel()
        weights = np.array(self.weights, dtype=float).ravel()
        if values.shape != weights.shape:
            raise ValidationError(f"{values.size} points but {weights.size} weights")
        if values.size == 0:
            raise ValidationError("empty cloud")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValidationError("weights must be finite and nonnegative")
        if abs(weights.sum() - 1.0) > WEIGHT_TOL:
            raise ValidationError(f"weights sum to {weights.sum()!r}, not 1")
        values = np.where(is_infinite(values), complex(np.inf, 0), values)
        values.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, values, meta=None) -> "WeightedPointCloud":
        values = np.asarray(values, dtype=complex).ravel()
        return cls(values, np.full(values.size, 1.0 / values.size), dict(meta or {}))

    @classmethod
    def from_points(cls, points: Sequence, weights=None, meta=None) -> "WeightedPointCloud":
        vals = np.array([SpherePoint.from_complex(p).to_complex() for p in points], dtype=complex)
        if weights is None:
            return cls.uniform(vals, meta)
        return cls(vals, np.asarray(weights, dtype=float), dict(meta or {}))

    @property
    def points(self) -> list[SpherePoint]:
        return from_array(self.values)

    def __len__(self):
        return self.values.size

    def integrate(self, phi: Callable) -> float:
        return float(np.dot(self.weights, np.asarray(phi(self.values), dtype=float)))


def product_cloud(a: WeightedPointCloud, b: WeightedPointCloud) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full tensor product of two clouds as (values1, values2, weights) arrays."""
    v1 = np.repeat(a.values, b.values.size)
    v2 = np.tile(b.values, a.values.size)
    w = np.outer(a.weights, b.weights).ravel()
    return v1, v2, w


# ---------------------------------------------------------------------------
# test dictionary


@dataclass(frozen=True)
class TestDictionary:
    """Finite family of bounded test functions on the sphere."""

    __test__ = False  # keep pytest from collecting this class

    functions: tuple
    names: tuple

    def __len__(self):
        return len(self.functions)

    def moments(self, cloud: WeightedPointCloud) -> np.ndarray:
        return np.array([cloud.integrate(f) for f in self.functions])


def stereo_monomial(a: int, b: int, c: int) -> Callable:
    def phi(z):
        x1, x2, x3 = stereographic(z)
        return x1**a * x2**b * x3**c

    phi.__name__ = f"stereo_{a}{b}{c}"
    return phi


def default_dictionary(max_degree: int = 3) -> TestDictionary:
    """Monomials of total degree <= 3 in the embedding coordinates, constant included (20 functions)."""
    funcs, names = [], []
    for total in range(max_degree + 1):
        for a in range(total, -1, -1):
            for b in range(total - a, -1, -1):
                c = total - a - b
                funcs.append(stereo_monomial(a, b, c))
                names.append(f"x1^{a} x2^{b} x3^{c}")
    return TestDictionary(tuple(funcs), tuple(names))


# ---------------------------------------------------------------------------
# backward walks


def _walk_block(corr: PolyCorrespondence, start: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    cur = start.copy()
    d = corr.topological_degree
    rows = np.arange(cur.size)
    for _ in range(n):
        pre = corr.backward_all(cur)
        cur = pre[rows, rng.integers(0, d, size=cur.size)]
    return cur


def _walk_block_robust(corr, start, n, seed, stream_id) -> np.ndarray:
    try:
        return _walk_block(corr, start, n, seeded_stream(seed, stream_id))
    except RootFindingError:
        pass
    # redo walk by walk so one bad fibre does not poison the block
    out = np.empty_like(start)
    for i, z0 in enumerate(start):
        last = None
        for attempt in range(RETRY_CAP):
            rng = seeded_stream(seed, (stream_id << 20) + i * RETRY_CAP + attempt + 1)
            try:
                out[i] = _walk_block(corr, np.array([z0]), n, rng)[0]
                break
            except RootFindingError as exc:
                last = exc
        else:
            raise NumericalError(f"backward walk {i} in block {stream_id} failed {RETRY_CAP} times: {last}")
    return out


def backward_walks(
    corr: PolyCorrespondence,
    starts: np.ndarray,
    n: int,
    seed: int = 0,
    workers: int = 1,
    stream_offset: int = 0,
) -> np.ndarray:
    """Endpoints of independent length-n uniform backward walks, one per start.

    Walks are processed in fixed blocks, block b drawing from stream
    (seed, stream_offset + b), so results do not depend on ``workers``.
    """
    starts = np.asarray(starts, dtype=complex).ravel()
    blocks = [(b, starts[i:i + BLOCK_SIZE]) for b, i in enumerate(range(0, starts.size, BLOCK_SIZE))]

    def run(item):
        b, chunk = item
        return _walk_block_robust(corr, chunk, n, seed, stream_offset + b)

    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(item) for item in blocks]
    if not parts:
        return np.empty(0, dtype=complex)
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# pullbacks of Dirac masses


def pullback_dirac_exact(corr: PolyCorrespondence, z, n: int, cap: int = DEFAULT_TREE_CAP) -> WeightedPointCloud:
    """(1/d^n)(F^n)^* delta_z as an equal-weight cloud over the full backward tree."""
    if n < 0:
        raise ValidationError("n must be nonnegative")
    z = SpherePoint.from_complex(z).to_complex()
    leaves = iterate_backward_array(corr, np.array([z]), n, cap)[0]
    return WeightedPointCloud.uniform(
        leaves, meta={"generator": "pullback_dirac_exact", "start": repr(z), "depth": n, "label": corr.label}
    )


def pullback_dirac_sampled(
    corr: PolyCorrespondence,
    z,
    n: int,
    samples: int,
    seed: int = 0,
    workers: int = 1,
) -> WeightedPointCloud:
    """Monte Carlo version of the exact pullback: endpoints of uniform backward walks."""
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    if n < 0:
        raise ValidationError("n must be nonnegative")
    z = SpherePoint.from_complex(z).to_complex()
    ends = backward_walks(corr, np.full(samples, z), n, seed=seed, workers=workers)
    return WeightedPointCloud.uniform(
        ends,
        meta={
            "generator": "pullback_dirac_sampled",
            "start": repr(z),
            "depth": n,
            "samples": samples,
            "seed": seed,
            "label": corr.label,
        },
    )


def exceptional_candidates(corr: PolyCorrespondence) -> np.ndarray:
    """Heuristic list of points to avoid as starts: 0, infinity, fixed points of components."""
    return np.concatenate([[0j, complex(np.inf, 0)], corr.fixed_points()])


def estimate_ds_measure(
    corr: PolyCorrespondence,
    start=DEFAULT_START,
    depth: int = 25,
    samples: int = 100_000,
    seed: int = 0,
    workers: int = 1,
    dictionary: TestDictionary | None = None,
    exceptional_radius: float = 1e-6,
) -> WeightedPointCloud:
    """Estimate of the equidistribution limit of backward orbits of ``start``."""
    start_c = SpherePoint.from_complex(start).to_complex()
    near = chordal_distance_array(start_c, exceptional_candidates(corr))
    if np.any(near < exceptional_radius):
        warnings.warn(
            f"start point {start_c} is a heuristically exceptional point; estimate may not converge to mu_F",
            ExceptionalPointWarning,
            stacklevel=2,
        )
    if corr.topological_degree <= corr.forward_degree:
        warnings.warn(
            f"topological degree {corr.topological_degree} <= forward degree {corr.forward_degree}; "
            "equidistribution is not guaranteed",
            DegreeHypothesisWarning,
            stacklevel=2,
        )
    cloud = pullback_dirac_sampled(corr, start_c, depth, samples, seed=seed, workers=workers)
    residual = invariance_residual(corr, cloud, dictionary or default_dictionary())
    meta = dict(cloud.meta, generator="estimate_ds_measure", invariance_residual=residual)
    return WeightedPointCloud(cloud.values, cloud.weights, meta)


# ---------------------------------------------------------------------------
# reference samplers


def _block_uniform(samples: int, seed: int, draw) -> np.ndarray:
    parts = []
    for b, i in enumerate(range(0, samples, BLOCK_SIZE)):
        parts.append(draw(seeded_stream(seed, b), min(BLOCK_SIZE, samples - i)))
    return np.concatenate(parts)


def sample_annulus_measure(samples: int, seed: int = 0, r_inner: float = 1.0, r_outer: float = 2.0) -> WeightedPointCloud:
    """Log-uniform radius, uniform angle on r_inner <= |z| <= r_outer."""
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    lo, hi = np.log(r_inner), np.log(r_outer)

    def draw(rng, k):
        x = rng.uniform(lo, hi, size=k)
        theta = rng.uniform(0.0, 2 * np.pi, size=k)
        return np.exp(x + 1j * theta)

    vals = _block_uniform(samples, seed, draw)
    return WeightedPointCloud.uniform(vals, meta={"generator": "sample_annulus_measure", "samples": samples, "seed": seed})


def sample_circle_measure(samples: int, seed: int = 0, stratified: bool = False) -> WeightedPointCloud:
    """Normalized arc length on the unit circle.

    With ``stratified`` the k-th angle is drawn uniformly from the k-th of
    ``samples`` equal arcs, which integrates smooth functions far more
    accurately than independent angles.
    """
    if samples < 1:
        raise ValidationError("samples must be >= 1")
    if stratified:
        u = _block_uniform(samples, seed, lambda rng, k: rng.uniform(0.0, 1.0, size=k)).real
        vals = np.exp(2j * np.pi * (np.arange(samples) + u) / samples)
    else:
        vals = _block_uniform(samples, seed, lambda rng, k: np.exp(1j * rng.uniform(0.0, 2 * np.pi, size=k)))
    meta = {"generator": "sample_circle_measure", "samples": samples, "seed": seed}
    if stratified:
        meta["stratified"] = True
    return WeightedPointCloud.uniform(vals, meta=meta)


# ---------------------------------------------------------------------------
# comparisons


def _chunks(n: int, size: int = 1 << 15):
    for i in range(0, n, size):
        yield slice(i, min(n, i + size))


def pullback_moments(corr: PolyCorrespondence, cloud: WeightedPointCloud, functions) -> np.ndarray:
    """(1/d) sum_k weight_k sum_{w in F-dagger(z_k)} phi(w), for each phi."""
    out = np.zeros(len(functions))
    for sl in _chunks(cloud.values.size):
        pre = corr.backward_all(cloud.values[sl])
        w = cloud.weights[sl]
        for i, phi in enumerate(functions):
            out[i] += np.dot(w, np.asarray(phi(pre), dtype=float).mean(axis=1))
    return out


def invariance_residual(corr: PolyCorrespondence, cloud: WeightedPointCloud, dictionary: TestDictionary | None = None) -> float:
    dictionary = dictionary or default_dictionary()
    pulled = pullback_moments(corr, cloud, dictionary.functions)
    return float(np.max(np.abs(pulled - dictionary.moments(cloud))))


def weak_star_discrepancy(a: WeightedPointCloud, b: WeightedPointCloud, dictionary: TestDictionary | None = None) -> float:
    dictionary = dictionary or default_dictionary()
    return float(np.max(np.abs(dictionary.moments(a) - dictionary.moments(b))))


def measure_of_set(cloud: WeightedPointCloud, indicator: Callable) -> float:
    """Weighted fraction of points satisfying a vectorized predicate."""
    mask = np.asarray(indicator(cloud.values), dtype=bool)
    # compensated sums, so the full set has measure exactly 1
    return math.fsum(cloud.weights[mask]) / math.fsum(cloud.weights)


def forward_set_membership(
    corr: PolyCorrespondence,
    z,
    j: int,
    A: Callable,
    cap: int = DEFAULT_TREE_CAP,
) -> bool:
    """Whether z lies in F^j(A), i.e. some point of (F^j)-dagger(z) satisfies A.

    Depth-first over the backward tree, stopping at the first hit.
    """
    if j < 0:
        raise ValidationError("j must be nonnegative")
    check_tree(corr.topological_degree, j, cap)
    z = SpherePoint.from_complex(z).to_complex()
    if j == 0:
        return bool(np.asarray(A(np.array([z])), dtype=bool)[0])
    stack = [(z, 0)]
    while stack:
        node, depth = stack.pop()
        children = corr.backward_all(np.array([node]))[0]
        if depth + 1 == j:
            if np.any(np.asarray(A(children), dtype=bool)):
                return True
            continue
        # distinct children only: repeated roots give identical subtrees
        uniq = np.unique(children)
        stack.extend((c, depth + 1) for c in uniq[::-1])
    return False


# ---------------------------------------------------------------------------
# persistence


def dumps_cloud(cloud: WeightedPointCloud) -> str:
    lines = [
        f"# count={cloud.values.size}",
        "# meta=" + json.dumps(cloud.meta, sort_keys=True, default=str),
        "re,im,at_infinity,weight",
    ]
    inf = is_infinite(cloud.values)
    for v, flag, w in zip(cloud.values, inf, cloud.weights):
        re, im = (0.0, 0.0) if flag else (v.real, v.imag)
        lines.append(f"{re:.17g},{im:.17g},{int(flag)},{w:.17g}")
    return "\n".join(lines) + "\n"


def loads_cloud(text: str) -> WeightedPointCloud:
    count = None
    meta: dict = {}
    vals, weights = [], []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("# count="):
            count = int(line.split("=", 1)[1])
            continue
        if line.startswith("# meta="):
            meta = json.loads(line.split("=", 1)[1])
            continue
        if line.startswith("#") or line.startswith("re,"):
            continue
        parts = line.split(",")
        if len(parts) != 4:
            raise ValidationError(f"cloud line {lineno}: expected 4 fields")
        try:
            re, im, flag, w = float(parts[0]), float(parts[1]), int(parts[2]), float(parts[3])
        except ValueError as exc:
            raise ValidationError(f"cloud line {lineno}: {exc}") from exc
        vals.append(complex(np.inf, 0) if flag else complex(re, im))
        weights.append(w)
    if count is not None and count != len(vals):
        raise ValidationError(f"header says {count} points, found {len(vals)}")
    return WeightedPointCloud(np.array(vals, dtype=complex), np.array(weights), meta)


def save_cloud(cloud: WeightedPointCloud, path) -> str:
    text = dumps_cloud(cloud)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)
    return hashlib.sha256(text.encode()).hexdigest()


def load_cloud(path) -> WeightedPointCloud:
    with open(path, encoding="utf-8") as fh:
        return loads_cloud(fh.read())


def cloud_digest(cloud: WeightedPointCloud) -> str:
    return hashlib.sha256(dumps_cloud(cloud).encode()).hexdigest()
