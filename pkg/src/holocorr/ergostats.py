"""Koopman operator, correlation sequences and mixing diagnostics on the sphere.

All verdicts are finite-horizon: they say whether the computed numbers are
consistent with mixing / weak mixing / ergodicity at a stated horizon and
tolerance, never that the property holds.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .correspondence import DEFAULT_TREE_CAP, PolyCorrespondence, ProductCorrespondence, check_tree
from .errors import TreeTooLargeError, ValidationError
from .measures import WeightedPointCloud, backward_walks, cloud_digest
from .numerics import SpherePoint

DEFAULT_HORIZON = 30
DEFAULT_SAMPLES_PER_POINT = 256
DEFAULT_WORK_CAP = 2 * 10**7
DENSITY_THRESHOLD = 0.2
L1_GAP_NOTE = (
    "mixing is defined against all continuous phi and integrable psi; only the supplied test functions were checked"
)


@dataclass(frozen=True)
class KoopmanEstimate:
    value: float
    stderr: float
    exact: bool

    def __float__(self):
        return float(self.value)


# ---------------------------------------------------------------------------
# leaf engine


def koopman_levels(
    corr: PolyCorrespondence,
    points: np.ndarray,
    n_max: int,
    cap: int = DEFAULT_TREE_CAP,
    work_cap: int = DEFAULT_WORK_CAP,
    samples: int = DEFAULT_SAMPLES_PER_POINT,
    seed: int = 0,
    allow_sampling: bool = True,
    workers: int = 1,
):
    """Yield (n, leaves, exact) for n = 0..n_max.

    ``leaves`` has shape (N, k): the whole depth-n backward tree of every point
    while it fits in ``cap`` leaves per point and ``work_cap`` leaves overall,
    afterwards the endpoints of ``samples`` independent backward walks per point.
    """
    points = np.asarray(points, dtype=complex).ravel()
    n_pts = points.size
    d = corr.topological_degree
    level = points.reshape(-1, 1)
    yield 0, level, True
    exact = True
    walkers = None
    for n in range(1, n_max + 1):
        if exact and d**n <= cap and n_pts * d**n <= work_cap:
            level = corr.backward_all(level.ravel()).reshape(n_pts, -1)
            yield n, level, True
            continue
        if not allow_sampling:
            check_tree(d, n, min(cap, work_cap // max(n_pts, 1)))
            raise TreeTooLargeError(f"tree at depth {n} exceeds the work budget")
        if walkers is None:
            exact = False
            walkers = np.repeat(points, samples)
            done = 0
        while done < n:
            walkers = backward_walks(corr, walkers, 1, seed=seed, workers=workers, stream_offset=(done + 1) << 24)
            done += 1
        yield n, walkers.reshape(n_pts, samples), False


def _mean_and_se(values: np.ndarray, exact: bool) -> tuple[np.ndarray, np.ndarray]:
    mean = values.mean(axis=1)
    if exact or values.shape[1] < 2:
        return mean, np.zeros_like(mean)
    return mean, values.std(axis=1, ddof=1) / np.sqrt(values.shape[1])


def _eval(phi: Callable, z) -> np.ndarray:
    return np.asarray(phi(z), dtype=float)


# ---------------------------------------------------------------------------
# Koopman operator


def koopman_apply(corr: PolyCorrespondence, phi: Callable, z, cap: int = DEFAULT_TREE_CAP) -> float:
    """(U phi)(z) = (1/d) * sum of phi over the backward image of z."""
    z = SpherePoint.from_complex(z).to_complex()
    pre = corr.backward_all(np.array([z]))[0]
    return float(_eval(phi, pre).mean())


def koopman_iterate(
    corr: PolyCorrespondence,
    phi: Callable,
    z,
    n: int,
    cap: int = DEFAULT_TREE_CAP,
    samples: int = DEFAULT_SAMPLES_PER_POINT,
    seed: int = 0,
    allow_sampling: bool = True,
) -> KoopmanEstimate:
    """(U^n phi)(z): exact tree mean, or an unbiased walk estimate past ``cap``."""
    if n < 0:
        raise ValidationError("n must be nonnegative")
    z = SpherePoint.from_complex(z).to_complex()
    last = None
    for last in koopman_levels(corr, np.array([z]), n, cap=cap, work_cap=cap, samples=samples,
                               seed=seed, allow_sampling=allow_sampling):
        pass
    _, leaves, exact = last
    mean, se = _mean_and_se(_eval(phi, leaves), exact)
    return KoopmanEstimate(float(mean[0]), float(se[0]), exact)


# ---------------------------------------------------------------------------
# correlations


def _cloud_se(weights: np.ndarray, values: np.ndarray) -> float:
    """Standard error of a weighted mean treating the cloud as an iid sample."""
    n_eff = 1.0 / np.sum(weights**2)
    if n_eff <= 1:
        return 0.0
    mean = np.dot(weights, values)
    var = np.dot(weights, (values - mean) ** 2)
    return float(np.sqrt(var / n_eff))


def correlation_series(
    corr: PolyCorrespondence,
    mu: WeightedPointCloud,
    phis: Sequence[Callable],
    psis: Sequence[Callable],
    n_max: int,
    cap: int = DEFAULT_TREE_CAP,
    work_cap: int = DEFAULT_WORK_CAP,
    samples: int = DEFAULT_SAMPLES_PER_POINT,
    seed: int = 0,
    workers: int = 1,
) -> dict:
    """I_n(phi, psi) for n = 0..n_max and every (phi, psi) pair, sharing one leaf computation.

    Returns arrays ``series`` and ``koopman_se`` of shape (n_max+1, P, Q),
    ``cloud_se`` of the same shape, and the list of exact/sampled flags.
    """
    psi_vals = np.stack([_eval(psi, mu.values) for psi in psis], axis=1)  # (N, Q)
    w = mu.weights
    n_p, n_q = len(phis), len(psis)
    series = np.zeros((n_max + 1, n_p, n_q))
    kse = np.zeros_like(series)
    cse = np.zeros_like(series)
    modes = []
    for n, leaves, exact in koopman_levels(corr, mu.values, n_max, cap=cap, work_cap=work_cap,
                                           samples=samples, seed=seed, workers=workers):
        modes.append("exact" if exact else "sampled")
        for p, phi in enumerate(phis):
            u, se = _mean_and_se(_eval(phi, leaves), exact)
            prod = u[:, None] * psi_vals
            series[n, p] = w @ prod
            kse[n, p] = np.sqrt((w**2 * se**2) @ (psi_vals**2))
            for q in range(n_q):
                cse[n, p, q] = _cloud_se(w, prod[:, q])
    return {"series": series, "koopman_se": kse, "cloud_se": cse, "modes": modes}


def correlation(
    corr: PolyCorrespondence,
    mu: WeightedPointCloud,
    phi: Callable,
    psi: Callable,
    n: int,
    cap: int = DEFAULT_TREE_CAP,
    **kwargs,
) -> float:
    """I_n(phi, psi) = integral of (U^n phi) psi against the cloud."""
    if n < 0:
        raise ValidationError("n must be nonnegative")
    out = correlation_series(corr, mu, [phi], [psi], n, cap=cap, **kwargs)
    return float(out["series"][n, 0, 0])


# ---------------------------------------------------------------------------
# Cesaro utilities


def cesaro(seq) -> np.ndarray:
    """Running arithmetic means."""
    a = np.asarray(seq, dtype=float)
    if a.size == 0:
        raise ValidationError("cesaro of an empty sequence")
    return np.cumsum(a) / np.arange(1, a.size + 1)


@dataclass
class DensityZeroResult:
    excluded: list
    limit: float
    complement_mean_abs_dev: float
    verdict: bool
    final_density: float
    density_slope: float
    window_tol: float

    def to_dict(self):
        return asdict(self)


def density_zero_filter(
    seq,
    target: float,
    window_tol: float,
    density_threshold: float = DENSITY_THRESHOLD,
) -> DensityZeroResult:
    """Finite-horizon search for a density-zero exceptional set.

    Indices where the sequence strays more than ``window_tol`` from ``target``
    form the candidate set D. The verdict is positive when the running density
    of D stays below ``density_threshold`` and does not trend upward over the
    final third of the horizon, and the complement averages within tolerance.
    """
    a = np.asarray(seq, dtype=float)
    if a.size < 20:
        raise ValidationError(f"sequence too short for density-zero filtering ({a.size} < 20)")
    dev = np.abs(a - target)
    in_d = dev > window_tol
    excluded = np.nonzero(in_d)[0]
    n = np.arange(1, a.size + 1)
    density = np.cumsum(in_d) / n
    start = (2 * a.size) // 3
    tail_n, tail_density = n[start:], density[start:]
    slope = float(np.polyfit(tail_n, tail_density, 1)[0]) if tail_n.size >= 2 else 0.0
    comp = ~in_d
    comp_mean = float(dev[comp].mean()) if comp.any() else float("inf")
    tail_comp = comp.copy()
    tail_comp[:start] = False
    if tail_comp.any():
        limit = float(a[tail_comp].mean())
    elif comp.any():
        limit = float(a[comp].mean())
    else:
        limit = float("nan")
    verdict = bool(
        np.all(tail_density < density_threshold)
        and slope <= 1e-12
        and comp_mean <= window_tol
    )
    return DensityZeroResult(
        excluded=[int(i) for i in excluded],
        limit=limit,
        complement_mean_abs_dev=comp_mean,
        verdict=verdict,
        final_density=float(density[-1]),
        density_slope=slope,
        window_tol=float(window_tol),
    )


# ---------------------------------------------------------------------------
# reports


@dataclass
class CorrelationReport:
    series: list
    target: float
    cesaro_means: list
    cesaro_abs_devs: list
    density_zero: DensityZeroResult | None
    stderr: list | None
    horizon: int
    tolerance: float
    verdicts: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["density_zero"] = self.density_zero.to_dict() if self.density_zero else None
        return out


def _verdicts(series: np.ndarray, target: float, tol: float) -> dict:
    """Mixing / weak mixing / ergodic signatures on the window [n/3, n].

    The same window is used for all three so that the finite-horizon verdicts
    obey mixing => weak mixing => ergodic by construction (max >= mean|.| >= |mean|).
    """
    n = series.size - 1
    window = series[n // 3:] - target
    return {
        "mixing": "consistent" if np.max(np.abs(window)) <= tol else "inconsistent",
        "weak_mixing": "consistent" if np.mean(np.abs(window)) <= tol else "inconsistent",
        "ergodic": "consistent" if abs(np.mean(window)) <= tol else "inconsistent",
        "window_start": n // 3,
    }


def build_report(
    series,
    target: float,
    stderr=None,
    tolerance: float | None = None,
    provenance: dict | None = None,
    target_se: float = 0.0,
) -> CorrelationReport:
    s = np.asarray(series, dtype=float)
    n = s.size - 1
    if n < 1:
        raise ValidationError("report needs n_max >= 1")
    se = np.zeros_like(s) if stderr is None else np.asarray(stderr, dtype=float)
    if tolerance is None:
        agg = np.sqrt(se**2 + target_se**2)
        tolerance = max(3.0 * float(agg[n // 3:].max()), 1e-12)
    dz = density_zero_filter(s, target, tolerance) if s.size >= 20 else None
    return CorrelationReport(
        series=s.tolist(),
        target=float(target),
        cesaro_means=cesaro(s).tolist(),
        cesaro_abs_devs=cesaro(np.abs(s - target)).tolist(),
        density_zero=dz,
        stderr=se.tolist(),
        horizon=n,
        tolerance=float(tolerance),
        verdicts=_verdicts(s, target, tolerance),
        provenance=dict(provenance or {}, note=L1_GAP_NOTE),
    )


def correlation_report(
    corr: PolyCorrespondence,
    mu: WeightedPointCloud,
    phi: Callable,
    psi: Callable,
    n_max: int = DEFAULT_HORIZON,
    cap: int = DEFAULT_TREE_CAP,
    tolerance: float | None = None,
    samples: int = DEFAULT_SAMPLES_PER_POINT,
    seed: int = 0,
    work_cap: int = DEFAULT_WORK_CAP,
    workers: int = 1,
) -> CorrelationReport:
    if n_max < 1:
        raise ValidationError("n_max must be >= 1")
    out = correlation_series(corr, mu, [phi], [psi], n_max, cap=cap, work_cap=work_cap,
                             samples=samples, seed=seed, workers=workers)
    series = out["series"][:, 0, 0]
    stderr = np.sqrt(out["koopman_se"][:, 0, 0] ** 2 + out["cloud_se"][:, 0, 0] ** 2)
    phi_v, psi_v = _eval(phi, mu.values), _eval(psi, mu.values)
    i_phi, i_psi = float(mu.weights @ phi_v), float(mu.weights @ psi_v)
    target_se = float(np.hypot(i_psi * _cloud_se(mu.weights, phi_v), i_phi * _cloud_se(mu.weights, psi_v)))
    provenance = {
        "correspondence": corr.label,
        "seed": seed,
        "horizon": n_max,
        "cap": cap,
        "work_cap": work_cap,
        "samples_per_point": samples,
        "modes": out["modes"],
        "cloud_digest": cloud_digest(mu),
        "cloud_size": len(mu),
    }
    return build_report(series, i_phi * i_psi, stderr, tolerance, provenance, target_se)


def birkhoff_average(
    corr: PolyCorrespondence,
    phi: Callable,
    z,
    n: int,
    cap: int = DEFAULT_TREE_CAP,
    samples: int = 4096,
    seed: int = 0,
) -> list:
    """Partial averages (1/m) sum_{j<m} (U^j phi)(z) for m = 1..n."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    z = SpherePoint.from_complex(z).to_complex()
    terms = []
    for _, leaves, exact in koopman_levels(corr, np.array([z]), n - 1, cap=cap, work_cap=cap,
                                           samples=samples, seed=seed):
        terms.append(float(_eval(phi, leaves).mean()))
    return cesaro(terms).tolist()


def contraction_check(
    corr: PolyCorrespondence,
    mu: WeightedPointCloud,
    phi: Callable,
    q: float,
    cap: int = DEFAULT_TREE_CAP,
) -> tuple[float, float]:
    """(||U phi||_q, ||phi||_q), both integrated against the cloud."""
    if q < 1:
        raise ValidationError("q must be >= 1")
    u = np.empty(len(mu))
    for i in range(0, len(mu), 1 << 15):
        sl = slice(i, i + (1 << 15))
        u[sl] = _eval(phi, corr.backward_all(mu.values[sl])).mean(axis=1)
    lhs = float(np.dot(mu.weights, np.abs(u) ** q) ** (1.0 / q))
    rhs = float(np.dot(mu.weights, np.abs(_eval(phi, mu.values)) ** q) ** (1.0 / q))
    return lhs, rhs


# ---------------------------------------------------------------------------
# product correspondences


def product_koopman_levels(
    pc: ProductCorrespondence,
    z1: np.ndarray,
    z2: np.ndarray,
    n_max: int,
    cap: int = DEFAULT_TREE_CAP,
    work_cap: int = DEFAULT_WORK_CAP,
    samples: int = DEFAULT_SAMPLES_PER_POINT,
    seed: int = 0,
):
    """Like :func:`koopman_levels` for point pairs under F1 x F2; yields (n, leaves1, leaves2, exact)."""
    z1 = np.asarray(z1, dtype=complex).ravel()
    z2 = np.asarray(z2, dtype=complex).ravel()
    n_pts = z1.size
    d = pc.topological_degree
    l1, l2 = z1.reshape(-1, 1), z2.reshape(-1, 1)
    yield 0, l1, l2, True
    exact = True
    w1 = w2 = None
    for n in range(1, n_max + 1):
        if exact and d**n <= cap and n_pts * d**n <= work_cap:
            a, b = pc.backward_all(l1.ravel(), l2.ravel())
            l1, l2 = a.reshape(n_pts, -1), b.reshape(n_pts, -1)
            yield n, l1, l2, True
            continue
        if w1 is None:
            exact = False
            w1, w2 = np.repeat(z1, samples), np.repeat(z2, samples)
            done = 0
        while done < n:
            # independent coordinate choices = uniform choice among the d1*d2 product preimages
            w1 = backward_walks(pc.left, w1, 1, seed=seed, stream_offset=((done + 1) << 24))
            w2 = backward_walks(pc.right, w2, 1, seed=seed, stream_offset=((done + 1) << 24) + (1 << 23))
            done += 1
        yield n, w1.reshape(n_pts, samples), w2.reshape(n_pts, samples), False


def product_correlation_report(
    pc: ProductCorrespondence,
    mu1: WeightedPointCloud,
    mu2: WeightedPointCloud,
    phi1: Callable,
    phi2: Callable,
    psi1: Callable,
    psi2: Callable,
    n_max: int = DEFAULT_HORIZON,
    cap: int = DEFAULT_TREE_CAP,
    samples: int = DEFAULT_SAMPLES_PER_POINT,
    seed: int = 0,
    work_cap: int = DEFAULT_WORK_CAP,
    tolerance: float | None = None,
) -> CorrelationReport:
    """Correlations of phi1*phi2 against psi1*psi2 under F1 x F2.

    The product measure is sampled by pairing the k-th points of two
    independent clouds of equal size.
    """
    if len(mu1) != len(mu2):
        raise ValidationError("paired product cloud needs clouds of equal size")
    w = mu1.weights * mu2.weights
    w = w / w.sum()
    psi_v = _eval(psi1, mu1.values) * _eval(psi2, mu2.values)
    series = np.zeros(n_max + 1)
    stderr = np.zeros(n_max + 1)
    modes = []
    for n, l1, l2, exact in product_koopman_levels(pc, mu1.values, mu2.values, n_max, cap=cap,
                                                  work_cap=work_cap, samples=samples, seed=seed):
        modes.append("exact" if exact else "sampled")
        u, se = _mean_and_se(_eval(phi1, l1) * _eval(phi2, l2), exact)
        series[n] = w @ (u * psi_v)
        stderr[n] = np.hypot(np.sqrt((w**2 * se**2) @ psi_v**2), _cloud_se(w, u * psi_v))
    phi_v = _eval(phi1, mu1.values) * _eval(phi2, mu2.values)
    target = float(w @ phi_v) * float(w @ psi_v)
    provenance = {
        "correspondence": f"{pc.left.label} x {pc.right.label}",
        "seed": seed,
        "horizon": n_max,
        "cap": cap,
        "samples_per_point": samples,
        "modes": modes,
        "cloud_digests": [cloud_digest(mu1), cloud_digest(mu2)],
    }
    return build_report(series, target, stderr, tolerance, provenance)


def _series_of(x) -> np.ndarray:
    if isinstance(x, CorrelationReport):
        return np.asarray(x.series, dtype=float)
    return np.asarray(x, dtype=float)


def product_correlation_factorization_check(left_report_pair, product_report) -> float:
    """max_n |I_n(product) - I_n(left) * I_n(right)|.

    Accepts CorrelationReports or plain sequences.
    """
    left, right = left_report_pair
    a, b, p = _series_of(left), _series_of(right), _series_of(product_report)
    if not (a.size == b.size == p.size):
        raise ValidationError(f"mismatched horizons: {a.size}, {b.size}, {p.size}")
    return float(np.max(np.abs(p - a * b)))


# ---------------------------------------------------------------------------
# persistence


def dumps_report(report: CorrelationReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def loads_report(text: str) -> CorrelationReport:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"report is not valid JSON: {exc}") from None
    dz = data.get("density_zero")
    data["density_zero"] = DensityZeroResult(**dz) if dz else None
    try:
        return CorrelationReport(**data)
    except TypeError as exc:
        raise ValidationError(f"malformed report: {exc}") from None


def save_report(report: CorrelationReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_report(report))


def load_report(path) -> CorrelationReport:
    with open(path, encoding="utf-8") as fh:
        return loads_report(fh.read())
