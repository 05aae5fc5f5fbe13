"""Exact finite-state model of correspondences and their invariant measures.

A finite correspondence on states 0..m-1 is a nonnegative integer matrix M
with M[i, j] the multiplicity of j inside F(i), so the preimage multiset of
j is read off column j. Every column sums to the topological degree d.

Dictionary of the finite objects:

* pullback          F*mu = M @ mu
* Koopman matrix    A = M.T / d, row-stochastic
* invariant mu      mu @ A = mu, i.e. M @ mu = d * mu
* the Koopman chain moves z -> w with probability M[w, z] / d
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import reduce
from typing import Iterable

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import CapExceededError, InconsistencyError, ValidationError
from .numerics import seeded_stream

ENUMERATION_CAP = 20
KRON_CAP = 400
INVARIANCE_TOL = 1e-10
SPECTRAL_TOL = 1e-8
DEFINITIONAL_TOL = 1e-6
DIRECT_HORIZON = 500
LIMIT_POWER = 1 << 20


@dataclass(frozen=True)
class FiniteCorrespondence:
    M: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.M)
        if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] == 0:
            raise ValidationError(f"multiplicity matrix must be square and nonempty, got shape {M.shape}")
        if not np.all(np.equal(np.mod(M, 1), 0)) or np.any(M < 0):
            raise ValidationError("multiplicities must be nonnegative integers")
        M = M.astype(np.int64)
        cols = M.sum(axis=0)
        if np.any(cols != cols[0]):
            raise ValidationError(f"column sums must be constant, got {cols.tolist()}")
        if cols[0] < 1:
            raise ValidationError("degree must be at least 1")
        if np.any(M.sum(axis=1) == 0):
            raise ValidationError("every row must be nonzero")
        M.setflags(write=False)
        object.__setattr__(self, "M", M)

    @property
    def m(self) -> int:
        return self.M.shape[0]

    @property
    def d(self) -> int:
        return int(self.M[:, 0].sum())

    @property
    def d_f_profile(self) -> list[int]:
        return self.M.sum(axis=1).tolist()

    def preimages(self, j: int) -> list[int]:
        """F-dagger(j) as a set."""
        return np.nonzero(self.M[:, j])[0].tolist()

    def images(self, i: int) -> list[int]:
        return np.nonzero(self.M[i])[0].tolist()

    @classmethod
    def identity(cls, m: int) -> "FiniteCorrespondence":
        return cls(np.eye(m, dtype=np.int64))

    @classmethod
    def swap(cls) -> "FiniteCorrespondence":
        return cls(np.array([[0, 1], [1, 0]]))

    @classmethod
    def all_ones(cls, m: int) -> "FiniteCorrespondence":
        return cls(np.ones((m, m), dtype=np.int64))


@dataclass(frozen=True)
class FiniteMeasure:
    mu: np.ndarray

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).ravel()
        if mu.size == 0 or np.any(mu < 0) or not np.all(np.isfinite(mu)):
            raise ValidationError("measure must be a nonempty nonnegative vector")
        if abs(mu.sum() - 1.0) > 1e-12:
            raise ValidationError(f"measure must sum to 1, got {mu.sum()!r}")
        mu = mu.copy()
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)

    @property
    def support(self) -> list[int]:
        return np.nonzero(self.mu > 0)[0].tolist()

    def __len__(self):
        return self.mu.size


def _as_fc(fc) -> FiniteCorrespondence:
    return fc if isinstance(fc, FiniteCorrespondence) else FiniteCorrespondence(fc)


def _as_mu(mu) -> np.ndarray:
    return mu.mu if isinstance(mu, FiniteMeasure) else np.asarray(mu, dtype=float).ravel()


def _check_dims(fc: FiniteCorrespondence, v: np.ndarray, what: str = "measure"):
    if v.size != fc.m:
        raise ValidationError(f"{what} has length {v.size}, expected {fc.m}")


# ---------------------------------------------------------------------------
# basic operators


def pullback(fc, mu) -> np.ndarray:
    """(F*mu)(w) = sum_z M[w, z] mu(z)."""
    fc, mu = _as_fc(fc), _as_mu(mu)
    _check_dims(fc, mu)
    return fc.M @ mu


def koopman_matrix(fc) -> np.ndarray:
    fc = _as_fc(fc)
    return fc.M.T / fc.d


def invariance_defect(fc, mu) -> float:
    fc, mu = _as_fc(fc), _as_mu(mu)
    _check_dims(fc, mu)
    return float(np.max(np.abs(fc.M @ mu - fc.d * mu)) / fc.d)


def _require_invariant(fc, mu):
    defect = invariance_defect(fc, mu)
    if defect > INVARIANCE_TOL:
        raise ValidationError(f"measure is not invariant (defect {defect:.3e})")


def _chain_adjacency(fc: FiniteCorrespondence) -> np.ndarray:
    """adj[z, w] true when the Koopman chain can move z -> w (w a preimage of z)."""
    return fc.M.T > 0


def recurrent_classes(fc) -> list[list[int]]:
    """Closed strongly connected classes of the Koopman chain, sorted by least element."""
    fc = _as_fc(fc)
    adj = _chain_adjacency(fc)
    n_comp, labels = connected_components(adj.astype(np.int8), directed=True, connection="strong")
    classes = []
    for c in range(n_comp):
        members = np.nonzero(labels == c)[0]
        outside = np.ones(fc.m, dtype=bool)
        outside[members] = False
        if not adj[np.ix_(members, outside)].any():
            classes.append(members.tolist())
    return sorted(classes, key=min)


def class_period(fc, members: Iterable[int]) -> int:
    """Period of a strongly connected class: gcd of level differences along its edges."""
    fc = _as_fc(fc)
    members = list(members)
    inside = set(members)
    adj = _chain_adjacency(fc)
    level = {members[0]: 0}
    queue = [members[0]]
    g = 0
    while queue:
        u = queue.pop(0)
        for v in np.nonzero(adj[u])[0]:
            v = int(v)
            if v not in inside:
                continue
            if v not in level:
                level[v] = level[u] + 1
                queue.append(v)
            else:
                g = math.gcd(g, level[u] + 1 - level[v])
    return abs(g) if g else 1


def _stationary(A: np.ndarray) -> np.ndarray:
    k = A.shape[0]
    lhs = np.vstack([A.T - np.eye(k), np.ones((1, k))])
    rhs = np.zeros(k + 1)
    rhs[-1] = 1.0
    x = np.linalg.lstsq(lhs, rhs, rcond=None)[0]
    x = np.clip(x, 0.0, None)
    return x / x.sum()


def invariant_measures(fc) -> list[FiniteMeasure]:
    """Extreme invariant probability measures, one per recurrent class."""
    fc = _as_fc(fc)
    A = koopman_matrix(fc)
    out = []
    for cls in recurrent_classes(fc):
        mu = np.zeros(fc.m)
        mu[cls] = _stationary(A[np.ix_(cls, cls)])
        # one refinement step towards the exact fixed point
        mu = mu @ A
        mu = mu / mu.sum()
        out.append(FiniteMeasure(mu))
    return out


def correlation_exact(fc, mu, phi, psi, n: int) -> float:
    """<A^n phi, psi> in L^2(mu)."""
    fc, mu = _as_fc(fc), _as_mu(mu)
    phi, psi = np.asarray(phi, dtype=float), np.asarray(psi, dtype=float)
    _check_dims(fc, mu)
    _check_dims(fc, phi, "phi")
    _check_dims(fc, psi, "psi")
    if n < 0:
        raise ValidationError("n must be nonnegative")
    _require_invariant(fc, mu)
    v = np.linalg.matrix_power(koopman_matrix(fc), n) @ phi
    return float(np.sum(mu * v * psi))


# ---------------------------------------------------------------------------
# almost invariance and ergodicity


def preimage_set(fc, states: Iterable[int]) -> set[int]:
    """F-dagger of a set: every z with M[z, w] > 0 for some w in the set."""
    fc = _as_fc(fc)
    states = list(states)
    if not states:
        return set()
    return set(np.nonzero(fc.M[:, states].sum(axis=1) > 0)[0].tolist())


def forward_set(fc, states: Iterable[int]) -> set[int]:
    fc = _as_fc(fc)
    states = list(states)
    if not states:
        return set()
    return set(np.nonzero(fc.M[states].sum(axis=0) > 0)[0].tolist())


def is_almost_invariant(fc, mu, B: Iterable[int]) -> bool:
    """Is there B' in B with mu(B') = mu(B) and F-dagger(B') inside B?

    B' ranges over B minus subsets of its null atoms. Shrinking B' only
    shrinks F-dagger(B'), so the smallest candidate (the atoms of B with
    positive mass) decides.
    """
    fc, mu = _as_fc(fc), _as_mu(mu)
    _check_dims(fc, mu)
    B = set(int(b) for b in B)
    if any(b < 0 or b >= fc.m for b in B):
        raise ValidationError("set contains an out-of-range state")
    core = [b for b in B if mu[b] > 0]
    return preimage_set(fc, core) <= B


def _subset_tables(pre_masks: list[int], weights: np.ndarray):
    """For every subset mask of k items: OR of pre_masks and the summed weight."""
    k = len(pre_masks)
    pre = np.zeros(1 << k, dtype=np.int64)
    wt = np.zeros(1 << k)
    for i in range(k):
        lo = 1 << i
        pre[lo:2 * lo] = pre[:lo] | pre_masks[i]
        wt[lo:2 * lo] = wt[:lo] + weights[i]
    return pre, wt


def _ergodic_by_enumeration(fc: FiniteCorrespondence, mu: np.ndarray) -> bool:
    """Search all subsets C of the support for a nontrivial almost-invariant set.

    mu(B) only depends on C = B restricted to the support, and some B with
    that trace is almost invariant iff F-dagger(C) meets the support inside C.
    """
    support = np.nonzero(mu > 0)[0]
    index = {int(s): k for k, s in enumerate(support)}
    pre_masks = []
    for s in support:
        mask = 0
        for z in np.nonzero(fc.M[:, s])[0]:
            if int(z) in index:
                mask |= 1 << index[int(z)]
        pre_masks.append(mask)
    pre, wt = _subset_tables(pre_masks, mu[support])
    masks = np.arange(1 << len(support), dtype=np.int64)
    closed = (pre & ~masks) == 0
    nontrivial = (wt > 1e-12) & (wt < 1 - 1e-12)
    return not bool(np.any(closed & nontrivial))


def _ergodic_structural(fc: FiniteCorrespondence, mu: np.ndarray) -> bool:
    support = set(np.nonzero(mu > 0)[0].tolist())
    touched = [c for c in recurrent_classes(fc) if support & set(c)]
    return len(touched) == 1


def is_ergodic(fc, mu, cap: int = ENUMERATION_CAP, method: str = "enumerate") -> bool:
    """Every almost-invariant set has measure 0 or 1.

    ``method="enumerate"`` searches all subsets of the support (at most
    ``cap`` atoms) and cross-checks the recurrent-class criterion;
    ``"structural"`` uses the class criterion alone; ``"auto"`` enumerates
    when within the cap.
    """
    fc, mu = _as_fc(fc), _as_mu(mu)
    _check_dims(fc, mu)
    _require_invariant(fc, mu)
    n_support = int(np.count_nonzero(mu > 0))
    if method == "structural" or (method == "auto" and n_support > cap):
        return _ergodic_structural(fc, mu)
    if method not in ("enumerate", "auto"):
        raise ValidationError(f"unknown method {method!r}")
    if n_support > cap:
        raise CapExceededError(f"support has {n_support} atoms, enumeration cap is {cap}")
    enum = _ergodic_by_enumeration(fc, mu)
    if enum != _ergodic_structural(fc, mu):
        raise InconsistencyError("subset enumeration and recurrent-class deciders disagree on ergodicity")
    return enum


# ---------------------------------------------------------------------------
# mixing


def _restricted(fc: FiniteCorrespondence, mu: np.ndarray):
    support = np.nonzero(mu > 0)[0]
    A = koopman_matrix(fc)[np.ix_(support, support)]
    return support, A, mu[support]


def _support_period(fc: FiniteCorrespondence, support) -> int:
    s = set(int(x) for x in support)
    periods = [class_period(fc, c) for c in recurrent_classes(fc) if s & set(c)]
    return reduce(math.lcm, periods, 1)


def _spectral_mixing(A: np.ndarray) -> bool:
    """Only peripheral eigenvalue is a simple 1."""
    ev = np.linalg.eigvals(A)
    peripheral = ev[np.abs(ev) > 1 - SPECTRAL_TOL]
    return peripheral.size == 1 and abs(peripheral[0] - 1) < SPECTRAL_TOL


def _limit_window(fc, mu):
    """Powers A^n, n in [N, N+L), with L the lcm of class periods.

    Past the transient the power sequence is L-periodic, so this window
    carries every limit point of the correlation sequence.
    """
    support, A, w = _restricted(fc, mu)
    L = _support_period(fc, support)
    P = np.linalg.matrix_power(A, LIMIT_POWER)
    window = [P]
    for _ in range(L - 1):
        window.append(window[-1] @ A)
    return support, A, w, window


def _indicator_deviation(P: np.ndarray, w: np.ndarray) -> np.ndarray:
    """|I(chi_b, chi_a) - mu_a mu_b| for all a, b with I = mu_a (P)[a, b]."""
    return np.abs(w[:, None] * P - np.outer(w, w))


def _definitional(fc, mu) -> dict:
    support, A, w, window = _limit_window(fc, mu)
    devs = np.array([_indicator_deviation(P, w).max() for P in window])
    cesaro_limit = _indicator_deviation(sum(window) / len(window), w).max()
    return {
        "mixing": bool(devs.max() <= DEFINITIONAL_TOL),
        "weak_mixing": bool(devs.mean() <= DEFINITIONAL_TOL),
        "average_mixing": bool(cesaro_limit <= DEFINITIONAL_TOL),
        "period": len(window),
        "A": A,
        "w": w,
    }


def direct_indicator_series(fc, mu, horizon: int = DIRECT_HORIZON) -> np.ndarray:
    """max over indicator pairs of |I_j - target| and of the running Cesàro gap, for j < horizon.

    Returns an array of shape (horizon, 2): columns are the pointwise deviation
    and the deviation of the Cesàro mean.
    """
    fc, mu = _as_fc(fc), _as_mu(mu)
    support, A, w = _restricted(fc, mu)
    P = np.eye(A.shape[0])
    running = np.zeros_like(P)
    out = np.zeros((horizon, 2))
    for j in range(horizon):
        running += P
        out[j, 0] = _indicator_deviation(P, w).max()
        out[j, 1] = _indicator_deviation(running / (j + 1), w).max()
        P = P @ A
    return out


def _mixing_pair(fc, mu) -> tuple[bool, bool]:
    fc, mu = _as_fc(fc), _as_mu(mu)
    _check_dims(fc, mu)
    _require_invariant(fc, mu)
    support, A, _ = _restricted(fc, mu)
    spectral = _spectral_mixing(A)
    dfn = _definitional(fc, mu)
    if dfn["mixing"] != spectral or dfn["weak_mixing"] != spectral:
        raise InconsistencyError(
            f"spectral ({spectral}) and definitional (mixing={dfn['mixing']}, "
            f"weak={dfn['weak_mixing']}) deciders disagree"
        )
    return dfn["mixing"], dfn["weak_mixing"]


def is_mixing(fc, mu) -> bool:
    """I_n(phi, psi) -> I(phi) I(psi) for all indicator pairs on the support."""
    return _mixing_pair(fc, mu)[0]


def is_weak_mixing(fc, mu) -> bool:
    """Cesàro mean of |I_n - I(phi) I(psi)| -> 0 for all indicator pairs."""
    return _mixing_pair(fc, mu)[1]


def is_average_mixing(fc, mu) -> bool:
    """Cesàro mean of I_n -> I(phi) I(psi) for all indicator pairs."""
    fc, mu = _as_fc(fc), _as_mu(mu)
    _require_invariant(fc, mu)
    return _definitional(fc, mu)["average_mixing"]


# ---------------------------------------------------------------------------
# products


def kron_product(a, b, cap: int = KRON_CAP) -> FiniteCorrespondence:
    """Product correspondence; state (i1, i2) has index i1 * m_b + i2."""
    a, b = _as_fc(a), _as_fc(b)
    if a.m * b.m > cap:
        raise CapExceededError(f"product has {a.m * b.m} states, cap is {cap}")
    return FiniteCorrespondence(np.kron(a.M, b.M))


def check_product_invariance(a, b, mu_a, mu_b, n: int) -> float:
    """max |(M_x^n mu) - (d_a d_b)^n mu| / (d_a d_b)^n for mu = mu_a (x) mu_b."""
    a, b = _as_fc(a), _as_fc(b)
    mu_a, mu_b = _as_mu(mu_a), _as_mu(mu_b)
    _require_invariant(a, mu_a)
    _require_invariant(b, mu_b)
    if n < 0:
        raise ValidationError("n must be nonnegative")
    prod = kron_product(a, b)
    mu = np.kron(mu_a, mu_b)
    v = mu.copy()
    for _ in range(n):
        v = prod.M @ v / prod.d
    return float(np.max(np.abs(v - mu)))


def check_main_theorem(fc, mu) -> tuple[bool, bool, bool, bool]:
    """(weak mixing of F, ergodicity of F x F, weak mixing of F x F, all equal)."""
    fc, mu = _as_fc(fc), _as_mu(mu)
    wm = is_weak_mixing(fc, mu)
    prod = kron_product(fc, fc)
    mu2 = np.kron(mu, mu)
    p_erg = is_ergodic(prod, mu2, method="auto")
    p_wm = is_weak_mixing(prod, mu2)
    return wm, p_erg, p_wm, wm == p_erg == p_wm


def check_hierarchy(fc, mu) -> tuple[bool, bool, bool, bool]:
    """(mixing, weak mixing, ergodic, implications hold)."""
    fc, mu = _as_fc(fc), _as_mu(mu)
    mix, wm = _mixing_pair(fc, mu)
    erg = is_ergodic(fc, mu, method="auto")
    consistent = (not mix or wm) and (not wm or erg)
    return mix, wm, erg, consistent


def check_average_mixing_equivalence(fc, mu) -> bool:
    """Ergodicity agrees with Cesàro convergence of indicator correlations."""
    fc, mu = _as_fc(fc), _as_mu(mu)
    return is_ergodic(fc, mu, method="auto") == is_average_mixing(fc, mu)


def check_set_average_inequality(fc, mu, A: Iterable[int], B: Iterable[int], horizon: int) -> dict:
    """Cesàro averages of mu(F^j(A) & B) for j < horizon against mu(A) mu(B)."""
    fc, mu = _as_fc(fc), _as_mu(mu)
    _require_invariant(fc, mu)
    if horizon < 1:
        raise ValidationError("horizon must be >= 1")
    A, B = set(int(a) for a in A), set(int(b) for b in B)
    current = set(A)
    terms = []
    for _ in range(horizon):
        terms.append(float(sum(mu[i] for i in current & B)))
        current = forward_set(fc, current)
    means = np.cumsum(terms) / np.arange(1, horizon + 1)
    return {
        "terms": terms,
        "cesaro": means.tolist(),
        "limit": float(means[-1]),
        "product": float(sum(mu[i] for i in A) * sum(mu[i] for i in B)),
        "b_almost_invariant": is_almost_invariant(fc, mu, B),
    }


# ---------------------------------------------------------------------------
# random instances and persistence


def random_instance(
    rng: np.random.Generator,
    max_states: int = 5,
    max_degree: int = 4,
    full_support: bool = False,
    max_tries: int = 1000,
) -> tuple[FiniteCorrespondence, np.ndarray]:
    """A random valid correspondence with every state recurrent, and an invariant measure.

    The measure is a Dirichlet mixture over all extreme invariant measures
    (``full_support``) or over a random nonempty subset of them.
    """
    for _ in range(max_tries):
        m = int(rng.integers(1, max_states + 1))
        d = int(rng.integers(1, max_degree + 1))
        probs = rng.dirichlet(np.full(m, 0.5), size=m)
        M = np.stack([rng.multinomial(d, probs[j]) for j in range(m)], axis=1)
        if np.any(M.sum(axis=1) == 0):
            continue
        fc = FiniteCorrespondence(M)
        if sum(len(c) for c in recurrent_classes(fc)) != m:
            continue
        extremes = invariant_measures(fc)
        k = len(extremes)
        if full_support:
            chosen = np.arange(k)
        else:
            chosen = np.nonzero(rng.random(k) < 0.5)[0]
            if chosen.size == 0:
                chosen = np.array([rng.integers(k)])
        weights = rng.dirichlet(np.ones(chosen.size))
        mu = sum(wt * extremes[i].mu for wt, i in zip(weights, chosen))
        return fc, mu / mu.sum()
    raise ValidationError("could not draw a valid instance")


def random_instances(seed: int, count: int, **kwargs):
    rng = seeded_stream(seed, 0)
    return [random_instance(rng, **kwargs) for _ in range(count)]


def dumps_instance(fc, mu=None) -> str:
    fc = _as_fc(fc)
    lines = [f"m = {fc.m}", f"d = {fc.d}", "M ="]
    lines += [" ".join(str(int(x)) for x in row) for row in fc.M]
    if mu is not None:
        lines.append("mu = " + " ".join(repr(float(x)) for x in _as_mu(mu)))
    return "\n".join(lines) + "\n"


def loads_instance(text: str) -> tuple[FiniteCorrespondence, np.ndarray | None]:
    m = d = None
    rows: list[list[int]] = []
    mu = None
    in_matrix = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" in line:
            key, _, val = (s.strip() for s in line.partition("="))
            in_matrix = False
            try:
                if key == "m":
                    m = int(val)
                elif key == "d":
                    d = int(val)
                elif key == "M":
                    in_matrix = True
                    if val:
                        rows.append([int(x) for x in val.split()])
                elif key == "mu":
                    mu = np.array([float(x) for x in val.split()])
                else:
                    raise ValidationError(f"line {lineno}: unknown key {key!r}")
            except ValueError as exc:
                raise ValidationError(f"line {lineno}: {exc}") from None
        elif in_matrix:
            try:
                rows.append([int(x) for x in line.split()])
            except ValueError:
                raise ValidationError(f"line {lineno}: matrix entries must be integers") from None
        else:
            raise ValidationError(f"line {lineno}: unexpected content {line!r}")
    if m is None or not rows:
        raise ValidationError("instance needs m and M")
    if len(rows) != m or any(len(r) != m for r in rows):
        raise ValidationError(f"matrix must be {m}x{m}")
    fc = FiniteCorrespondence(np.array(rows))
    if d is not None and d != fc.d:
        raise ValidationError(f"declared d = {d} but columns sum to {fc.d}")
    if mu is not None:
        if mu.size != m:
            raise ValidationError(f"mu has length {mu.size}, expected {m}")
        mu = FiniteMeasure(mu).mu
    return fc, mu


def load_instance(path) -> tuple[FiniteCorrespondence, np.ndarray | None]:
    with open(path, encoding="utf-8") as fh:
        return loads_instance(fh.read())


def save_instance(path, fc, mu=None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps_instance(fc, mu))
