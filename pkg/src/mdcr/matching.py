"""Cross-domain matching of estimated source laws and assembly of the joint mixing matrix."""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from mdcr.ica import IcaResult


# -- Kolmogorov-Smirnov machinery ---------------------------------------------

def ks_distance(a: Sequence[float], b: Sequence[float]) -> float:
    """Sup distance between the empirical CDFs of ``a`` and ``b``."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("ks_distance needs two non-empty samples")
    x = np.concatenate([a, b])
    fa = np.searchsorted(a, x, side="right") / a.size
    fb = np.searchsorted(b, x, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


def ks_statistic(a: Sequence[float], b: Sequence[float]) -> float:
    na, nb = len(a), len(b)
    if na == 0 or nb == 0:
        raise ValueError("ks_statistic needs two non-empty samples")
    return math.sqrt(na * nb / (na + nb)) * ks_distance(a, b)


def kolmogorov_sf(t: float, terms: int = 200) -> float:
    """``P(sup |Brownian bridge| > t)`` from the alternating series."""
    if t <= 0:
        return 1.0
    k = np.arange(1, terms + 1)
    return float(2.0 * np.sum((-1.0) ** (k - 1) * np.exp(-2.0 * k**2 * t**2)))


def kolmogorov_critical(alpha: float) -> float:
    """Upper ``alpha`` quantile of the Kolmogorov distribution."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    # the truncated series is inaccurate below t ~ 0.2, where sf is 1 to machine precision
    return brentq(lambda t: kolmogorov_sf(t) - alpha, 0.2, 10.0, xtol=1e-12)


def bonferroni_level(alpha: float, source_counts: Sequence[int]) -> float:
    """``alpha / t`` with ``t = 2 sum_{e<f} s_e s_f`` tests."""
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    t = 2 * sum(a * b for a, b in itertools.combinations(source_counts, 2))
    if t == 0:
        raise ValueError("no cross-domain tests: need at least two domains with sources")
    return alpha / t


def false_discovery_bound(n_min: int, n_max: int, kappa: float, c_alpha: float, num_wrong: int) -> float:
    """Upper bound on the probability that a tuple with ``num_wrong`` wrongly matched components is accepted.

    Uses the DKW rate ``g(n, x) = 2 exp(-2 n x^2)``; clamped to 1.
    """
    if kappa <= 0 or num_wrong < 2:
        raise ValueError("need kappa > 0 and at least two wrongly matched components")
    x = max(kappa / 2 - math.sqrt(n_max) / (math.sqrt(2) * n_min) * c_alpha, 0.0)
    g = 2.0 * math.exp(-2.0 * n_min * x * x)
    return min(g ** (num_wrong - 1), 1.0)


# -- matching -------------------------------------------------------------------

@dataclass(frozen=True)
class MatchDecision:
    e: int
    f: int
    i: int
    j: int
    T: float
    sign: int
    matched: bool


@dataclass
class MatchTable:
    """Statistic and sign matrices for every domain pair ``e < f``."""

    T: dict[tuple[int, int], np.ndarray]
    sign: dict[tuple[int, int], np.ndarray]
    matched: dict[tuple[int, int], np.ndarray]
    critical: float
    num_domains: int

    def decisions(self) -> list[MatchDecision]:
        out = []
        for (e, f), T in sorted(self.T.items()):
            for i, j in itertools.product(range(T.shape[0]), range(T.shape[1])):
                out.append(MatchDecision(e, f, i, j, float(T[i, j]), int(self.sign[e, f][i, j]),
                                         bool(self.matched[e, f][i, j])))
        return out

    def pair(self, e: int, f: int, i: int, j: int) -> tuple[bool, int, float]:
        """Matched flag, sign and statistic for source ``i`` of ``e`` and ``j`` of ``f``."""
        if e < f:
            return bool(self.matched[e, f][i, j]), int(self.sign[e, f][i, j]), float(self.T[e, f][i, j])
        return bool(self.matched[f, e][j, i]), int(self.sign[f, e][j, i]), float(self.T[f, e][j, i])


def write_match_table(table: MatchTable, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["e", "f", "i", "j", "T", "sign", "matched"])
        for d in table.decisions():
            w.writerow([d.e + 1, d.f + 1, d.i + 1, d.j + 1, repr(d.T), d.sign, int(d.matched)])


def omega(T: np.ndarray, critical: float) -> np.ndarray:
    """Matched entries: below the critical value and minimal in their row and column.

    Ties go to the lowest index.
    """
    M = np.zeros(T.shape, dtype=bool)
    if T.size == 0:
        return M
    row_arg = np.argmin(T, axis=1)
    col_arg = np.argmin(T, axis=0)
    for i, j in enumerate(row_arg):
        if col_arg[j] == i and T[i, j] <= critical:
            M[i, j] = True
    return M


def _ks_pair_table(Pe: np.ndarray, Pf: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    T = np.zeros((len(Pe), len(Pf)))
    S = np.ones((len(Pe), len(Pf)), dtype=int)
    for i, a in enumerate(Pe):
        for j, b in enumerate(Pf):
            t_pos, t_neg = ks_statistic(a, b), ks_statistic(a, -b)
            T[i, j] = min(t_pos, t_neg)
            S[i, j] = 1 if t_pos <= t_neg else -1
    return T, S


def _exact_pair_table(le, lf) -> tuple[np.ndarray, np.ndarray]:
    # zero distance iff the same law; the relative sign undoes the oracle's flips
    T = np.ones((len(le), len(lf)))
    S = np.ones((len(le), len(lf)), dtype=int)
    for i, (ka, sa) in enumerate(le):
        for j, (kb, sb) in enumerate(lf):
            if ka == kb:
                T[i, j] = 0.0
                S[i, j] = sa * sb
    return T, S


def match_domains(results: Sequence[IcaResult], alpha: float = 0.05, correction: str = "bonferroni") -> MatchTable:
    """Pairwise sign-minimized KS statistics and the resulting matches.

    Results produced by :func:`mdcr.ica.oracle_ica` carry exact labels and are
    matched on zero distance instead.
    """
    m = len(results)
    if m < 2:
        raise ValueError("matching needs at least two domains")
    exact = all(r.labels is not None for r in results)
    if exact:
        critical = 0.0
    else:
        counts = [r.num_sources for r in results]
        if correction == "bonferroni":
            level = bonferroni_level(alpha, counts)
        elif correction == "none":
            level = alpha
        else:
            raise ValueError(f"unknown correction {correction!r}")
        critical = kolmogorov_critical(level)
    Ts, Ss, Ms = {}, {}, {}
    for e, f in itertools.combinations(range(m), 2):
        if exact:
            T, S = _exact_pair_table(results[e].labels, results[f].labels)
        else:
            T, S = _ks_pair_table(results[e].eta, results[f].eta)
        Ts[e, f], Ss[e, f], Ms[e, f] = T, S, omega(T, critical)
    return MatchTable(Ts, Ss, Ms, critical, m)


@dataclass(frozen=True)
class SharedTuple:
    """One discovered shared latent: a source index and a sign per domain.

    ``signs[e]`` orients source ``indices[e]`` of domain ``e`` so that all
    domains agree with the first domain.
    """

    indices: tuple[int, ...]
    signs: tuple[int, ...]
    total_statistic: float


def discover_shared(table: MatchTable) -> list[SharedTuple]:
    """Maximal set of disjoint, fully matched and sign-consistent tuples.

    Candidates are grown domain by domain along matched pairs and accepted
    greedily by ascending total statistic.
    """
    m = table.num_domains
    sizes = [table.T[0, 1].shape[0]] + [table.T[0, f].shape[1] for f in range(1, m)]
    candidates: list[SharedTuple] = []

    def grow(prefix: list[int]):
        f = len(prefix)
        if f == m:
            signs = [1] + [table.pair(0, g, prefix[0], prefix[g])[1] for g in range(1, m)]
            total = 0.0
            for e, g in itertools.combinations(range(m), 2):
                _, s, t = table.pair(e, g, prefix[e], prefix[g])
                if s != signs[e] * signs[g]:
                    return
                total += t
            candidates.append(SharedTuple(tuple(prefix), tuple(signs), total))
            return
        for j in range(sizes[f]):
            if all(table.pair(e, f, prefix[e], j)[0] for e in range(f)):
                grow(prefix + [j])

    grow([])
    candidates.sort(key=lambda c: (c.total_statistic, c.indices))
    used = [set() for _ in range(m)]
    accepted = []
    for c in candidates:
        if all(c.indices[e] not in used[e] for e in range(m)):
            accepted.append(c)
            for e in range(m):
                used[e].add(c.indices[e])
    return accepted


@dataclass
class SharedAssembly:
    """``B_hat`` with shared columns first, then one block per domain.

    ``measures`` lists, per column, the source samples after sign alignment
    (the shared ones taken from the first domain), or the exact label for
    oracle input.
    """

    ell_hat: int
    B_hat: np.ndarray
    column_domain: list[int | None]
    column_source: list[dict[int, int]]
    measures: list
    orders: list[np.ndarray]
    signs: list[np.ndarray]

    @property
    def B_shared(self) -> np.ndarray:
        return self.B_hat[:, : self.ell_hat]


def assemble_joint(results: Sequence[IcaResult], tuples: Sequence[SharedTuple]) -> SharedAssembly:
    """Signed-permute each domain so shared sources lead, then stack block-wise."""
    m = len(results)
    for t in tuples:
        if len(t.indices) != m or len(t.signs) != m:
            raise ValueError("tuple length does not match the number of domains")
    for e in range(m):
        idx = [t.indices[e] for t in tuples]
        if len(set(idx)) != len(idx):
            raise ValueError(f"tuples reuse a source of domain {e}")
    ell = len(tuples)
    dims = [r.B_hat.shape[0] for r in results]
    own = [[c for c in range(r.num_sources) if c not in {t.indices[e] for t in tuples}] for e, r in enumerate(results)]
    h_hat = ell + sum(len(o) for o in own)
    B = np.zeros((sum(dims), h_hat))
    column_domain: list[int | None] = [None] * ell
    column_source: list[dict[int, int]] = [dict(enumerate(t.indices)) for t in tuples]
    orders, signs = [], []
    row = 0
    col = ell
    for e, r in enumerate(results):
        order = np.array([t.indices[e] for t in tuples] + own[e], dtype=int)
        sg = np.array([t.signs[e] for t in tuples] + [1] * len(own[e]), dtype=float)
        orders.append(order)
        signs.append(sg)
        Bq = r.B_hat[:, order] * sg[None, :] if len(order) else r.B_hat[:, :0]
        B[row:row + dims[e], :ell] = Bq[:, :ell]
        B[row:row + dims[e], col:col + len(own[e])] = Bq[:, ell:]
        column_domain += [e] * len(own[e])
        column_source += [{e: c} for c in own[e]]
        row += dims[e]
        col += len(own[e])

    measures = []
    for c in range(h_hat):
        e0 = 0 if c < ell else column_domain[c]
        src = column_source[c][e0]
        sign = tuples[c].signs[e0] if c < ell else 1
        r = results[e0]
        if r.eta is not None:
            measures.append(sign * r.eta[src])
        else:
            key, s = r.labels[src]
            measures.append((key, s * sign))
    return SharedAssembly(ell, B, column_domain, column_source, measures, orders, signs)
