"""Scores, enumeration helpers and non-identifiability constructions."""

from __future__ import annotations

import dataclasses
import itertools
from typing import Iterator, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from mdcr.graph import MDomainGraph, MdcrModel, mixing_matrix

ENUMERATION_CAP = 8


def signed_permutations(p: int) -> Iterator[tuple[tuple[int, ...], tuple[int, ...]]]:
    """All ``(perm, signs)`` pairs in lexicographic order."""
    for perm in itertools.permutations(range(p)):
        for signs in itertools.product((-1, 1), repeat=p):
            yield perm, signs


def signed_permutation_matrix(perm: Sequence[int], signs: Sequence[int] | None = None) -> np.ndarray:
    """``Q`` with ``Q e_i = signs[i] e_{perm[i]}``, so ``(Q^T M Q)_ij = s_i s_j M[perm[i], perm[j]]``."""
    p = len(perm)
    Q = np.zeros((p, p))
    s = np.ones(p) if signs is None else np.asarray(signs, dtype=float)
    Q[np.asarray(perm), np.arange(p)] = s
    return Q


def linear_extensions(p: int, edges: Sequence[tuple[int, int]]) -> list[tuple[int, ...]]:
    """Every ``sigma`` (as a position map) with ``sigma[i] < sigma[j]`` for all edges ``i -> j``, sorted."""
    preds = [set() for _ in range(p)]
    for a, b in edges:
        if a == b:
            raise ValueError(f"cycle detected: self loop at {a}")
        preds[b].add(a)
    orders: list[tuple[int, ...]] = []

    def extend(prefix: list[int], placed: set[int]):
        if len(prefix) == p:
            orders.append(tuple(prefix))
            return
        for u in range(p):
            if u not in placed and preds[u] <= placed:
                prefix.append(u)
                placed.add(u)
                extend(prefix, placed)
                placed.discard(u)
                prefix.pop()

    extend([], set())
    if p and not orders:
        raise ValueError("cycle detected: no topological order exists")
    sigmas = []
    for o in orders:
        sigma = [0] * p
        for pos, u in enumerate(o):
            sigma[u] = pos
        sigmas.append(tuple(sigma))
    return sorted(sigmas)


def _column_cost(B_hat: np.ndarray, B: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Squared distance between every column pair under the better sign, and that sign."""
    pos = ((B_hat[:, :, None] - B[:, None, :]) ** 2).sum(axis=0)
    neg = ((B_hat[:, :, None] + B[:, None, :]) ** 2).sum(axis=0)
    return np.minimum(pos, neg), np.where(pos <= neg, 1, -1)


def score_B(B_hat: np.ndarray, B: np.ndarray, approx: bool = False) -> float:
    """Normalized Frobenius error of the shared columns up to a signed permutation.

    Shapes are |V| x ell_hat and |V| x ell. When the counts differ only the
    ``min(ell, ell_hat)`` best-aligned columns enter. The minimization is an
    exact linear assignment because the signed-permutation objective separates
    over column pairs. Column counts above :data:`ENUMERATION_CAP` are refused
    unless ``approx`` is set, matching the enumeration-based definition.
    """
    B_hat = np.asarray(B_hat, dtype=float)
    B = np.asarray(B, dtype=float)
    if B_hat.shape[0] != B.shape[0]:
        raise ValueError("row counts differ")
    k = min(B_hat.shape[1], B.shape[1])
    if k == 0:
        raise ValueError("score_B needs at least one column on each side")
    if max(B_hat.shape[1], B.shape[1]) > ENUMERATION_CAP and not approx:
        raise ValueError(f"column count exceeds the enumeration cap {ENUMERATION_CAP}; pass approx=True")
    cost, _ = _column_cost(B_hat, B)
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(cost[rows, cols].sum() / (k * B.shape[0])))


def score_B_bruteforce(B_hat: np.ndarray, B: np.ndarray) -> float:
    """Literal two-case definition, enumerating every signed permutation."""
    ell_hat, ell = B_hat.shape[1], B.shape[1]
    beta = min(ell, ell_hat) * B.shape[0]
    best = np.inf
    for perm, signs in signed_permutations(max(ell, ell_hat)):
        Q = signed_permutation_matrix(perm, signs)
        if ell_hat <= ell:
            val = np.linalg.norm(B_hat - (B @ Q)[:, :ell_hat])
        else:
            val = np.linalg.norm((B_hat @ Q)[:, :ell] - B)
        best = min(best, val)
    return float(best / np.sqrt(beta))


def score_A(
    A_hat: np.ndarray,
    A: np.ndarray,
    shared_edges: Sequence[tuple[int, int]],
    signed: bool = True,
    return_argmin: bool = False,
):
    """``min (1/ell) || Q^T A_hat Q - A ||_F`` over (signed) permutations ``Q`` consistent with the true DAG.

    ``Q`` ranges over matrices mapping true node ``i`` to recovered node
    ``sigma[i]``, where ``sigma`` is a linear extension of the true shared graph.
    """
    A_hat = np.asarray(A_hat, dtype=float)
    A = np.asarray(A, dtype=float)
    p = A.shape[0]
    if A_hat.shape != (p, p):
        raise ValueError("A_hat and A must have the same shape")
    if p > ENUMERATION_CAP:
        raise ValueError(f"ell={p} exceeds the enumeration cap {ENUMERATION_CAP}")
    if p == 0:
        return (0.0, (), ()) if return_argmin else 0.0
    sign_sets = np.array(list(itertools.product((1.0, -1.0), repeat=p))) if signed else np.ones((1, p))
    outer = sign_sets[:, :, None] * sign_sets[:, None, :]
    best = (np.inf, None, None)
    for sigma in linear_extensions(p, shared_edges):
        s = np.asarray(sigma)
        relabeled = A_hat[np.ix_(s, s)]
        vals = np.sqrt(((outer * relabeled[None] - A[None]) ** 2).sum(axis=(1, 2))) / p
        k = int(np.argmin(vals))
        if vals[k] < best[0]:
            best = (float(vals[k]), sigma, tuple(int(x) for x in sign_sets[k]))
    return best if return_argmin else best[0]


def block_signed_permutation_fit(B_hat: np.ndarray, B: np.ndarray, blocks: Sequence[Sequence[int]], tol: float = 1e-9):
    """Search each column block for a signed permutation with ``B_hat[:, blk] = B[:, blk] Psi``.

    Returns the per-block ``(perm, signs)`` or ``None`` when some block has no
    fit within ``tol`` (max abs entry). Exhaustive within each block.
    """
    if B_hat.shape != B.shape:
        return None
    fits = []
    for blk in blocks:
        blk = list(blk)
        if len(blk) > ENUMERATION_CAP:
            raise ValueError("block exceeds the enumeration cap")
        target, source = B_hat[:, blk], B[:, blk]
        found = None
        for perm, signs in signed_permutations(len(blk)):
            cand = source[:, list(perm)] * np.asarray(signs)[None, :]
            if np.max(np.abs(cand - target), initial=0.0) <= tol:
                found = (perm, signs)
                break
        if found is None:
            return None
        fits.append(found)
    return fits


def model_blocks(g: MDomainGraph) -> list[list[int]]:
    return [list(g.shared)] + [list(g.domain_latents(e)) for e in range(g.num_domains)]


# -- Gaussian non-identifiability ----------------------------------------------

def pivoted_cholesky(S: np.ndarray, rtol: float = 1e-9) -> tuple[np.ndarray, np.ndarray]:
    """Rank-revealing Cholesky with diagonal pivoting: ``S = T T^T`` for psd ``S``.

    Returns ``(T, order)`` with ``T`` of shape ``d x r``; ``T[order]`` is lower
    trapezoidal. Stops once the largest remaining pivot is below ``rtol`` times
    the largest diagonal entry.
    """
    S = np.asarray(S, dtype=float)
    d = S.shape[0]
    residual = np.diag(S).copy()
    tol = rtol * max(float(np.max(residual, initial=0.0)), 0.0)
    cols: list[np.ndarray] = []
    order: list[int] = []
    for _ in range(d):
        remaining = [i for i in range(d) if i not in order]
        j = max(remaining, key=lambda i: residual[i])
        if residual[j] <= tol:
            break
        prev = np.column_stack(cols) if cols else np.zeros((d, 0))
        col = (S[:, j] - prev @ prev[j]) / np.sqrt(residual[j])
        col[order] = 0.0
        cols.append(col)
        order.append(j)
        residual -= col ** 2
    T = np.column_stack(cols) if cols else np.zeros((d, 0))
    rest = [i for i in range(d) if i not in order]
    return T, np.array(order + rest, dtype=int)


def gaussian_counterexample(Sigma: np.ndarray, Xi: np.ndarray) -> np.ndarray:
    """``G`` (d x p) with ``Sigma = G Xi G^T`` for psd ``Sigma`` of rank p and pd ``Xi``."""
    Sigma = np.asarray(Sigma, dtype=float)
    Xi = np.asarray(Xi, dtype=float)
    p = Xi.shape[0]
    if Xi.shape != (p, p) or Sigma.shape[0] != Sigma.shape[1]:
        raise ValueError("Sigma and Xi must be square")
    try:
        L = np.linalg.cholesky(Xi)
    except np.linalg.LinAlgError as exc:
        raise ValueError("Xi is not positive definite") from exc
    T, _ = pivoted_cholesky(Sigma)
    if T.shape[1] != p:
        raise ValueError(f"Sigma has rank {T.shape[1]}, expected {p}")
    return np.linalg.solve(L.T, T.T).T  # T L^{-1}


def gaussian_shared_vs_private_pair(rng: np.random.Generator, dims: tuple[int, int] = (3, 3), Xi: np.ndarray | None = None):
    """Two Gaussian two-domain models with the same per-domain covariances.

    The first shares one latent between the domains (latents 1, 2 feed domain
    1; latents 2, 3 feed domain 2). The second gives each domain two private
    latents with covariance ``Xi`` (identity by default) and loadings built by
    :func:`gaussian_counterexample`. Returns ``(Sigmas, shared_loadings,
    private_loadings)``.
    """
    Xi = np.eye(2) if Xi is None else np.asarray(Xi, dtype=float)
    loadings = [rng.uniform(0.25, 1, (d, 2)) * rng.choice([-1, 1], (d, 2)) for d in dims]
    Sigmas = [G @ G.T for G in loadings]
    private = [gaussian_counterexample(S, Xi) for S in Sigmas]
    return Sigmas, loadings, private


# -- necessary-condition fixtures -----------------------------------------------

def swap_construction(model: MdcrModel, i: int, j: int, e: int) -> tuple[np.ndarray, np.ndarray]:
    """Joint mixing of ``model`` and of its twin with latents ``i``, ``j`` swapped on domain ``e``.

    Both twins induce identical marginals in every domain whenever the laws of
    ``i`` and ``j`` agree, yet their joint mixing matrices differ by more than a
    signed permutation.
    """
    B = mixing_matrix(model)
    B_twin = B.copy()
    rows = list(model.graph.domain_observed(e))
    B_twin[np.ix_(rows, [i, j])] = B[np.ix_(rows, [j, i])]
    return B, B_twin


def merge_construction(model: MdcrModel, private: Sequence[int]) -> MdcrModel:
    """Twin model where one private latent per domain becomes a single new shared latent.

    ``private[e]`` must belong to ``I_e``. The twin has ``ell + 1`` shared
    latents; with equal laws on the merged latents both models have the same
    per-domain marginals.
    """
    g = model.graph
    m = g.num_domains
    if len(private) != m or any(g.block_of_latent(u) != e for e, u in enumerate(private)):
        raise ValueError("need one private latent from each domain")
    if any(model.A[u].any() or model.A[:, u].any() for u in private):
        raise ValueError("merged latents must be isolated in the latent graph")
    old = list(g.shared) + [private[0]]
    for e in range(m):
        old += [u for u in g.domain_latents(e) if u != private[e]]
    new_of = {u: idx for idx, u in enumerate(old)}
    for u in private[1:]:
        new_of[u] = g.num_shared
    h_new = len(old)
    sizes = tuple(s - 1 for s in g.domain_latent_sizes)
    latent_edges = tuple((new_of[a], new_of[b]) for a, b in g.latent_edges)
    obs_edges = tuple((new_of[k], v) for k, v in g.obs_edges)
    g_new = MDomainGraph(m, g.num_shared + 1, sizes, g.observed_dims, latent_edges, obs_edges)
    A = np.zeros((h_new, h_new))
    G = np.zeros((g.num_observed, h_new))
    for a, b in g.latent_edges:
        A[new_of[b], new_of[a]] = model.A[b, a]
    for k, v in g.obs_edges:
        G[v, new_of[k]] = model.G[v, k]
    specs = [None] * h_new
    for u, idx in new_of.items():
        if specs[idx] is None and model.error_specs:
            specs[idx] = model.error_specs[u]
    return MdcrModel(g_new, A, G, tuple(specs) if model.error_specs else ())


def with_error_specs(model: MdcrModel, specs) -> MdcrModel:
    return dataclasses.replace(model, error_specs=tuple(specs))
