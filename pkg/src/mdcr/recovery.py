"""Recover the shared latent graph from the shared columns of ``B_hat``."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

EXACT_RTOL = 1e-10


class RecoveryError(RuntimeError):
    pass


def drop_zero_rows(B: np.ndarray, gamma: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Remove rows with Euclidean norm ``<= gamma``; also return the kept row indices."""
    B = np.asarray(B, dtype=float)
    keep = np.flatnonzero(np.linalg.norm(B, axis=1) > gamma)
    if keep.size == 0:
        raise RecoveryError("every row was removed as a zero row")
    return B[keep], keep


def _singular_values(M: np.ndarray) -> np.ndarray:
    return np.linalg.svd(M, compute_uv=False)


def pair_score(rows: np.ndarray) -> float:
    """Smallest singular value of a 2 x ell block (0 when ell = 1)."""
    sv = _singular_values(rows)
    return float(sv[1]) if sv.size > 1 else 0.0


def exact_rank_one(rows: np.ndarray) -> bool:
    sv = _singular_values(rows)
    return sv.size < 2 or sv[1] <= EXACT_RTOL * sv[0]


@dataclass
class PureChildAssignment:
    """Pairs ``(i_k, j_k)`` of row indices (into the input ``B*``) and their scores.

    ``representatives`` are the ``i_k``; they index the rows of the square block
    used for triangularization.
    """

    pairs: list[tuple[int, int]]
    scores: list[float]

    @property
    def representatives(self) -> list[int]:
        return [i for i, _ in self.pairs]


def find_pure_pairs(
    B: np.ndarray,
    ell: int,
    gamma: float = 0.2,
    exact: bool = False,
    row_domains: np.ndarray | None = None,
) -> PureChildAssignment:
    """Locate one pair of partial pure children per shared latent.

    ``B`` must already be free of zero rows. ``row_domains`` (domain of each
    row) is used to prefer cross-domain pairs among equal scores.
    """
    B = np.asarray(B, dtype=float)
    nrows = B.shape[0]
    if ell < 1:
        raise RecoveryError("ell must be at least 1")
    if nrows < 2 * ell:
        raise RecoveryError(f"{nrows} rows cannot hold {ell} disjoint pairs")
    doms = np.zeros(nrows, dtype=int) if row_domains is None else np.asarray(row_domains)
    norms = np.linalg.norm(B, axis=1)

    if exact:
        return _exact_pairs(B, ell, doms, norms)

    scored = []
    for i, j in itertools.combinations(range(nrows), 2):
        scored.append((pair_score(B[[i, j]]), doms[i] == doms[j], i, j))
    scored.sort()
    pairs, scores = [], []
    used: set[int] = set()
    for score, _, i, j in scored:
        if i in used or j in used:
            continue
        rep = i if norms[i] >= norms[j] else j
        if all(pair_score(B[[rep, r]]) > gamma for r, _ in pairs):
            pairs.append((rep, j if rep == i else i))
            scores.append(score)
            used.update((i, j))
            if len(pairs) == ell:
                return PureChildAssignment(pairs, scores)
    raise RecoveryError(f"found only {len(pairs)} of {ell} pure-child pairs")


def _exact_pairs(B, ell, doms, norms) -> PureChildAssignment:
    # rank-one relation is an equivalence on rows under rank faithfulness
    nrows = B.shape[0]
    classes: list[list[int]] = []
    for r in range(nrows):
        for cls in classes:
            if exact_rank_one(B[[cls[0], r]]):
                cls.append(r)
                break
        else:
            classes.append([r])
    classes = [c for c in classes if len(c) >= 2]
    if len(classes) != ell:
        raise RecoveryError(f"rank-one classes: found {len(classes)}, expected {ell}")
    pairs = []
    for cls in classes:
        cross = [(a, b) for a, b in itertools.combinations(cls, 2) if doms[a] != doms[b]]
        a, b = cross[0] if cross else (cls[0], cls[1])
        pairs.append((a, b) if norms[a] >= norms[b] else (b, a))
    reps = [p[0] for p in pairs]
    for a, b in itertools.combinations(reps, 2):
        if exact_rank_one(B[[a, b]]):
            raise RecoveryError(f"representatives {a} and {b} share a parent")
    return PureChildAssignment(pairs, [pair_score(B[list(p)]) for p in pairs])


def upper_mass(W: np.ndarray) -> float:
    """``sum_{i<j} W_ij^2``."""
    return float(np.sum(np.triu(W, 1) ** 2))


def triangularize(M: np.ndarray, exact: bool = False) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Row order ``r`` and column order ``c`` making ``W = M[r][:, c]`` closest to lower triangular.

    Dynamic programming over (rows placed, columns placed) subsets gives the
    global minimum of the strictly-upper mass. ``R1 = I[r]`` and ``R2 = I[:, c]``
    in matrix form.
    """
    M = np.asarray(M, dtype=float)
    p = M.shape[0]
    if M.shape != (p, p):
        raise ValueError("triangularize needs a square matrix")
    sq = M**2
    full = (1 << p) - 1
    # best[(rows, cols)] = (cost, row order, col order)
    best: dict[tuple[int, int], tuple[float, tuple, tuple]] = {(0, 0): (0.0, (), ())}
    for _ in range(p):
        nxt: dict[tuple[int, int], tuple[float, tuple, tuple]] = {}
        for (rows, cols), (cost, ro, co) in sorted(best.items()):
            free_cols = [c for c in range(p) if not cols >> c & 1]
            for r in range(p):
                if rows >> r & 1:
                    continue
                row_total = sum(sq[r, c] for c in free_cols)
                for c in free_cols:
                    # entries of row r in columns still to be placed to the right
                    new = cost + row_total - sq[r, c]
                    key = (rows | 1 << r, cols | 1 << c)
                    cand = (new, ro + (r,), co + (c,))
                    if key not in nxt or cand < nxt[key]:
                        nxt[key] = cand
        best = nxt
    cost, ro, co = best[full, full]
    r, c = np.array(ro, dtype=int), np.array(co, dtype=int)
    W = M[np.ix_(r, c)]
    if exact:
        scale = np.max(np.abs(M)) if M.size else 0.0
        if np.any(np.abs(np.triu(W, 1)) > EXACT_RTOL * scale) or np.any(np.abs(np.diag(W)) <= EXACT_RTOL * scale):
            raise RecoveryError("no row/column permutation makes the block lower triangular")
    return r, c, W


def recover_A(W: np.ndarray) -> np.ndarray:
    """Fix column signs, scale rows to unit diagonal and return ``I - W'^{-1}``.

    The strictly upper part of ``W`` is dropped first, so the result is strictly
    lower triangular.
    """
    W = np.tril(np.asarray(W, dtype=float))
    diag = np.diag(W)
    if np.any(diag == 0):
        raise RecoveryError("zero on the diagonal of the triangularized block")
    W_tilde = W * np.sign(diag)[None, :]
    W_prime = W_tilde / np.diag(W_tilde)[:, None]
    p = W.shape[0]
    inv = solve_triangular(W_prime, np.eye(p), lower=True, unit_diagonal=True)
    A_hat = np.eye(p) - inv
    np.fill_diagonal(A_hat, 0.0)
    return A_hat


def edges_from_A(A_hat: np.ndarray, threshold: float = 0.0) -> list[tuple[int, int]]:
    """Edges ``j -> i`` (as ``(j, i)``) wherever ``|A_hat[i, j]| > threshold``."""
    rows, cols = np.nonzero(np.abs(A_hat) > threshold)
    return sorted((int(j), int(i)) for i, j in zip(rows, cols) if i != j)


@dataclass
class RecoveredLatentModel:
    """``A_hat`` indexed by recovered order: node ``q`` is shared column ``order[q]`` of ``B_hat``."""

    A_hat: np.ndarray
    edges: list[tuple[int, int]]
    row_order: np.ndarray
    order: np.ndarray
    pairs: PureChildAssignment
    kept_rows: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "ell_hat": int(self.A_hat.shape[0]),
            "A_hat": self.A_hat.tolist(),
            "edges": [[int(a), int(b)] for a, b in self.edges],
            "order_permutation": [int(c) for c in self.order],
            "diagnostics": self.diagnostics,
        }


def recover_shared_graph(
    B_shared: np.ndarray,
    gamma: float = 0.2,
    exact: bool = False,
    edge_threshold: float | None = None,
    row_domains: np.ndarray | None = None,
) -> RecoveredLatentModel:
    """Full pipeline from ``B*`` (|V| x ell) to ``A_hat`` and its edge set.

    ``exact=True`` runs the noiseless variant: only exactly zero rows are
    dropped and ranks are decided with a relative tolerance.
    """
    B_shared = np.asarray(B_shared, dtype=float)
    ell = B_shared.shape[1]
    Bk, kept = drop_zero_rows(B_shared, 0.0 if exact else gamma)
    doms = None if row_domains is None else np.asarray(row_domains)[kept]
    pairs = find_pure_pairs(Bk, ell, gamma, exact, doms)
    block = Bk[pairs.representatives]
    r, c, W = triangularize(block, exact)
    A_hat = recover_A(W)
    tau = (0.0 if exact else gamma) if edge_threshold is None else edge_threshold
    edges = edges_from_A(A_hat, tau)
    pairs_global = PureChildAssignment([(int(kept[a]), int(kept[b])) for a, b in pairs.pairs], pairs.scores)
    diagnostics = {
        "upper_mass": upper_mass(W),
        "pair_scores": [float(s) for s in pairs.scores],
        "pure_pairs": [list(p) for p in pairs_global.pairs],
        "dropped_rows": int(B_shared.shape[0] - kept.size),
    }
    rows = np.array(pairs_global.representatives)[r]
    return RecoveredLatentModel(A_hat, edges, rows, c, pairs_global, kept, diagnostics)
