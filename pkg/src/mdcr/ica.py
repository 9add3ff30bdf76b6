"""Per-domain linear ICA with rank selection, plus an exact oracle stand-in."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from mdcr.graph import MdcrModel, mixing_matrix

# E[log cosh(nu)] for nu ~ N(0, 1)
GAUSS_LOGCOSH = 0.37456720749845


class IcaError(RuntimeError):
    pass


@dataclass(frozen=True)
class IcaOptions:
    gamma: float = 0.2
    restarts: int = 5
    tol: float = 1e-6
    max_iter: int = 200
    seed: int = 0
    rank_matrix: str = "cov"  # "cov": (1/n) X X^T, "gram": raw X X^T


@dataclass
class IcaResult:
    """Estimated mixing ``B_hat`` (d_e x s) and unit-variance source rows ``eta`` (s x n).

    ``labels`` is only set by :func:`oracle_ica`: for every source a pair
    ``(law key, sign)`` identifying its exact distribution.
    """

    B_hat: np.ndarray
    eta: np.ndarray | None
    labels: list[tuple[str, int]] | None = None
    contrasts: list[float] = field(default_factory=list)

    @property
    def num_sources(self) -> int:
        return self.B_hat.shape[1]


def rank_gamma(M: np.ndarray, gamma: float) -> int:
    """Number of singular values of ``M`` strictly above ``gamma``."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"rank_gamma needs a square matrix, got shape {M.shape}")
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return int(np.sum(np.linalg.svd(M, compute_uv=False) > gamma))


def estimate_num_sources(X: np.ndarray, gamma: float, rank_matrix: str = "cov") -> int:
    Xc = X - X.mean(axis=1, keepdims=True)
    if rank_matrix == "cov":
        M = Xc @ Xc.T / X.shape[1]
    elif rank_matrix == "gram":
        M = X @ X.T
    else:
        raise ValueError(f"rank_matrix must be 'cov' or 'gram', not {rank_matrix!r}")
    return rank_gamma(M, gamma)


def whiten(X: np.ndarray, s: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Center and project onto the top-``s`` principal subspace with unit covariance.

    Returns ``(Z, K, mean)`` with ``Z = K (X - mean)`` and ``K`` of shape s x d.
    """
    mean = X.mean(axis=1, keepdims=True)
    Xc = X - mean
    C = Xc @ Xc.T / X.shape[1]
    evals, evecs = np.linalg.eigh(C)
    idx = np.argsort(evals)[::-1][:s]
    if evals[idx[-1]] <= 0:
        raise IcaError("covariance has fewer than s positive eigenvalues")
    K = evecs[:, idx].T / np.sqrt(evals[idx])[:, None]
    Z = K @ Xc
    # a second pass removes the round-off left by the eigendecomposition
    C2 = Z @ Z.T / Z.shape[1]
    evals2, evecs2 = np.linalg.eigh(C2)
    K2 = (evecs2 / np.sqrt(evals2)) @ evecs2.T
    return K2 @ Z, K2 @ K, mean


def _logcosh_contrast(y: np.ndarray) -> float:
    return float((np.mean(np.logaddexp(y, -y) - np.log(2.0)) - GAUSS_LOGCOSH) ** 2)


def _one_unit(Z: np.ndarray, W_prev: np.ndarray, w: np.ndarray, tol: float, max_iter: int):
    """Fixed-point iterations for one unit, kept orthogonal to ``W_prev``."""
    n = Z.shape[1]

    def project(v):
        if len(W_prev):
            v = v - W_prev.T @ (W_prev @ v)
        return v / np.linalg.norm(v)

    w = project(w)
    for it in range(1, max_iter + 1):
        y = w @ Z
        gy = np.tanh(y)
        w_new = Z @ gy / n - np.mean(1.0 - gy**2) * w
        w_new = project(w_new)
        delta = 1.0 - abs(float(w_new @ w))
        w = w_new
        if delta < tol:
            return w, True, it
    return w, False, max_iter


def fastica_deflation(Z: np.ndarray, s: int, rng: np.random.Generator, restarts: int = 5,
                      tol: float = 1e-6, max_iter: int = 200) -> tuple[np.ndarray, list[float]]:
    """Deflationary log-cosh FastICA on whitened data ``Z`` (s x n).

    Each unit is started ``restarts`` times; the converged direction with the
    largest contrast is kept. Returns the orthogonal unmixing matrix and the
    contrast of every unit.
    """
    W = np.zeros((0, Z.shape[0]))
    contrasts = []
    for p in range(s):
        best = None
        failures = []
        for _ in range(max(restarts, 1)):
            w, ok, _ = _one_unit(Z, W, rng.standard_normal(Z.shape[0]), tol, max_iter)
            c = _logcosh_contrast(w @ Z)
            if not ok:
                failures.append(c)
                continue
            if best is None or c > best[1]:
                best = (w, c)
        if best is None:
            raise IcaError(f"unit {p} did not converge in {restarts} restarts; contrasts reached {failures}")
        W = np.vstack([W, best[0]])
        contrasts.append(best[1])
    # re-orthonormalize to clean accumulated round-off
    U, _, Vt = np.linalg.svd(W)
    return U @ Vt, contrasts


def pinv(M: np.ndarray) -> np.ndarray:
    return np.linalg.pinv(M, rcond=1e-10)


def fit_ica(X: np.ndarray, s: int, opts: IcaOptions = IcaOptions()) -> tuple[np.ndarray, np.ndarray, list[float]]:
    """Mixing ``B_tilde`` (d x s) and sources ``eta_tilde = pinv(B_tilde) X`` for ``s`` components."""
    X = np.asarray(X, dtype=float)
    d, n = X.shape
    if not 1 <= s <= d or n <= d:
        raise ValueError(f"need n > d >= s >= 1, got n={n}, d={d}, s={s}")
    s_max = estimate_num_sources(X, opts.gamma, opts.rank_matrix)
    if s > s_max:
        raise ValueError(f"s={s} exceeds the rank estimate {s_max} at gamma={opts.gamma}")
    rng = np.random.default_rng(opts.seed)
    Z, K, mean = whiten(X, s)
    W, contrasts = fastica_deflation(Z, s, rng, opts.restarts, opts.tol, opts.max_iter)
    B_tilde = pinv(W @ K)
    eta_tilde = pinv(B_tilde) @ (X - mean)
    return B_tilde, eta_tilde, contrasts


def normalize_unit_variance(B_tilde: np.ndarray, eta_tilde: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rescale so every source row has ``(1/n) sum eta_i^2 = 1``; ``B eta`` is unchanged."""
    n = eta_tilde.shape[1]
    delta = np.einsum("ij,ij->i", eta_tilde, eta_tilde) / n
    if np.any(delta <= 0):
        raise IcaError(f"source rows {np.flatnonzero(delta <= 0).tolist()} have zero variance")
    root = np.sqrt(delta)
    return B_tilde * root[None, :], eta_tilde / root[:, None]


def run_domain_ica(X: np.ndarray, opts: IcaOptions = IcaOptions()) -> IcaResult:
    """Rank selection, ICA, pseudoinverse sources and unit-variance scaling for one domain."""
    s = estimate_num_sources(X, opts.gamma, opts.rank_matrix)
    if s == 0:
        return IcaResult(np.zeros((X.shape[0], 0)), np.zeros((0, X.shape[1])))
    B_tilde, eta_tilde, contrasts = fit_ica(X, s, opts)
    B_hat, eta = normalize_unit_variance(B_tilde, eta_tilde)
    return IcaResult(B_hat, eta, contrasts=contrasts)


def signed_permutation(rng: np.random.Generator, p: int) -> tuple[np.ndarray, np.ndarray]:
    perm = rng.permutation(p)
    signs = rng.choice([-1.0, 1.0], size=p)
    return perm, signs


def oracle_ica(model: MdcrModel, e: int, rng: np.random.Generator | None = None) -> IcaResult:
    """Exact ICA output for domain ``e``: ``B^e R D`` with a random signed permutation.

    Column ``c`` of the result is ``signs[c] * B^e[:, perm[c]]`` and carries the
    label ``(key of that latent's law, signs[c])``. ``rng=None`` keeps the
    identity gauge.
    """
    g = model.graph
    src = g.domain_sources(e)
    Be = mixing_matrix(model)[np.ix_(g.domain_observed(e), src)]
    s = len(src)
    if rng is None:
        perm, signs = np.arange(s), np.ones(s)
    else:
        perm, signs = signed_permutation(rng, s)
    B_hat = Be[:, perm] * signs[None, :]
    labels = [(model.error_specs[src[p]].key, int(sg)) for p, sg in zip(perm, signs)]
    return IcaResult(B_hat, None, labels=labels)
