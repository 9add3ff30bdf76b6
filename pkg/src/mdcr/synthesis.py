"""Random MDCR models and unpaired per-domain samples."""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import structural_rank

from mdcr.distributions import (
    DEFAULT_TABLE,
    DUPLICATE_TABLE,
    ErrorSpec,
    default_error_specs,
    standardized_sample,
)
from mdcr.graph import (
    MDomainGraph,
    MdcrModel,
    has_pure_child_pairs,
    latent_inverse,
    mixing_matrix,
    partial_pure_children,
    validate_graph,
)

MAX_RETRIES = 100
ERROR_TABLES = {"default": DEFAULT_TABLE, "duplicate": DUPLICATE_TABLE}


class ConfigError(ValueError):
    """Invalid configuration; ``key`` names the offending field when known."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


class GenerationError(RuntimeError):
    pass


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Generator for the stream identified by ``(seed, *keys)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


@dataclass(frozen=True)
class GenConfig:
    m: int = 2
    ell: int = 3
    domain_latent_sizes: tuple[int, ...] | int = 2
    d: int = 30
    p_latent: float = 0.75
    p_obs: float = 0.9
    weight_low: float = 0.25
    weight_high: float = 1.0
    n: int = 25000
    seed: int = 0
    error_table: str = "default"
    pure_children: bool = True

    def __post_init__(self):
        sizes = self.domain_latent_sizes
        if isinstance(sizes, int):
            sizes = (sizes,) * max(self.m, 0)
        object.__setattr__(self, "domain_latent_sizes", tuple(int(s) for s in sizes))
        self.validate()

    def validate(self) -> None:
        if not isinstance(self.m, int) or self.m < 1:
            raise ConfigError("m must be a positive integer", "m")
        if not isinstance(self.ell, int) or self.ell < 0:
            raise ConfigError("ell must be a non-negative integer", "ell")
        if len(self.domain_latent_sizes) != self.m or min(self.domain_latent_sizes, default=0) < 0:
            raise ConfigError("domain_latent_sizes needs one non-negative size per domain", "domain_latent_sizes")
        if not isinstance(self.d, int) or self.d < 1 or self.d % self.m:
            raise ConfigError(f"d={self.d} must be a positive multiple of m={self.m}", "d")
        for key in ("p_latent", "p_obs"):
            if not 0.0 <= getattr(self, key) <= 1.0:
                raise ConfigError(f"{key} must lie in [0, 1]", key)
        if not 0 < self.weight_low <= self.weight_high:
            raise ConfigError("need 0 < weight_low <= weight_high", "weight_low")
        if not isinstance(self.n, int) or self.n < 2:
            raise ConfigError("n must be an integer >= 2", "n")
        if self.error_table not in ERROR_TABLES:
            raise ConfigError(f"error_table must be one of {sorted(ERROR_TABLES)}", "error_table")

    @property
    def observed_dims(self) -> tuple[int, ...]:
        return (self.d // self.m,) * self.m

    @property
    def num_latent(self) -> int:
        return self.ell + sum(self.domain_latent_sizes)

    def replace(self, **changes) -> "GenConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["domain_latent_sizes"] = list(self.domain_latent_sizes)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            key = sorted(unknown)[0]
            raise ConfigError(f"unknown config key {key!r}", key)
        d = dict(d)
        if isinstance(d.get("domain_latent_sizes"), list):
            d["domain_latent_sizes"] = tuple(d["domain_latent_sizes"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


PRESETS: dict[str, GenConfig] = {
    "ell3_m2": GenConfig(m=2, ell=3, domain_latent_sizes=2, d=30),
    "ell3_m3": GenConfig(m=3, ell=3, domain_latent_sizes=2, d=30),
    "ell5_m2": GenConfig(m=2, ell=5, domain_latent_sizes=1, d=48),
    "ell5_m3": GenConfig(m=3, ell=5, domain_latent_sizes=1, d=48),
    "ell5_m4": GenConfig(m=4, ell=5, domain_latent_sizes=1, d=48),
    "violated_duplicate": GenConfig(m=3, ell=3, domain_latent_sizes=2, d=30, error_table="duplicate"),
    "violated_no_pure_children": GenConfig(m=3, ell=3, domain_latent_sizes=2, d=30, pure_children=False),
}


def _plant_domains(cfg: GenConfig) -> list[int]:
    """Domain hosting each planted pure child; children of ``k`` are slots ``2k, 2k+1``."""
    if not cfg.pure_children:
        return []
    return [t % cfg.m for t in range(2 * cfg.ell)]


def min_feasible_dim(cfg: GenConfig) -> int:
    """Smallest per-domain dimension that can host the planted children and give every source a child in its domain."""
    hosts = _plant_domains(cfg)
    need = 0
    for e in range(cfg.m):
        planted = hosts.count(e)
        uncovered = {t // 2 for t, dom in enumerate(hosts) if dom == e}
        extra = 1 if len(uncovered) < cfg.ell else 0
        need = max(need, cfg.ell + cfg.domain_latent_sizes[e], planted + extra)
    return need


def sample_graph(cfg: GenConfig, rng: np.random.Generator) -> MDomainGraph:
    """Random m-domain graph: Erdos-Renyi shared DAG, planted pure children, dense-ish G."""
    d_e = cfg.d // cfg.m
    need = min_feasible_dim(cfg)
    if d_e < need:
        raise GenerationError(f"d_e={d_e} is too small; this configuration needs d_e >= {need} (d >= {need * cfg.m})")
    ell, m = cfg.ell, cfg.m
    shell = MDomainGraph(m, ell, cfg.domain_latent_sizes, cfg.observed_dims)

    for _ in range(MAX_RETRIES):
        latent_edges = [(i, j) for i in range(ell) for j in range(i + 1, ell) if rng.random() < cfg.p_latent]

        planted: dict[int, int] = {}  # observed node -> its single shared parent
        hosts = _plant_domains(cfg)
        free = {e: list(rng.permutation(list(shell.domain_observed(e)))) for e in range(m)}
        for t, e in enumerate(hosts):
            planted[int(free[e].pop())] = t // 2

        obs_edges: set[tuple[int, int]] = set()
        for e in range(m):
            own = list(shell.domain_latents(e))
            for v in shell.domain_observed(e):
                if v in planted:
                    obs_edges.add((planted[v], v))
                else:
                    obs_edges.update((k, v) for k in range(ell) if rng.random() < cfg.p_obs)
                obs_edges.update((k, v) for k in own if rng.random() < cfg.p_obs)

            # every source of domain e needs a child there
            others = [v for v in shell.domain_observed(e) if v not in planted]
            for k in range(ell):
                if not any((k, v) in obs_edges for v in shell.domain_observed(e)):
                    obs_edges.add((k, int(rng.choice(others))))
            for k in own:
                if not any((k, v) in obs_edges for v in shell.domain_observed(e)):
                    obs_edges.add((k, int(rng.choice(list(shell.domain_observed(e))))))

        g = dataclasses.replace(shell, latent_edges=tuple(latent_edges), obs_edges=tuple(obs_edges))
        if _structurally_full_rank(g) and not validate_graph(g) and (has_pure_child_pairs(g) or not cfg.pure_children):
            return g
    raise GenerationError(f"no admissible graph after {MAX_RETRIES} attempts")


def _structurally_full_rank(g: MDomainGraph) -> bool:
    S = g.observed_support()
    for e in range(g.num_domains):
        block = S[np.ix_(g.domain_observed(e), g.domain_sources(e))]
        if block.shape[1] and structural_rank(csr_matrix(block.astype(float))) < block.shape[1]:
            return False
    return True


def _signed_uniform(rng: np.random.Generator, size: int, low: float, high: float) -> np.ndarray:
    return rng.uniform(low, high, size) * rng.choice([-1.0, 1.0], size)


def sample_weights(
    g: MDomainGraph,
    rng: np.random.Generator,
    low: float = 0.25,
    high: float = 1.0,
    error_specs: Sequence[ErrorSpec] | None = None,
) -> MdcrModel:
    """Fill edge coefficients from ``Unif(+-[low, high])``; zero off the graph."""
    h, nv = g.num_latent, g.num_observed
    specs = tuple(error_specs) if error_specs is not None else default_error_specs(h)
    for _ in range(MAX_RETRIES):
        A = np.zeros((h, h))
        G = np.zeros((nv, h))
        if g.latent_edges:
            src, dst = np.array(g.latent_edges).T
            A[dst, src] = _signed_uniform(rng, len(src), low, high)
        if g.obs_edges:
            k, v = np.array(g.obs_edges).T
            G[v, k] = _signed_uniform(rng, len(k), low, high)
        model = MdcrModel(g, A, G, specs)
        if all(_smallest_singular(model.domain_block(e)) > 1e-8 for e in range(g.num_domains)):
            return model
    raise GenerationError("mixing blocks stayed rank deficient")


def _smallest_singular(M: np.ndarray) -> float:
    if M.shape[1] == 0:
        return np.inf
    if M.shape[0] < M.shape[1]:
        return 0.0
    return float(np.linalg.svd(M, compute_uv=False)[-1])


def sample_model(cfg: GenConfig, rng: np.random.Generator) -> MdcrModel:
    g = sample_graph(cfg, rng)
    specs = default_error_specs(g.num_latent, ERROR_TABLES[cfg.error_table])
    return sample_weights(g, rng, cfg.weight_low, cfg.weight_high, specs)


@dataclass
class DomainSamples:
    """Per-domain observation matrices ``X^e`` (variables x samples), unpaired."""

    X: list[np.ndarray]
    labels: list[list[str]] = field(default_factory=list)

    def __post_init__(self):
        self.X = [np.asarray(x, dtype=float) for x in self.X]
        if not self.labels:
            self.labels = [[f"v{e + 1}_{i + 1}" for i in range(x.shape[0])] for e, x in enumerate(self.X)]

    @property
    def num_domains(self) -> int:
        return len(self.X)

    @property
    def sample_sizes(self) -> list[int]:
        return [x.shape[1] for x in self.X]


def sample_data(
    model: MdcrModel,
    n: int | Sequence[int],
    rng: np.random.Generator,
    paired: bool = False,
) -> DomainSamples:
    """Draw fresh latent noise for every domain and push it through ``G^e``.

    ``paired=True`` reuses one latent draw for all domains; debugging only.
    """
    g = model.graph
    sizes = [int(n)] * g.num_domains if np.isscalar(n) else [int(x) for x in n]
    if len(sizes) != g.num_domains:
        raise ValueError("need one sample size per domain")
    if paired and len(set(sizes)) > 1:
        raise ValueError("paired sampling needs equal sample sizes")
    if not model.error_specs:
        raise ValueError("model has no error specifications")
    T = latent_inverse(model.A, g.topological_order())
    streams = rng.spawn(g.num_domains)
    shared_Z = None
    X = []
    for e, (n_e, stream) in enumerate(zip(sizes, streams)):
        if paired and shared_Z is not None:
            Z = shared_Z
        else:
            eps = np.stack([standardized_sample(s, n_e, stream) for s in model.error_specs])
            Z = T @ eps
            shared_Z = Z
        X.append(model.G[g.domain_observed(e)] @ Z)
    return DomainSamples(X)


# -- CSV ingestion / export ---------------------------------------------------

class DataFormatError(ValueError):
    pass


def write_domain_csv(path: str | Path, X: np.ndarray, labels: Sequence[str]) -> None:
    """Rows are variables, columns samples; header ``variable,0,1,...``."""
    X = np.asarray(X, dtype=float)
    with open(path, "w", newline="") as fh:
        fh.write("variable," + ",".join(str(i) for i in range(X.shape[1])) + "\n")
        for lab, row in zip(labels, X):
            fh.write(lab + "," + ",".join(repr(float(x)) for x in row) + "\n")


def read_domain_csv(path: str | Path, transpose: bool = False) -> tuple[np.ndarray, list[str]]:
    """Inverse of :func:`write_domain_csv`; ``transpose`` reads samples-as-rows files."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if len(rows) < 2:
        raise DataFormatError(f"{path}: need a header row and at least one data row")
    header, body = rows[0], rows[1:]
    width = len(header)
    for lineno, row in enumerate(body, start=2):
        if len(row) != width:
            raise DataFormatError(f"{path}:{lineno}: {len(row)} fields but the header declares {width}")
    try:
        values = np.array([[float(x) for x in row[1:]] for row in body])
    except ValueError as exc:
        raise DataFormatError(f"{path}: non-numeric entry ({exc})") from exc
    if transpose:
        return values.T.copy(), header[1:]
    return values, [row[0] for row in body]


def write_samples(samples: DomainSamples, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for e, (X, labels) in enumerate(zip(samples.X, samples.labels)):
        p = out_dir / f"domain_{e + 1}.csv"
        write_domain_csv(p, X, labels)
        paths.append(p)
    return paths


def read_samples(paths: Sequence[str | Path], transpose: bool = False) -> DomainSamples:
    X, labels = [], []
    for p in paths:
        x, lab = read_domain_csv(p, transpose)
        X.append(x)
        labels.append(lab)
    return DomainSamples(X, labels)


def domain_csv_paths(data_dir: str | Path) -> list[Path]:
    paths = sorted(Path(data_dir).glob("domain_*.csv"), key=lambda p: int(p.stem.split("_")[1]))
    return paths


def pure_child_coefficients_positive(model: MdcrModel) -> MdcrModel:
    """Copy of ``model`` with every partial-pure-child coefficient made positive."""
    G = model.G.copy()
    for k in model.graph.shared:
        for v in partial_pure_children(model.graph, k):
            G[v, k] = abs(G[v, k])
    return model.with_weights(G=G)


def expected_covariance(model: MdcrModel, e: int) -> np.ndarray:
    """Population covariance of ``X^e`` for unit-variance independent noise."""
    g = model.graph
    Be = mixing_matrix(model)[np.ix_(g.domain_observed(e), g.domain_sources(e))]
    return Be @ Be.T


