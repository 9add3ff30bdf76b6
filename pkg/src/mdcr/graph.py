"""m-domain graphs, MDCR parameterizations and the mixing map ``B = G (I - A)^{-1}``.

Indexing conventions (all 0-based):

* latent nodes ``0..h-1``; shared latents ``L = 0..ell-1`` come first, then one
  consecutive block ``I_e`` per domain;
* observed nodes ``0..|V|-1`` are numbered domain by domain, so ``V_e`` is a
  contiguous range;
* ``A[i, j]`` is the coefficient of the latent edge ``j -> i`` and ``G[v, k]``
  the coefficient of ``k -> v``.

Edges are stored as ``(parent, child)`` tuples.
"""

from __future__ import annotations

import graphlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from mdcr.distributions import ErrorSpec

Edge = tuple[int, int]


@dataclass(frozen=True)
class Violation:
    """One failed structural requirement of an m-domain graph."""

    clause: str
    message: str
    nodes: tuple = ()

    def __str__(self) -> str:
        return f"[{self.clause}] {self.message}"


@dataclass(frozen=True)
class MDomainGraph:
    num_domains: int
    num_shared: int
    domain_latent_sizes: tuple[int, ...]
    observed_dims: tuple[int, ...]
    latent_edges: tuple[Edge, ...] = ()
    obs_edges: tuple[Edge, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "domain_latent_sizes", tuple(int(s) for s in self.domain_latent_sizes))
        object.__setattr__(self, "observed_dims", tuple(int(d) for d in self.observed_dims))
        object.__setattr__(self, "latent_edges", tuple(sorted({(int(a), int(b)) for a, b in self.latent_edges})))
        object.__setattr__(self, "obs_edges", tuple(sorted({(int(a), int(b)) for a, b in self.obs_edges})))
        if self.num_domains < 1:
            raise ValueError("num_domains must be positive")
        if len(self.domain_latent_sizes) != self.num_domains or len(self.observed_dims) != self.num_domains:
            raise ValueError("need one latent block size and one observed dimension per domain")
        if self.num_shared < 0 or min(self.domain_latent_sizes) < 0 or min(self.observed_dims) < 0:
            raise ValueError("index set sizes must be non-negative")

    # -- index bookkeeping -------------------------------------------------
    @property
    def num_latent(self) -> int:
        return self.num_shared + sum(self.domain_latent_sizes)

    @property
    def num_observed(self) -> int:
        return sum(self.observed_dims)

    @property
    def shared(self) -> range:
        return range(self.num_shared)

    def domain_latents(self, e: int) -> range:
        start = self.num_shared + sum(self.domain_latent_sizes[:e])
        return range(start, start + self.domain_latent_sizes[e])

    def domain_observed(self, e: int) -> range:
        start = sum(self.observed_dims[:e])
        return range(start, start + self.observed_dims[e])

    def domain_sources(self, e: int) -> list[int]:
        """Latent columns entering domain ``e``: ``L`` followed by ``I_e``."""
        return list(self.shared) + list(self.domain_latents(e))

    def domain_of_observed(self, v: int) -> int:
        offsets = np.cumsum(self.observed_dims)
        return int(np.searchsorted(offsets, v, side="right"))

    def block_of_latent(self, u: int) -> int | None:
        """``None`` for shared latents, else the domain owning ``u``."""
        if u < self.num_shared:
            return None
        offsets = self.num_shared + np.cumsum(self.domain_latent_sizes)
        return int(np.searchsorted(offsets, u, side="right"))

    def parents(self, v: int) -> set[int]:
        return {k for k, w in self.obs_edges if w == v}

    def latent_parents(self, u: int) -> set[int]:
        return {a for a, b in self.latent_edges if b == u}

    def shared_subgraph_edges(self) -> list[Edge]:
        ell = self.num_shared
        return [(a, b) for a, b in self.latent_edges if a < ell and b < ell]

    def topological_order(self) -> list[int]:
        """Latent nodes in a topological order; raises ``graphlib.CycleError``."""
        ts = graphlib.TopologicalSorter({u: () for u in range(self.num_latent)})
        for a, b in self.latent_edges:
            ts.add(b, a)
        return list(ts.static_order())

    def latent_support(self) -> np.ndarray:
        S = np.zeros((self.num_latent, self.num_latent), dtype=bool)
        for a, b in self.latent_edges:
            S[b, a] = True
        return S

    def observed_support(self) -> np.ndarray:
        S = np.zeros((self.num_observed, self.num_latent), dtype=bool)
        for k, v in self.obs_edges:
            S[v, k] = True
        return S

    def to_dict(self) -> dict:
        return {
            "m": self.num_domains,
            "ell": self.num_shared,
            "domain_latent_sizes": list(self.domain_latent_sizes),
            "observed_dims": list(self.observed_dims),
            "latent_edges": [list(e) for e in self.latent_edges],
            "obs_edges": [list(e) for e in self.obs_edges],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MDomainGraph":
        return cls(
            num_domains=d["m"],
            num_shared=d["ell"],
            domain_latent_sizes=tuple(d["domain_latent_sizes"]),
            observed_dims=tuple(d["observed_dims"]),
            latent_edges=tuple(tuple(e) for e in d["latent_edges"]),
            obs_edges=tuple(tuple(e) for e in d["obs_edges"]),
        )


def validate_graph(g: MDomainGraph) -> list[Violation]:
    """Check the m-domain graph requirements and return every violation found."""
    out: list[Violation] = []
    h, nv, ell = g.num_latent, g.num_observed, g.num_shared

    for a, b in g.latent_edges:
        if not (0 <= a < h and 0 <= b < h):
            out.append(Violation("index", f"latent edge {a}->{b} references an unknown latent", (a, b)))
    for k, v in g.obs_edges:
        if not (0 <= k < h):
            # an observed node acting as parent lands here as well
            out.append(Violation("observed-parent", f"parent {k} of observed node {v} is not latent", (k, v)))
        if not (0 <= v < nv):
            out.append(Violation("index", f"edge {k}->{v} references an unknown observed node", (k, v)))
    if out:
        return out

    if any(a == b for a, b in g.latent_edges):
        loops = [a for a, b in g.latent_edges if a == b]
        out.append(Violation("acyclic", f"self loops at latent nodes {loops}", tuple(loops)))
    else:
        try:
            g.topological_order()
        except graphlib.CycleError as exc:
            out.append(Violation("acyclic", f"latent edges contain a cycle {exc.args[1]}", tuple(exc.args[1])))

    domains_of: dict[int, set[int]] = {u: set() for u in range(h)}
    for k, v in g.obs_edges:
        domains_of[k].add(g.domain_of_observed(v))
    for u in range(h):
        doms = domains_of[u]
        if u < ell and len(doms) < 2:
            out.append(Violation("sharing", f"shared latent {u} parents observed nodes in {len(doms)} domain(s)", (u,)))
        elif u >= ell and len(doms) >= 2:
            out.append(Violation("sharing", f"latent {u} parents nodes in domains {sorted(doms)} but is not shared", (u,)))
        elif u >= ell and len(doms) == 1:
            (e,) = doms
            if g.block_of_latent(u) != e:
                out.append(Violation(
                    "private", f"latent {u} sits in block I_{g.block_of_latent(u)} but only parents domain {e}", (u,)))

    for a, b in g.latent_edges:
        ba, bb = g.block_of_latent(a), g.block_of_latent(b)
        if (ba is None) != (bb is None):
            out.append(Violation("separation", f"edge {a}->{b} connects a shared and a domain-specific latent", (a, b)))
        elif ba is not None and ba != bb:
            out.append(Violation("separation", f"edge {a}->{b} connects I_{ba} and I_{bb}", (a, b)))
    return out


@dataclass(frozen=True, eq=False)
class MdcrModel:
    graph: MDomainGraph
    A: np.ndarray
    G: np.ndarray
    error_specs: tuple[ErrorSpec, ...] = field(default=())

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        G = np.array(self.G, dtype=float)
        A.setflags(write=False)
        G.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "error_specs", tuple(self.error_specs))
        h, nv = self.graph.num_latent, self.graph.num_observed
        if A.shape != (h, h):
            raise ValueError(f"A has shape {A.shape}, graph needs {(h, h)}")
        if G.shape != (nv, h):
            raise ValueError(f"G has shape {G.shape}, graph needs {(nv, h)}")
        if self.error_specs and len(self.error_specs) != h:
            raise ValueError(f"{len(self.error_specs)} error specs for {h} latents")

    def domain_block(self, e: int) -> np.ndarray:
        """``G^e = G[V_e, S_e]``."""
        g = self.graph
        return self.G[np.ix_(g.domain_observed(e), g.domain_sources(e))]

    def with_weights(self, A=None, G=None) -> "MdcrModel":
        return MdcrModel(self.graph, self.A if A is None else A, self.G if G is None else G, self.error_specs)

    def to_dict(self) -> dict:
        d = self.graph.to_dict()
        d["A_entries"] = [[int(i), int(j), float(self.A[i, j])] for i, j in zip(*np.nonzero(self.A))]
        d["G_entries"] = [[int(v), int(k), float(self.G[v, k])] for v, k in zip(*np.nonzero(self.G))]
        d["error_specs"] = [s.to_dict() for s in self.error_specs]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MdcrModel":
        g = MDomainGraph.from_dict(d)
        A = np.zeros((g.num_latent, g.num_latent))
        G = np.zeros((g.num_observed, g.num_latent))
        for i, j, x in d.get("A_entries", []):
            A[int(i), int(j)] = x
        for v, k, x in d.get("G_entries", []):
            G[int(v), int(k)] = x
        specs = tuple(ErrorSpec.from_dict(s) for s in d.get("error_specs", []))
        return cls(g, A, G, specs)


def validate_model(model: MdcrModel) -> list[Violation]:
    """Graph violations plus any coefficient outside the graph's support."""
    out = validate_graph(model.graph)
    bad_A = np.argwhere((model.A != 0) & ~model.graph.latent_support())
    for i, j in bad_A:
        out.append(Violation("support", f"A[{i},{j}] nonzero without edge {j}->{i}", (int(j), int(i))))
    bad_G = np.argwhere((model.G != 0) & ~model.graph.observed_support())
    for v, k in bad_G:
        out.append(Violation("support", f"G[{v},{k}] nonzero without edge {k}->{v}", (int(k), int(v))))
    return out


def latent_inverse(A: np.ndarray, order: Sequence[int] | None = None) -> np.ndarray:
    """``(I - A)^{-1}`` by triangular substitution along a topological order."""
    A = np.asarray(A, dtype=float)
    h = A.shape[0]
    if order is None:
        ts = graphlib.TopologicalSorter({u: () for u in range(h)})
        for i, j in zip(*np.nonzero(A)):
            if i == j:
                raise graphlib.CycleError("self loop", [int(i)])
            ts.add(int(i), int(j))
        order = list(ts.static_order())
    p = np.asarray(order, dtype=int)
    M = np.eye(h) - A[np.ix_(p, p)]
    inv_p = solve_triangular(M, np.eye(h), lower=True, unit_diagonal=True)
    out = np.empty_like(inv_p)
    out[np.ix_(p, p)] = inv_p
    return out


def mixing_matrix(model: MdcrModel) -> np.ndarray:
    """``B = G (I - A)^{-1}``, the |V| x h joint mixing matrix."""
    g = model.graph
    if model.A.shape != (g.num_latent, g.num_latent) or model.G.shape != (g.num_observed, g.num_latent):
        raise ValueError("matrix dimensions do not match the graph")
    return model.G @ latent_inverse(model.A, g.topological_order())


def partial_pure_children(g: MDomainGraph, k: int) -> set[int]:
    """Observed nodes whose only shared parent is ``k``."""
    if not 0 <= k < g.num_shared:
        raise ValueError(f"{k} is not a shared latent (ell={g.num_shared})")
    shared_pa: dict[int, set[int]] = {}
    for u, v in g.obs_edges:
        if u < g.num_shared:
            shared_pa.setdefault(v, set()).add(u)
    return {v for v, pa in shared_pa.items() if pa == {k}}


def has_pure_child_pairs(g: MDomainGraph) -> bool:
    """Every shared latent has at least two partial pure children."""
    return all(len(partial_pure_children(g, k)) >= 2 for k in g.shared)


def save_model(model: MdcrModel, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict(), indent=2, sort_keys=True) + "\n")


def load_model(path: str | Path) -> MdcrModel:
    return MdcrModel.from_dict(json.loads(Path(path).read_text()))


def edges_to_adjacency(edges: Iterable[Edge], p: int) -> np.ndarray:
    """Boolean matrix with ``M[child, parent] = True``."""
    M = np.zeros((p, p), dtype=bool)
    for a, b in edges:
        M[b, a] = True
    return M
