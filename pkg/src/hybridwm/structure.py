"""Bayesian-network structure over the stochastic stream.

Modeled nodes (stochastic features) may have parents among all nodes;
conditioning nodes (deterministic features) never have parents. The search
maximizes

    J(E) = data_term - lambda1 * |E| / |V|^2 + lambda2 * log p(E)

with simulated annealing started from oracle-seeded graphs.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Protocol, Sequence

import numpy as np

from . import kernels
from .cpd import EncodedData, FitConfig, NodeModel, fit_node, node_loglik_surrogate
from .schema import ObservationSchema

log = logging.getLogger(__name__)

Edge = tuple[str, str]


class StructureError(ValueError):
    pass


class ScoringError(RuntimeError):
    def __init__(self, node: str, cause: Exception):
        super().__init__(f"fitting {node} failed: {cause}")
        self.node = node


class SearchError(RuntimeError):
    pass


@dataclass(frozen=True)
class DagStructure:
    modeled: tuple[str, ...]
    conditioning: tuple[str, ...] = ()
    edges: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "modeled", tuple(self.modeled))
        object.__setattr__(self, "conditioning", tuple(self.conditioning))
        object.__setattr__(self, "edges", frozenset(tuple(e) for e in self.edges))
        nodes = set(self.modeled) | set(self.conditioning)
        if len(nodes) != len(self.modeled) + len(self.conditioning):
            raise StructureError("node ids must be unique")
        for p, c in self.edges:
            if c not in self.modeled:
                raise StructureError(f"edge {p}->{c}: only modeled nodes take parents")
            if p not in nodes:
                raise StructureError(f"edge {p}->{c}: unknown node {p}")
            if p == c:
                raise StructureError(f"self loop on {p}")
        if self.topological_order() is None:
            raise StructureError("edges contain a cycle")

    @property
    def nodes(self) -> tuple[str, ...]:
        return self.conditioning + self.modeled

    def parents(self, node: str) -> tuple[str, ...]:
        return tuple(sorted(p for p, c in self.edges if c == node))

    def modeled_parents(self, node: str) -> tuple[str, ...]:
        return tuple(p for p in self.parents(node) if p in self.modeled)

    def parent_map(self) -> dict[str, tuple[str, ...]]:
        return {n: self.parents(n) for n in self.modeled}

    def topological_order(self) -> list[str] | None:
        """Kahn's algorithm with ties broken by declaration order; ``None`` on a cycle."""
        nodes = self.nodes
        indeg = {n: 0 for n in nodes}
        children: dict[str, list[str]] = {n: [] for n in nodes}
        for p, c in self.edges:
            indeg[c] += 1
            children[p].append(c)
        rank = {n: i for i, n in enumerate(nodes)}
        ready = sorted((n for n in nodes if indeg[n] == 0), key=rank.get)
        out = []
        while ready:
            n = ready.pop(0)
            out.append(n)
            for c in children[n]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
                    ready.sort(key=rank.get)
        return out if len(out) == len(nodes) else None

    def with_edges(self, edges: Iterable[Edge]) -> "DagStructure":
        return DagStructure(self.modeled, self.conditioning, frozenset(edges))

    def skeleton(self) -> frozenset:
        return frozenset(frozenset(e) for e in self.edges)

    def sorted_edges(self) -> list[list[str]]:
        return sorted([p, c] for p, c in self.edges)

    def to_json(self) -> dict:
        return {
            "nodes": [{"id": n, "stream": "deterministic"} for n in self.conditioning]
            + [{"id": n, "stream": "stochastic"} for n in self.modeled],
            "edges": self.sorted_edges(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DagStructure":
        try:
            cond = [n["id"] for n in obj["nodes"] if n["stream"] == "deterministic"]
            mod = [n["id"] for n in obj["nodes"] if n["stream"] == "stochastic"]
            return cls(tuple(mod), tuple(cond), frozenset(tuple(e) for e in obj["edges"]))
        except (KeyError, TypeError) as e:
            raise StructureError(f"malformed DAG file: {e}") from None

    @classmethod
    def load(cls, path) -> "DagStructure":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    @classmethod
    def empty(cls, schema: ObservationSchema) -> "DagStructure":
        return cls(tuple(schema.names("stochastic", True)), tuple(schema.names("deterministic", True)))


@dataclass(frozen=True)
class SearchConfig:
    lambda1: float = 10.0
    lambda2: float = 100.0
    alpha: float = 0.99
    steps_per_chain: int = 50
    chains: int = 5
    seed: int = 0
    probe_moves: int = 20
    probe_accept: float = 0.5
    t0_floor: float = 1e-3
    cycle_retries: int = 10
    fit: FitConfig = field(default_factory=FitConfig)

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambdas must be non-negative")
        if self.chains < 1:
            raise ValueError("chains must be at least 1")
        if self.steps_per_chain < 0:
            raise ValueError("steps_per_chain must be non-negative")


@dataclass(frozen=True)
class ScoreBreakdown:
    data_term: float
    sparsity_term: float
    prior_term: float

    @property
    def total(self) -> float:
        return self.data_term + self.sparsity_term + self.prior_term

    def to_json(self) -> dict:
        return {"data_term": self.data_term, "sparsity_term": self.sparsity_term,
                "prior_term": self.prior_term, "total": self.total}


class FitCache:
    """Memoized node fits keyed by ``(node, modeled parents)``.

    Conditioning-node parents are already part of every node's input, so they
    do not change the fit. Seeds derive from the key, so results do not
    depend on the order in which fits are requested.
    """

    def __init__(self, schema: ObservationSchema, data: EncodedData, cfg: FitConfig = FitConfig()):
        self.schema = schema
        self.data = data
        self.cfg = cfg
        self.modeled = set(data.encoder.node_names)
        self._models: dict[tuple, NodeModel] = {}
        self._scores: dict[tuple, float] = {}
        self.fits = 0

    def key(self, node: str, parents: Iterable[str]) -> tuple:
        return node, tuple(sorted(p for p in parents if p in self.modeled))

    def model(self, node: str, parents: Iterable[str]) -> NodeModel:
        key = self.key(node, parents)
        if key not in self._models:
            try:
                self._models[key] = fit_node(node, key[1], self.data, self.schema[node], self.cfg)
            except Exception as e:
                raise ScoringError(node, e) from e
            self.fits += 1
        return self._models[key]

    def mean_loglik(self, node: str, parents: Iterable[str]) -> float:
        key = self.key(node, parents)
        if key not in self._scores:
            self._scores[key] = float(np.mean(node_loglik_surrogate(self.model(node, key[1]), self.data)))
        return self._scores[key]

    def __len__(self) -> int:
        return len(self._models)


class Prior(Protocol):
    def log_prob(self, dag: DagStructure) -> float: ...


class FlatPrior:
    def log_prob(self, dag: DagStructure) -> float:
        return 0.0


class PlausibilityOracle(Protocol):
    def plausibility(self, nodes: Sequence[str], edges: Sequence[Edge], target: str | None,
                     schema: ObservationSchema) -> float: ...


class OraclePrior:
    """``log p(E)`` from an oracle's log-probability of a "yes" answer.

    ``per_node`` asks one question per modeled node about its parent set and
    sums the answers; ``whole_graph`` asks a single question about all edges.
    Results are memoized by canonical edge set.
    """

    def __init__(self, oracle: PlausibilityOracle, schema: ObservationSchema, mode: str = "per_node"):
        if mode not in ("per_node", "whole_graph"):
            raise ValueError(f"unknown prior mode {mode!r}")
        self.oracle = oracle
        self.schema = schema
        self.mode = mode
        self._memo: dict[frozenset, float] = {}

    def log_prob(self, dag: DagStructure) -> float:
        key = dag.edges
        if key not in self._memo:
            nodes = list(dag.nodes)
            if self.mode == "whole_graph":
                value = self.oracle.plausibility(nodes, dag.sorted_edges(), None, self.schema)
            else:
                value = 0.0
                for n in dag.modeled:
                    edges = [(p, n) for p in dag.parents(n)]
                    value += self.oracle.plausibility(nodes, edges, n, self.schema)
            self._memo[key] = value
        return self._memo[key]


def score(dag: DagStructure, fits: FitCache, prior: Prior, cfg: SearchConfig) -> ScoreBreakdown:
    """Objective split into its data, sparsity and prior terms."""
    data_term = sum(fits.mean_loglik(n, dag.parents(n)) for n in dag.modeled)
    n = len(dag.nodes)
    sparsity = -cfg.lambda1 * len(dag.edges) / (n * n) if n else 0.0
    return ScoreBreakdown(data_term, sparsity, cfg.lambda2 * prior.log_prob(dag))


# seeding


class SeedOracle(Protocol):
    def topo_next(self, ordered: Sequence[str], remaining: Sequence[str], schema: ObservationSchema,
                  seed: int = 0) -> str: ...

    def elicit_parents(self, node: str, predecessors: Sequence[str], schema: ObservationSchema,
                       seed: int = 0) -> list[str]: ...


def sample_seed_dag(schema: ObservationSchema, oracle: SeedOracle, seed: int = 0) -> DagStructure:
    """Oracle-guided topological order, then oracle-elicited parents among predecessors."""
    modeled = schema.names("stochastic", True)
    conditioning = schema.names("deterministic", True)
    order = list(conditioning)
    remaining = list(modeled)
    while remaining:
        if len(remaining) == 1:
            pick = remaining[0]
        else:
            pick = None
            for attempt in range(2):
                try:
                    answer = oracle.topo_next(list(order), list(remaining), schema, seed)
                except Exception as e:
                    log.warning("topological-order query failed: %s", e)
                    answer = None
                if answer in remaining:
                    pick = answer
                    break
                log.warning("topological-order answer %r is not a remaining variable (attempt %d)", answer, attempt + 1)
            if pick is None:
                pick = remaining[0]
                log.warning("falling back to %s", pick)
        order.append(pick)
        remaining.remove(pick)
    edges = set()
    for i, node in enumerate(order):
        if node not in modeled:
            continue
        preds = order[:i]
        if not preds:
            continue
        try:
            chosen = oracle.elicit_parents(node, list(preds), schema, seed)
        except Exception as e:
            log.warning("parent elicitation for %s failed: %s", node, e)
            chosen = []
        for p in chosen:
            if p in preds:
                edges.add((p, node))
            else:
                log.warning("dropping elicited parent %r of %s: not a predecessor", p, node)
    return DagStructure(tuple(modeled), tuple(conditioning), frozenset(edges))


# moves


def _creates_cycle(dag: DagStructure, edges: set, parent: str, child: str) -> bool:
    nodes = dag.nodes
    idx = {n: i for i, n in enumerate(nodes)}
    adj = np.zeros((len(nodes), len(nodes)), dtype=np.uint8)
    for p, c in edges:
        adj[idx[p], idx[c]] = 1
    return bool(kernels.reachable(adj, idx[child], idx[parent]))


def move_types(dag: DagStructure) -> list[str]:
    types = []
    n_all = len(dag.nodes)
    if len(dag.edges) < len(dag.modeled) * (n_all - 1):
        types.append("add")
    if dag.edges:
        types.append("remove")
    if any(p in dag.modeled for p, _ in dag.edges):
        types.append("flip")
    return types


def propose_move(dag: DagStructure, rng: random.Random, retries: int = 10) -> tuple[DagStructure, dict | None]:
    """A random acyclic neighbour reached by adding, removing or flipping one edge.

    Move types are drawn uniformly among those currently possible. A draw that
    would create a cycle is redrawn up to ``retries`` times before giving up
    and returning ``dag`` unchanged.
    """
    for _ in range(retries + 1):
        types = move_types(dag)
        if not types:
            return dag, None
        kind = rng.choice(types)
        edges = set(dag.edges)
        if kind == "remove":
            e = rng.choice(sorted(edges))
            edges.remove(e)
            return dag.with_edges(edges), {"move": "remove", "edge": list(e)}
        if kind == "add":
            candidates = [(p, c) for c in dag.modeled for p in dag.nodes if p != c and (p, c) not in edges]
            p, c = rng.choice(candidates)
            if (c, p) in edges or _creates_cycle(dag, edges, p, c):
                continue
            edges.add((p, c))
            return dag.with_edges(edges), {"move": "add", "edge": [p, c]}
        p, c = rng.choice(sorted(e for e in edges if e[0] in dag.modeled))
        edges.remove((p, c))
        if _creates_cycle(dag, edges, c, p):
            continue
        edges.add((c, p))
        return dag.with_edges(edges), {"move": "flip", "edge": [c, p]}
    return dag, None


# annealing


def _fit_delta(a: ScoreBreakdown, b: ScoreBreakdown) -> float:
    return (b.data_term + b.sparsity_term) - (a.data_term + a.sparsity_term)


def initial_temperature(dag: DagStructure, fits: FitCache, prior: Prior, cfg: SearchConfig,
                        rng: random.Random) -> float:
    """Temperature at which the median probe move is accepted with ``cfg.probe_accept``.

    Probe deltas use the data and sparsity terms only. A near-hard prior would
    otherwise set the scale and turn the chain into a random walk through
    implausible graphs.
    """
    base = score(dag, fits, prior, cfg)
    deltas = []
    for _ in range(cfg.probe_moves):
        nxt, mv = propose_move(dag, rng, cfg.cycle_retries)
        if mv is None:
            continue
        deltas.append(abs(_fit_delta(base, score(nxt, fits, prior, cfg))))
    if not deltas:
        return cfg.t0_floor
    return max(float(np.median(deltas)) / math.log(1.0 / cfg.probe_accept), cfg.t0_floor)


@dataclass
class ChainResult:
    best: DagStructure
    best_score: ScoreBreakdown
    trace: list[dict]
    error: str | None = None


def anneal(seed_dag: DagStructure, fits: FitCache, prior: Prior, cfg: SearchConfig,
           rng: random.Random, chain: int = 0) -> ChainResult:
    """Simulated annealing with geometric cooling; returns the best graph seen."""
    current = seed_dag
    cur_score = score(current, fits, prior, cfg)
    best, best_score = current, cur_score
    trace = [{"chain": chain, "step": 0, "T": None, "J": cur_score.total, "J_best": best_score.total,
              "accepted": True, "move": None, "edges": current.sorted_edges()}]
    if cfg.steps_per_chain == 0:
        return ChainResult(best, best_score, trace)
    try:
        temp = initial_temperature(current, fits, prior, cfg, rng)
        for step in range(1, cfg.steps_per_chain + 1):
            cand, mv = propose_move(current, rng, cfg.cycle_retries)
            cand_score = score(cand, fits, prior, cfg) if mv is not None else cur_score
            delta = cand_score.total - cur_score.total
            accepted = mv is not None and (delta >= 0 or rng.random() < math.exp(delta / temp))
            if accepted:
                current, cur_score = cand, cand_score
                if cur_score.total > best_score.total:
                    best, best_score = current, cur_score
            trace.append({"chain": chain, "step": step, "T": temp, "J": cur_score.total,
                          "J_best": best_score.total, "accepted": accepted, "move": mv,
                          "edges": current.sorted_edges()})
            temp *= cfg.alpha
    except ScoringError as e:
        log.error("chain %d aborted: %s", chain, e)
        return ChainResult(best, best_score, trace, str(e))
    return ChainResult(best, best_score, trace)


@dataclass
class SearchResult:
    dag: DagStructure
    score: ScoreBreakdown
    chains: list[ChainResult]

    @property
    def trace(self) -> list[dict]:
        return [t for c in self.chains for t in c.trace]


def search(schema: ObservationSchema, fits: FitCache, oracle: SeedOracle, prior: Prior,
           cfg: SearchConfig = SearchConfig()) -> SearchResult:
    """Anneal ``cfg.chains`` oracle-seeded graphs and keep the global best."""
    results = []
    for i in range(cfg.chains):
        seed = cfg.seed + i
        try:
            seed_dag = sample_seed_dag(schema, oracle, seed)
            results.append(anneal(seed_dag, fits, prior, cfg, random.Random(seed), chain=i))
        except ScoringError as e:
            log.error("chain %d failed before annealing: %s", i, e)
            results.append(None)
    ok = [r for r in results if r is not None and r.error is None]
    if not ok:
        ok = [r for r in results if r is not None]
    if not ok:
        raise SearchError("every chain failed")
    best = max(ok, key=lambda r: r.best_score.total)
    return SearchResult(best.best, best.best_score, [r for r in results if r is not None])


def write_trace(trace: Sequence[dict], fh) -> None:
    for row in trace:
        fh.write(json.dumps(row, sort_keys=True) + "\n")
