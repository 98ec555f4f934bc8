import json
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hybridwm.cpd import FeatureEncoder, FitConfig
from hybridwm.schema import ActionSpec, ObservationSchema, TransitionRecord, VariableSpec
from hybridwm.structure import (
    DagStructure,
    FitCache,
    FlatPrior,
    OraclePrior,
    SearchConfig,
    StructureError,
    anneal,
    move_types,
    propose_move,
    sample_seed_dag,
    score,
    search,
)

CHEAP = FitConfig(epochs=3, hidden=8)


class Uninformed:
    """Seed oracle answering in schema order with no parents."""

    def topo_next(self, ordered, remaining, schema, seed=0):
        return remaining[0]

    def elicit_parents(self, node, preds, schema, seed=0):
        return []


class Scripted(Uninformed):
    def __init__(self, order, parents, bad_answers=0):
        self.order, self.parents, self.bad = order, parents, bad_answers
        self.calls = 0

    def topo_next(self, ordered, remaining, schema, seed=0):
        self.calls += 1
        if self.bad:
            self.bad -= 1
            return "nonsense"
        return next(n for n in self.order if n in remaining)

    def elicit_parents(self, node, preds, schema, seed=0):
        return self.parents.get(node, [])


class EdgeRules:
    """Plausibility: -12 when a parent set contains a forbidden edge, else 0."""

    def __init__(self, forbidden):
        self.forbidden = set(forbidden)
        self.calls = 0

    def plausibility(self, nodes, edges, target, schema):
        self.calls += 1
        return -12.0 if any(tuple(e) in self.forbidden for e in edges) else 0.0


def schema_of(modeled, conditioning=()):
    vs = [VariableSpec(n, "numerical", "stochastic") for n in modeled]
    vs += [VariableSpec(n, "numerical", "deterministic") for n in conditioning]
    return ObservationSchema(tuple(vs), actions=(ActionSpec("wait"),))


def cache_for(schema, n=120, seed=0, cfg=CHEAP):
    rng = np.random.default_rng(seed)
    mod = schema.names("stochastic")
    cond = schema.names("deterministic")

    def draw():
        x = {m: float(rng.normal()) for m in mod}
        if "b" in x and "a" in x:
            x["b"] = 10 * x["a"] + 0.1 * float(rng.normal())
        return x

    prev = draw()
    recs = []
    for _ in range(n):
        cur = draw()
        det = {c: float(rng.normal()) for c in cond}
        recs.append(TransitionRecord(det, prev, {"name": "wait"}, True, det, cur))
        prev = cur
    enc = FeatureEncoder.fit(schema, recs)
    return FitCache(schema, enc.dataset(recs), cfg)


def test_dag_invariants():
    with pytest.raises(StructureError, match="cycle"):
        DagStructure(("a", "b"), (), {("a", "b"), ("b", "a")})
    with pytest.raises(StructureError, match="only modeled"):
        DagStructure(("a",), ("s",), {("a", "s")})
    with pytest.raises(StructureError):
        DagStructure(("a",), (), {("a", "a")})
    d = DagStructure(("a", "b"), ("s",), {("s", "a"), ("a", "b")})
    assert d.parents("b") == ("a",) and d.topological_order() == ["s", "a", "b"]


def test_dag_file_roundtrip(tmp_path):
    d = DagStructure(("a", "b", "c"), ("s",), {("s", "a"), ("a", "b")})
    p = tmp_path / "dag.json"
    p.write_text(json.dumps(d.to_json()))
    assert DagStructure.load(p) == d
    assert json.loads(p.read_text())["edges"] == [["a", "b"], ["s", "a"]]


def test_empty_graph_only_adds():
    assert move_types(DagStructure(("a", "b", "c"))) == ["add"]
    d, mv = propose_move(DagStructure(("a", "b", "c")), random.Random(0))
    assert mv["move"] == "add" and len(d.edges) == 1


def test_flip_examples():
    chain = DagStructure(("a", "b", "c"), (), {("a", "b"), ("b", "c")})
    assert chain.with_edges({("b", "a"), ("b", "c")}).topological_order() is not None
    tri = DagStructure(("a", "b", "c"), (), {("a", "b"), ("a", "c"), ("b", "c")})
    assert tri.with_edges({("a", "b"), ("a", "c"), ("c", "b")}).topological_order() is not None


def test_conditioning_edges_never_flip():
    d = DagStructure(("a",), ("s",), {("s", "a")})
    assert "flip" not in move_types(d)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 80))
def test_moves_preserve_acyclicity(seed, steps):
    rng = random.Random(seed)
    d = DagStructure(("a", "b", "c", "d"), ("s", "t"))
    for _ in range(steps):
        nxt, mv = propose_move(d, rng)
        assert nxt.topological_order() is not None
        if mv is not None:
            assert len(nxt.edges ^ d.edges) in (1, 2)
        d = nxt


def test_seed_dag_scripted_and_fallback():
    schema = schema_of(["customers", "revenue"])
    d = sample_seed_dag(schema, Scripted(["customers", "revenue"], {"revenue": ["customers"]}))
    assert d.edges == {("customers", "revenue")}
    none = sample_seed_dag(schema, Uninformed())
    assert none.edges == frozenset()
    bad = Scripted(["revenue", "customers"], {"customers": ["revenue", "ghost"]}, bad_answers=2)
    d = sample_seed_dag(schema, bad)
    # two bad answers: fall back to the first remaining variable
    assert d.edges == frozenset()
    assert sample_seed_dag(schema_of([], ["s"]), Uninformed()).edges == frozenset()


def test_seed_dag_puts_conditioning_first():
    schema = schema_of(["x"], ["price"])
    d = sample_seed_dag(schema, Scripted(["x"], {"x": ["price"]}))
    assert d.edges == {("price", "x")}


def test_score_decomposition_and_sparsity():
    schema = schema_of(["a", "b", "c", "d", "e", "f"])
    fits = cache_for(schema)
    cfg = SearchConfig()
    empty = DagStructure(tuple(schema.names()))
    s0 = score(empty, fits, FlatPrior(), cfg)
    assert s0.total == s0.data_term and s0.sparsity_term == 0 and s0.prior_term == 0
    one = empty.with_edges({("a", "b")})
    s1 = score(one, fits, FlatPrior(), cfg)
    assert s1.sparsity_term == pytest.approx(-10 / 36)
    assert abs(s1.total - (s1.data_term + s1.sparsity_term + s1.prior_term)) <= 1e-12
    # conditioning-only parents reuse the modeled-parent fit
    n = len(fits)
    fits.mean_loglik("a", ["zzz_not_modeled"])
    assert len(fits) == n


def test_prior_term_dominates():
    schema = schema_of(["a", "b"])
    fits = cache_for(schema)
    oracle = EdgeRules({("b", "a")})
    prior = OraclePrior(oracle, schema)
    bad = DagStructure(("a", "b"), (), {("b", "a")})
    s = score(bad, fits, prior, SearchConfig())
    assert s.prior_term == pytest.approx(-1200)
    calls = oracle.calls
    score(bad, fits, prior, SearchConfig())
    assert oracle.calls == calls
    whole = OraclePrior(oracle, schema, mode="whole_graph")
    assert whole.log_prob(bad) == -12.0


def test_anneal_zero_steps_and_monotone_best():
    schema = schema_of(["a", "b", "c"])
    fits = cache_for(schema)
    seed = DagStructure(("a", "b", "c"))
    r = anneal(seed, fits, FlatPrior(), SearchConfig(steps_per_chain=0), random.Random(0))
    assert r.best == seed and len(r.trace) == 1
    r = anneal(seed, fits, FlatPrior(), SearchConfig(steps_per_chain=60), random.Random(0))
    best = [t["J_best"] for t in r.trace]
    assert best == sorted(best)
    assert r.best_score.total == best[-1]
    for t in r.trace:
        DagStructure(("a", "b", "c"), (), {tuple(e) for e in t["edges"]})


def test_search_finds_strong_edge_and_is_deterministic():
    schema = schema_of(["a", "b", "c"])
    fits = cache_for(schema, n=400, cfg=FitConfig(epochs=40, hidden=8))
    cfg = SearchConfig(chains=2, steps_per_chain=40, seed=3)
    r1 = search(schema, fits, Uninformed(), FlatPrior(), cfg)
    r2 = search(schema, fits, Uninformed(), FlatPrior(), cfg)
    assert r1.dag == r2.dag and r1.trace == r2.trace
    assert r1.dag.skeleton() >= {frozenset(("a", "b"))}


def test_search_zero_steps_is_seed():
    schema = schema_of(["customers", "revenue"])
    fits = cache_for(schema)
    oracle = Scripted(["customers", "revenue"], {"revenue": ["customers"]})
    r = search(schema, fits, oracle, FlatPrior(), SearchConfig(chains=1, steps_per_chain=0))
    assert r.dag == sample_seed_dag(schema, oracle)


def test_forbidden_edges_never_returned():
    schema = schema_of(["a", "b", "c"])
    fits = cache_for(schema, n=400)
    forbidden = {("a", "b"), ("b", "a"), ("c", "a")}
    prior = OraclePrior(EdgeRules(forbidden), schema)
    for seed in range(5):
        r = search(schema, fits, Uninformed(), prior, SearchConfig(chains=2, steps_per_chain=30, seed=seed))
        assert not r.dag.edges & forbidden
