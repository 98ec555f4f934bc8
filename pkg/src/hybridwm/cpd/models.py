"""Per-node conditional models, the likelihood surrogate and ancestral sampling."""

from __future__ import annotations

import graphlib
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .. import kernels
from ..schema import ObservationSchema, VariableSpec
from .encoding import EncodedData, FeatureEncoder
from .nets import TAU, FitConfig, cross_entropy_loss, forward, pinball_loss, softmax, train

BUNDLE_FORMAT = "hybridwm.cpd"
BUNDLE_VERSION = 1


class SamplingError(RuntimeError):
    pass


def pinball(tau: float, y: float, yhat: float) -> float:
    """Scalar pinball loss ``max(tau*e, (tau-1)*e)`` with ``e = y - yhat``."""
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie strictly between 0 and 1")
    e = y - yhat
    return max(tau * e, (tau - 1.0) * e)


def derive_seed(base: int, node: str, parents: Sequence[str]) -> int:
    """Seed that depends only on the fit's identity, not on the order fits run in."""
    key = json.dumps([base, node, sorted(parents)]).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") >> 1


def _pack(params) -> list | None:
    return None if params is None else [p.tolist() for p in params]


def _unpack(obj) -> list | None:
    return None if obj is None else [np.ascontiguousarray(np.asarray(p, dtype=np.float64)) for p in obj]


@dataclass
class QuantileModel:
    node: str
    parents: tuple[str, ...]
    params: list | None
    y_mean: float
    y_std: float
    lo: float = -math.inf
    hi: float = math.inf
    integer: bool = False
    constant: bool = False
    curve: list = field(default_factory=list, repr=False)
    kind = "quantile"

    def quantiles(self, x: np.ndarray) -> np.ndarray:
        """Sorted (rearranged) quantiles at ``TAU`` in target units, shape (n, 10)."""
        n = x.shape[0]
        if self.constant:
            return np.full((n, len(TAU)), self.y_mean)
        z = np.sort(forward(self.params, x), axis=1)
        return z * self.y_std + self.y_mean

    def loglik(self, x: np.ndarray, y) -> np.ndarray:
        """Negative mean pinball loss per row (0 is a perfect fit)."""
        q = self.quantiles(x)
        loss, _ = kernels.pinball(q, np.asarray(y, dtype=np.float64), TAU)
        return -loss

    def sample(self, x: np.ndarray, rng: np.random.Generator, u: np.ndarray | None = None) -> list:
        q = self.quantiles(x)
        if u is None:
            u = rng.random(q.shape[0])
        lo = -1e300 if math.isinf(self.lo) else self.lo
        hi = 1e300 if math.isinf(self.hi) else self.hi
        out = kernels.quantile_sample(np.ascontiguousarray(q), TAU, np.ascontiguousarray(u), lo, hi)
        if self.integer:
            return [int(min(max(round(v), lo), hi)) for v in out]
        return [float(v) for v in out]

    def to_json(self) -> dict:
        return {
            "kind": self.kind, "node": self.node, "parents": list(self.parents),
            "y_mean": self.y_mean, "y_std": self.y_std,
            "lo": None if math.isinf(self.lo) else self.lo, "hi": None if math.isinf(self.hi) else self.hi,
            "integer": self.integer, "constant": self.constant, "params": _pack(self.params),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "QuantileModel":
        return cls(obj["node"], tuple(obj["parents"]), _unpack(obj["params"]), obj["y_mean"], obj["y_std"],
                   -math.inf if obj["lo"] is None else obj["lo"], math.inf if obj["hi"] is None else obj["hi"],
                   obj["integer"], obj["constant"])


@dataclass
class CategoricalModel:
    node: str
    parents: tuple[str, ...]
    params: list | None
    levels: tuple[str, ...]
    constant_level: int | None = None
    curve: list = field(default_factory=list, repr=False)
    kind = "categorical"

    @property
    def constant(self) -> bool:
        return self.constant_level is not None

    def _logits(self, x: np.ndarray) -> np.ndarray:
        if self.constant:
            z = np.full((x.shape[0], len(self.levels)), -np.inf)
            z[:, self.constant_level] = 0.0
            return z
        return forward(self.params, x)

    def proba(self, x: np.ndarray) -> np.ndarray:
        return softmax(self._logits(x))

    def loglik(self, x: np.ndarray, y) -> np.ndarray:
        """Log-probability of the observed level (``-inf`` for an impossible level)."""
        z = self._logits(x)
        zmax = z.max(axis=1, keepdims=True)
        logp = z - zmax - np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))
        idx = np.array([self.levels.index(v) if v in self.levels else -1 for v in y])
        out = np.full(len(idx), -np.inf)
        ok = idx >= 0
        out[ok] = logp[np.flatnonzero(ok), idx[ok]]
        return out

    def sample(self, x: np.ndarray, rng: np.random.Generator, u: np.ndarray | None = None) -> list:
        p = self.proba(x)
        if u is None:
            u = rng.random(p.shape[0])
        cdf = np.cumsum(p, axis=1)
        idx = [min(int(np.searchsorted(row, ui, side="right")), len(self.levels) - 1) for row, ui in zip(cdf, u)]
        return [self.levels[i] for i in idx]

    def to_json(self) -> dict:
        return {"kind": self.kind, "node": self.node, "parents": list(self.parents), "levels": list(self.levels),
                "constant_level": self.constant_level, "params": _pack(self.params)}

    @classmethod
    def from_json(cls, obj: dict) -> "CategoricalModel":
        return cls(obj["node"], tuple(obj["parents"]), _unpack(obj["params"]), tuple(obj["levels"]),
                   obj["constant_level"])


NodeModel = QuantileModel | CategoricalModel


def model_from_json(obj: dict) -> NodeModel:
    return (QuantileModel if obj["kind"] == "quantile" else CategoricalModel).from_json(obj)


def fit_node(node: str, parents: Sequence[str], data: EncodedData, spec: VariableSpec,
             cfg: FitConfig = FitConfig()) -> NodeModel:
    """Fit ``p(node | parents, temporal context)``.

    Continuous targets are standardized and fitted with the pinball loss over
    ten quantile levels; categorical targets with cross-entropy. A target with
    a single observed value yields a flagged constant model.
    """
    if len(data) == 0:
        raise ValueError(f"no data to fit {node}")
    parents = tuple(sorted(parents))
    x = data.features(parents)
    seed = derive_seed(cfg.seed, node, parents)
    raw = data.targets[node]
    if spec.categorical:
        idx = np.array([spec.levels.index(v) for v in raw])
        seen = np.unique(idx)
        if len(seen) == 1:
            return CategoricalModel(node, parents, None, tuple(spec.levels), int(seen[0]))
        params, curve = train(x, idx.astype(np.float64), len(spec.levels), cross_entropy_loss, cfg, seed)
        return CategoricalModel(node, parents, params, tuple(spec.levels), None, curve)
    y = np.asarray(raw, dtype=np.float64)
    mean, std = float(y.mean()), float(y.std())
    lo = -math.inf if spec.lower is None else float(spec.lower)
    hi = math.inf if spec.upper is None else float(spec.upper)
    if std <= 1e-12 * max(1.0, abs(mean)):
        return QuantileModel(node, parents, None, mean, 0.0, lo, hi, spec.integer, True)
    params, curve = train(x, (y - mean) / std, len(TAU), pinball_loss, cfg, seed)
    return QuantileModel(node, parents, params, mean, std, lo, hi, spec.integer, False, curve)


def node_loglik_surrogate(model: NodeModel, data: EncodedData) -> np.ndarray:
    """Per-record fit score: log-probability (categorical) or negative mean pinball loss."""
    return model.loglik(data.features(model.parents), data.targets[model.node])


def topological_order(models: Mapping[str, NodeModel]) -> list[str]:
    ts = graphlib.TopologicalSorter()
    for name in sorted(models):
        ts.add(name, *models[name].parents)
    order = [n for n in ts.static_order() if n in models]
    missing = {p for m in models.values() for p in m.parents} - set(models)
    if missing:
        raise SamplingError(f"no model for parent node(s) {sorted(missing)}")
    return order


def sample_joint_batch(models: Mapping[str, NodeModel], encoder: FeatureEncoder, ctx: np.ndarray,
                       rng: np.random.Generator, order: Sequence[str] | None = None) -> list[dict]:
    """Ancestral sampling for each context row; one dict of node values per row."""
    missing = [n for n in encoder.node_names if n not in models]
    if missing:
        raise SamplingError(f"no model for node(s) {missing}")
    order = topological_order(models) if order is None else order
    n = ctx.shape[0]
    out: list[dict] = [{} for _ in range(n)]
    cols: dict[str, np.ndarray] = {}
    for node in order:
        m = models[node]
        x = np.hstack([ctx] + [cols[p] for p in m.parents]) if m.parents else ctx
        vals = m.sample(np.ascontiguousarray(x), rng)
        for row, v in zip(out, vals):
            row[node] = v
        cols[node] = np.stack([encoder.value(node, v) for v in vals])
    return out


def sample_joint(models: Mapping[str, NodeModel], encoder: FeatureEncoder, prev_sto: dict, action: dict,
                 next_det: dict, prev_det: dict, valid: bool, rng: np.random.Generator) -> dict:
    ctx = encoder.context(prev_det, prev_sto, action, next_det, valid)[None, :]
    return sample_joint_batch(models, encoder, ctx, rng)[0]


def fit_all(schema: ObservationSchema, parents: Mapping[str, Sequence[str]], data: EncodedData,
            cfg: FitConfig = FitConfig()) -> dict[str, NodeModel]:
    """One model per modeled node; ``parents`` maps node to same-step parents."""
    nodes = data.encoder.node_names
    return {n: fit_node(n, [p for p in parents.get(n, ()) if p in nodes], data, schema[n], cfg) for n in nodes}


@dataclass
class CpdBundle:
    encoder: FeatureEncoder
    models: dict
    meta: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "format": BUNDLE_FORMAT,
            "version": BUNDLE_VERSION,
            "meta": self.meta,
            "encoder": self.encoder.to_json(),
            "models": {k: self.models[k].to_json() for k in sorted(self.models)},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CpdBundle":
        if obj.get("format") != BUNDLE_FORMAT:
            raise ValueError("not a CPD model bundle")
        if obj.get("version") != BUNDLE_VERSION:
            raise ValueError(f"unsupported CPD bundle version {obj.get('version')}")
        return cls(FeatureEncoder.from_json(obj["encoder"]),
                   {k: model_from_json(v) for k, v in obj["models"].items()}, obj.get("meta", {}))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)

    @classmethod
    def load(cls, path) -> "CpdBundle":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))
