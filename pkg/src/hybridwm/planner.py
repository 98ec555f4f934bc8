"""MCTS over action sequences with MPC replanning.

A search node stands for an action prefix, not a concrete state: every visit
re-samples the world model from the root. Rollouts shorter than the horizon
are padded with ``wait``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Protocol, Sequence

import numpy as np

from .cpd import CpdBundle, SamplingError, sample_joint_batch
from .program import TransitionProgram, try_evaluate
from .schema import ObservationSchema

log = logging.getLogger(__name__)

WAIT = {"name": "wait"}
FAULT_VALUE = -1e6


@dataclass(frozen=True)
class PlanConfig:
    horizon: int = 3
    iterations: int = 90
    rollouts_per_node: int = 4
    actions_per_node: int = 100
    exploration_c: float = math.sqrt(2.0)
    seed: int = 0
    fault_value: float = FAULT_VALUE

    def __post_init__(self):
        for name in ("horizon", "iterations", "rollouts_per_node", "actions_per_node"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.exploration_c < 0:
            raise ValueError("exploration_c must be non-negative")


class ModelFault(RuntimeError):
    pass


class WorldModel(Protocol):
    def step_batch(self, states: Sequence[dict], action: dict,
                   rng: np.random.Generator) -> list[tuple[dict, bool] | ModelFault]: ...

    def is_valid(self, state: dict, action: dict) -> bool: ...


@dataclass
class HybridWorldModel:
    """Transition program for the deterministic stream, sampled CPDs for the rest."""

    schema: ObservationSchema
    program: TransitionProgram
    cpd: CpdBundle

    def __post_init__(self):
        self._det = self.schema.det_names
        self._sto = self.schema.sto_names
        from .cpd import topological_order

        self._order = topological_order(self.cpd.models)

    def split(self, state: dict) -> tuple[dict, dict]:
        return {k: state[k] for k in self._det}, {k: state[k] for k in self._sto}

    def is_valid(self, state: dict, action: dict) -> bool:
        det, sto = self.split(state)
        pred, fault = try_evaluate(self.program, det, sto, action)
        return fault is None and pred.valid

    def step_batch(self, states, action, rng):
        enc = self.cpd.encoder
        out: list[Any] = [None] * len(states)
        rows, ctx, preds = [], [], []
        for i, s in enumerate(states):
            det, sto = self.split(s)
            pred, fault = try_evaluate(self.program, det, sto, action)
            if fault is not None:
                out[i] = ModelFault(str(fault))
                continue
            rows.append(i)
            preds.append(pred)
            ctx.append(enc.context(det, sto, action, pred.det, pred.valid))
        if rows:
            try:
                samples = sample_joint_batch(self.cpd.models, enc, np.vstack(ctx), rng, self._order)
            except (SamplingError, ValueError, KeyError) as e:
                for i in rows:
                    out[i] = ModelFault(str(e))
                return out
            for i, pred, sto in zip(rows, preds, samples):
                # non-feature bookkeeping variables carry over unchanged
                nxt = {**states[i], **pred.det, **sto}
                out[i] = (nxt, pred.valid)
        return out


@dataclass
class SimulatorModel:
    """Ground-truth dynamics exposed through the world-model interface."""

    step_fn: Callable[[dict, dict, np.random.Generator], tuple[dict, bool]]
    valid_fn: Callable[[dict, dict], bool]

    def is_valid(self, state, action):
        return self.valid_fn(state, action)

    def step_batch(self, states, action, rng):
        return [self.step_fn(s, action, rng) for s in states]


# action proposals


class ActionHooks(Protocol):
    def sample(self, state: dict, rng: np.random.Generator) -> dict: ...

    def postprocess(self, actions: list[dict]) -> list[dict]: ...


class CoffeeHooks:
    """Restock quantities from a small menu and at most one price change per set."""

    PRICES = tuple(np.round(np.arange(1.0, 6.01, 0.5), 2).tolist())
    QUANTITIES = (10, 25, 50, 100)
    NAMES = ("set_price", "buy_beans", "buy_milk", "clean", "upgrade", "wait")

    def sample(self, state, rng):
        name = self.NAMES[int(rng.integers(len(self.NAMES)))]
        if name == "set_price":
            return {"name": name, "price": self.PRICES[int(rng.integers(len(self.PRICES)))]}
        if name in ("buy_beans", "buy_milk"):
            return {"name": name, "quantity": self.QUANTITIES[int(rng.integers(len(self.QUANTITIES)))]}
        return {"name": name}

    def postprocess(self, actions):
        out, priced = [], False
        for a in actions:
            if a["name"] == "set_price":
                if priced:
                    continue
                priced = True
            out.append(a)
        return out


def _key(action: dict) -> str:
    return json.dumps(action, sort_keys=True)


def propose_actions(state: dict, n: int, rng: np.random.Generator, hooks: ActionHooks,
                    model: WorldModel | None = None) -> list[dict]:
    """``wait`` first, then up to ``n - 1`` distinct sampled actions the model deems valid."""
    if n < 1:
        raise ValueError("n must be at least 1")
    seen = {_key(WAIT)}
    drawn = []
    for _ in range(n - 1):
        a = hooks.sample(state, rng)
        k = _key(a)
        if k in seen:
            continue
        seen.add(k)
        drawn.append(a)
    drawn = hooks.postprocess(drawn)
    if model is not None:
        drawn = [a for a in drawn if model.is_valid(state, a)]
    return [dict(WAIT)] + drawn[: n - 1]


def rollout_batch(model: WorldModel, state: dict, actions: Sequence[dict], k: int, horizon: int,
                  rng: np.random.Generator, fault_value: float = FAULT_VALUE,
                  money_key: str = "money") -> tuple[list[float], dict | None]:
    """``k`` lockstep rollouts of ``actions`` padded with ``wait`` to ``horizon``.

    Returns terminal money per rollout and the first rollout's state right
    after the given actions (used to propose the next layer of actions).
    """
    if len(actions) > horizon:
        raise ValueError("action sequence longer than the horizon")
    states: list[dict | None] = [dict(state) for _ in range(k)]
    after = dict(state) if not actions else None
    plan = list(actions) + [WAIT] * (horizon - len(actions))
    for t, a in enumerate(plan):
        live = [i for i, s in enumerate(states) if s is not None]
        if not live:
            break
        res = model.step_batch([states[i] for i in live], a, rng)
        for i, r in zip(live, res):
            states[i] = None if isinstance(r, ModelFault) else r[0]
        if t + 1 == len(actions):
            after = states[0]
    values = [fault_value if s is None else float(s[money_key]) for s in states]
    return values, after


def rollout(model: WorldModel, state: dict, actions: Sequence[dict], rng: np.random.Generator,
            fault_value: float = FAULT_VALUE, money_key: str = "money") -> float:
    """Terminal money after executing exactly ``actions``."""
    return rollout_batch(model, state, actions, 1, len(actions), rng, fault_value, money_key)[0][0]


@dataclass
class SearchNode:
    prefix: tuple
    parent: "SearchNode | None" = None
    children: list = field(default_factory=list)
    visits: int = 0
    value_sum: float = 0.0
    proposals: list | None = None
    state_hint: dict | None = None

    @property
    def depth(self) -> int:
        return len(self.prefix)

    @property
    def mean(self) -> float:
        return self.value_sum / self.visits if self.visits else 0.0


def uct_select(node: SearchNode, c: float, lo: float, hi: float) -> SearchNode:
    """Unvisited children first (in order); otherwise the maximal UCT score."""
    for ch in node.children:
        if ch.visits == 0:
            return ch
    span = hi - lo
    log_n = math.log(node.visits) if node.visits > 0 else 0.0
    best, best_v = None, -math.inf
    for ch in node.children:
        norm = (ch.mean - lo) / span if span > 0 else 0.5
        v = norm + c * math.sqrt(log_n / ch.visits)
        if v > best_v:
            best, best_v = ch, v
    return best


def best_root_action(root: SearchNode) -> dict:
    """Highest mean value; ties by visit count, then proposal order."""
    visited = [(i, ch) for i, ch in enumerate(root.children) if ch.visits > 0]
    if not visited:
        return dict(root.proposals[0]) if root.proposals else dict(WAIT)
    i, ch = max(visited, key=lambda p: (p[1].mean, p[1].visits, -p[0]))
    return dict(ch.prefix[-1])


def plan_step(model: WorldModel, state: dict, cfg: PlanConfig, rng: np.random.Generator,
              hooks: ActionHooks | None = None, money_key: str = "money") -> tuple[dict, SearchNode]:
    hooks = hooks or CoffeeHooks()
    root = SearchNode(())
    root.state_hint = dict(state)
    lo, hi = math.inf, -math.inf
    for _ in range(cfg.iterations):
        node = root
        while node.depth < cfg.horizon:
            if node.proposals is None:
                hint = node.state_hint if node.state_hint is not None else state
                node.proposals = propose_actions(hint, cfg.actions_per_node, rng, hooks, model)
            if len(node.children) < len(node.proposals):
                a = node.proposals[len(node.children)]
                child = SearchNode(node.prefix + (a,), node)
                node.children.append(child)
                node = child
                break
            if not node.children:
                break
            node = uct_select(node, cfg.exploration_c, lo, hi)
        values, after = rollout_batch(model, state, [dict(a) for a in node.prefix], cfg.rollouts_per_node,
                                      cfg.horizon, rng, cfg.fault_value, money_key)
        if node.state_hint is None:
            node.state_hint = after
        value = float(np.mean(values))
        lo, hi = min(lo, value), max(hi, value)
        while node is not None:
            node.visits += 1
            node.value_sum += value
            node = node.parent
    return best_root_action(root), root


@dataclass
class EpisodeResult:
    log: list[dict]
    final_money: float
    survived: dict

    def to_json(self) -> dict:
        return {"final_money": self.final_money, "survived": self.survived, "log": self.log}


def run_episode(env, model: WorldModel | None, cfg: PlanConfig, days: int = 50,
                policy: Callable[[dict, np.random.Generator], dict] | None = None,
                hooks: ActionHooks | None = None, money_key: str = "money") -> EpisodeResult:
    """MPC against ``env`` (``reset`` already done). ``policy`` overrides the planner."""
    rng = np.random.default_rng(cfg.seed)
    state = dict(env.state)
    rows = []
    for day in range(1, days + 1):
        if policy is not None:
            action = policy(state, rng)
        else:
            action, _ = plan_step(model, state, cfg, rng, hooks, money_key)
        state, valid = env.step(action)
        rows.append({"day": day, "action": action, "money": state[money_key], "valid": valid})
    survived = {}
    for d in (10, 20, 30, 40, 50):
        if d <= days:
            survived[str(d)] = all(r[money_key] >= 0 for r in rows[:d])
    return EpisodeResult(rows, float(state[money_key]), survived)


def write_episode_log(result: EpisodeResult, fh, meta: dict | None = None) -> None:
    if meta is not None:
        fh.write(json.dumps({"_meta": meta}, sort_keys=True) + "\n")
    for row in result.log:
        fh.write(json.dumps(row, sort_keys=True) + "\n")
