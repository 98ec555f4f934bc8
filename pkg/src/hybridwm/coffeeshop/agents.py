"""Behaviour policies and dataset generation."""

from __future__ import annotations

from typing import Callable

import numpy as np

from ..schema import TransitionRecord
from .env import ACTIONS, DEFAULT_START, CoffeeConstants, split, step

PRICE_MENU = tuple(np.round(np.arange(1.0, 6.01, 0.5), 2).tolist())
QUANTITY_MENU = (10, 25, 50, 100)
RESTOCK = 50

Policy = Callable[[dict, np.random.Generator], dict]


def heuristic_action(state: dict, rng: np.random.Generator | None = None) -> dict:
    """Restock below 10 units, clean below 40, otherwise wait."""
    if state["coffee_beans"] < 10:
        return {"name": "buy_beans", "quantity": RESTOCK}
    if state["milk"] < 10:
        return {"name": "buy_milk", "quantity": RESTOCK}
    if state["cleanliness"] < 40:
        return {"name": "clean"}
    return {"name": "wait"}


def random_action(state: dict, rng: np.random.Generator) -> dict:
    name = ACTIONS[int(rng.integers(len(ACTIONS)))]
    if name == "set_price":
        return {"name": name, "price": PRICE_MENU[int(rng.integers(len(PRICE_MENU)))]}
    if name in ("buy_beans", "buy_milk"):
        return {"name": name, "quantity": QUANTITY_MENU[int(rng.integers(len(QUANTITY_MENU)))]}
    return {"name": name}


def epsilon_random(epsilon: float) -> Policy:
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")

    def policy(state: dict, rng: np.random.Generator) -> dict:
        if rng.random() < epsilon:
            return random_action(state, rng)
        return heuristic_action(state, rng)

    return policy


def wait_policy(state: dict, rng: np.random.Generator | None = None) -> dict:
    return {"name": "wait"}


def random_start(rng: np.random.Generator) -> dict:
    """Varied starting shops so every regime shows up in the data."""
    return {
        "day": 0,
        "price": PRICE_MENU[int(rng.integers(len(PRICE_MENU)))],
        "upgrade_level": int(rng.integers(0, 4)),
        "money": float(rng.integers(100, 3001)),
        "coffee_beans": int(rng.integers(10, 81)),
        "milk": int(rng.integers(10, 81)),
        "customers": 0,
        "satisfaction": float(np.round(rng.uniform(2.0, 4.0), 3)),
        "cleanliness": float(np.round(rng.uniform(40.0, 100.0), 3)),
    }


def run_episode(policy: Policy, horizon: int, env_rng: np.random.Generator, policy_rng: np.random.Generator,
                start: dict, trajectory_id=None, const: CoffeeConstants = CoffeeConstants()) -> list[TransitionRecord]:
    state = dict(start)
    out = []
    for t in range(horizon):
        action = policy(state, policy_rng)
        nxt, valid = step(state, action, env_rng, const)
        pd, ps = split(state)
        nd, ns = split(nxt)
        out.append(TransitionRecord(pd, ps, action, valid, nd, ns, trajectory_id, t))
        state = nxt
    return out


def generate_dataset(policy: str = "heuristic", episodes: int = 100, horizon: int = 50, seed: int = 0,
                     epsilon: float = 0.3, randomize_start: bool = True,
                     const: CoffeeConstants = CoffeeConstants()) -> list[list[TransitionRecord]]:
    """``episodes`` trajectories of ``horizon`` days, reproducible from ``seed``.

    ``policy`` is ``"heuristic"`` or ``"epsilon_random"`` (heuristic with an
    ``epsilon`` chance of a uniformly random action).
    """
    if policy == "heuristic":
        pol: Policy = heuristic_action
    elif policy == "epsilon_random":
        pol = epsilon_random(epsilon)
    else:
        raise ValueError(f"unknown policy {policy!r}")
    trajectories = []
    for i, child in enumerate(np.random.SeedSequence(seed).spawn(episodes)):
        env_ss, pol_ss, start_ss = child.spawn(3)
        start = random_start(np.random.default_rng(start_ss)) if randomize_start else dict(DEFAULT_START)
        trajectories.append(run_episode(pol, horizon, np.random.default_rng(env_ss),
                                        np.random.default_rng(pol_ss), start, i, const))
    return trajectories


def split_episodes(trajectories: list, train_fraction: float = 0.9) -> tuple[list, list]:
    n = int(round(len(trajectories) * train_fraction))
    return trajectories[:n], trajectories[n:]
