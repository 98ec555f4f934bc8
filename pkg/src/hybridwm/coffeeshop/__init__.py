"""Coffee-shop business simulator used as the reference environment."""

from .agents import (
    epsilon_random,
    generate_dataset,
    heuristic_action,
    random_action,
    random_start,
    split_episodes,
    wait_policy,
)
from .env import (
    ACTIONS,
    DEFAULT_START,
    DET_VARS,
    MANUAL,
    STO_VARS,
    CoffeeConstants,
    CoffeeShopEnv,
    action_cost,
    coffee_schema,
    is_valid,
    split,
    step,
)
from .programs import draft_program, oracle_fixture, reference_program

__all__ = [
    "ACTIONS",
    "DEFAULT_START",
    "DET_VARS",
    "MANUAL",
    "STO_VARS",
    "CoffeeConstants",
    "CoffeeShopEnv",
    "action_cost",
    "coffee_schema",
    "draft_program",
    "epsilon_random",
    "generate_dataset",
    "heuristic_action",
    "is_valid",
    "oracle_fixture",
    "random_action",
    "random_start",
    "reference_program",
    "split",
    "split_episodes",
    "step",
    "wait_policy",
]
