"""Reference coffee-shop simulator.

One step is one business day. The deterministic stream (day, price,
upgrade_level) follows directly from the action; everything else is noisy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any

import numpy as np

from ..schema import ActionSpec, ObservationSchema, VariableSpec

DET_VARS = ("day", "price", "upgrade_level")
STO_VARS = ("money", "coffee_beans", "milk", "customers", "satisfaction", "cleanliness")
ACTIONS = ("set_price", "buy_beans", "buy_milk", "clean", "upgrade", "wait")
PRICE_RANGE = (0.5, 10.0)
MAX_UPGRADE = 3


@dataclass(frozen=True)
class CoffeeConstants:
    base_demand: float = 10.0
    upgrade_demand: float = 8.0
    satisfaction_demand: float = 4.0
    walk_in: float = 10.0  # extra customers per point of same-day satisfaction change
    demand_noise: float = 1.0
    satisfaction_memory: float = 0.7
    upgrade_quality: float = 0.5
    price_sensitivity: float = 0.6
    reference_price: float = 2.0
    cleanliness_quality: float = 0.02
    satisfaction_noise: float = 0.5
    fixed_cost: float = 20.0
    bean_cost: float = 0.5
    milk_cost: float = 0.3
    clean_cost: float = 15.0
    clean_boost: float = 60.0
    litter_per_customer: float = 0.3
    upgrade_base_cost: float = 500.0

    def upgrade_cost(self, level: int) -> float:
        return self.upgrade_base_cost * (level + 1)


DEFAULT_START = {
    "day": 0, "price": 2.0, "upgrade_level": 0,
    "money": 300.0, "coffee_beans": 40, "milk": 40, "customers": 0, "satisfaction": 3.0, "cleanliness": 80.0,
}


def split(state: dict) -> tuple[dict, dict]:
    return {k: state[k] for k in DET_VARS}, {k: state[k] for k in STO_VARS}


def action_cost(state: dict, action: dict, const: CoffeeConstants = CoffeeConstants()) -> float:
    name = action.get("name")
    if name == "buy_beans":
        return action["quantity"] * const.bean_cost
    if name == "buy_milk":
        return action["quantity"] * const.milk_cost
    if name == "clean":
        return const.clean_cost
    if name == "upgrade":
        return const.upgrade_cost(int(state["upgrade_level"]))
    return 0.0


def is_valid(state: dict, action: dict, const: CoffeeConstants = CoffeeConstants()) -> bool:
    name = action.get("name")
    if name not in ACTIONS:
        return False
    if name == "set_price":
        p = action.get("price")
        return isinstance(p, (int, float)) and PRICE_RANGE[0] <= p <= PRICE_RANGE[1]
    if name in ("buy_beans", "buy_milk"):
        q = action.get("quantity")
        if not isinstance(q, (int, float)) or q <= 0:
            return False
        return state["money"] >= action_cost(state, action, const)
    if name == "upgrade":
        level = int(state["upgrade_level"])
        return level < MAX_UPGRADE and state["money"] >= const.upgrade_cost(level)
    return True


def step(state: dict, action: dict, rng: np.random.Generator,
         const: CoffeeConstants = CoffeeConstants(), noise: bool = True) -> tuple[dict, bool]:
    """Advance one day. An invalid action has no effect and costs nothing."""
    valid = is_valid(state, action, const)
    name = action.get("name") if valid else "wait"
    price, level = float(state["price"]), int(state["upgrade_level"])
    beans, milk = int(state["coffee_beans"]), int(state["milk"])
    spend = action_cost(state, action, const) if valid else 0.0
    if name == "set_price":
        price = float(action["price"])
    elif name == "buy_beans":
        beans += int(action["quantity"])
    elif name == "buy_milk":
        milk += int(action["quantity"])
    elif name == "upgrade":
        level += 1

    eps_s, eps_d = (rng.normal(0.0, const.satisfaction_noise), rng.normal(0.0, const.demand_noise)) \
        if noise else (0.0, 0.0)
    sat = float(state["satisfaction"])
    clean = float(state["cleanliness"])
    quality = (3.0 + const.upgrade_quality * level - const.price_sensitivity * (price - const.reference_price)
               + const.cleanliness_quality * (clean - 50.0))
    m = const.satisfaction_memory
    sat_next = min(max(m * sat + (1 - m) * quality + eps_s, 1.0), 5.0)
    # word of mouth follows yesterday's mood; walk-ins react to today's
    demand = (const.base_demand + const.upgrade_demand * level + const.satisfaction_demand * (sat - 3.0)
              + const.walk_in * (sat_next - sat) + eps_d)
    served = min(max(int(math.floor(demand + 0.5)), 0), beans, milk)
    boost = const.clean_boost if name == "clean" else 0.0
    nxt = {
        "day": int(state["day"]) + 1,
        "price": price,
        "upgrade_level": level,
        "money": float(state["money"]) + served * price - const.fixed_cost - spend,
        "coffee_beans": beans - served,
        "milk": milk - served,
        "customers": served,
        "satisfaction": sat_next,
        "cleanliness": min(max(clean - const.litter_per_customer * served + boost, 0.0), 100.0),
    }
    return nxt, valid


@dataclass
class CoffeeShopEnv:
    """Stateful wrapper used by the planner and the data generators."""

    seed: int = 0
    const: CoffeeConstants = field(default_factory=CoffeeConstants)
    start: dict = field(default_factory=lambda: dict(DEFAULT_START))

    def __post_init__(self):
        self.reset(self.seed)

    def reset(self, seed: int | None = None, start: dict | None = None) -> dict:
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.state = dict(start or self.start)
        return dict(self.state)

    def step(self, action: dict) -> tuple[dict, bool]:
        self.state, valid = step(self.state, action, self.rng, self.const)
        return dict(self.state), valid

    def with_constants(self, **kw: Any) -> "CoffeeShopEnv":
        return CoffeeShopEnv(self.seed, replace(self.const, **kw), dict(self.start))


MANUAL = """\
You run a small coffee shop, one day at a time. Each morning you choose a
single action: set the price of a cup, buy coffee beans, buy milk, clean the
shop, buy an upgrade, or simply wait. Purchases and upgrades need enough
money in the till; if you cannot pay, nothing happens and the day goes on.
Upgrades come in three levels and each one costs more than the last.

Every cup uses one unit of beans and one unit of milk, so when either runs
out the shop cannot serve anyone, however busy it is. Money goes up with
every cup sold at the current price and down with the fixed daily running
cost and whatever you spent that morning.

Customers talk. Yesterday's mood spreads by word of mouth and decides how
many people plan to come, and better equipment draws a bigger crowd. The
mood of the day also matters: when satisfaction rises during a day, more
people walk in on the spot, and when it falls, some walk away.

Satisfaction drifts towards the quality of the shop: upgrades and a clean
room raise it, high prices lower it. Every customer leaves a little litter
behind, so the shop gets less clean the busier it gets until you clean it.
"""


def coffee_schema() -> ObservationSchema:
    v = VariableSpec
    variables = (
        v("day", "numerical", "deterministic", "days elapsed", lower=0, integer=True, feature=False),
        v("price", "numerical", "deterministic", "price of one cup", lower=PRICE_RANGE[0], upper=PRICE_RANGE[1]),
        v("upgrade_level", "numerical", "deterministic", "equipment upgrades bought", lower=0,
          upper=MAX_UPGRADE, integer=True),
        v("money", "numerical", "stochastic", "cash in the till"),
        v("coffee_beans", "numerical", "stochastic", "units of coffee beans in stock", lower=0, integer=True),
        v("milk", "numerical", "stochastic", "units of milk in stock", lower=0, integer=True),
        v("customers", "numerical", "stochastic", "customers served today", lower=0, integer=True),
        v("satisfaction", "numerical", "stochastic", "average customer satisfaction", lower=1, upper=5),
        v("cleanliness", "numerical", "stochastic", "how clean the shop is", lower=0, upper=100),
    )
    actions = (
        ActionSpec("set_price", {"price": {"lower": PRICE_RANGE[0], "upper": PRICE_RANGE[1]}}, "change the cup price"),
        ActionSpec("buy_beans", {"quantity": {"lower": 1, "upper": 200}}, "buy coffee beans"),
        ActionSpec("buy_milk", {"quantity": {"lower": 1, "upper": 200}}, "buy milk"),
        ActionSpec("clean", {}, "clean the shop"),
        ActionSpec("upgrade", {}, "buy the next equipment upgrade"),
        ActionSpec("wait", {}, "do nothing special"),
    )
    return ObservationSchema(variables, MANUAL, actions, "coffeeshop")
