import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridwm.coffeeshop import (
    DEFAULT_START,
    CoffeeConstants,
    CoffeeShopEnv,
    action_cost,
    coffee_schema,
    draft_program,
    generate_dataset,
    is_valid,
    oracle_fixture,
    reference_program,
    split,
    step,
)
from hybridwm.coffeeshop.agents import heuristic_action, random_action
from hybridwm.oracle import ScriptedOracle
from hybridwm.program import error_count
from hybridwm.schema import dump_trajectories, flatten, load_trajectories, validate

RNG = np.random.default_rng


def test_schema_shape():
    schema = coffee_schema()
    assert len(schema.names(features_only=True)) == 8
    assert len(schema.sto_names) == 6
    assert schema.names("deterministic", features_only=True) == ["price", "upgrade_level"]


def test_no_beans_no_service():
    state = dict(DEFAULT_START, coffee_beans=0, satisfaction=5.0)
    nxt, valid = step(state, {"name": "wait"}, RNG(0))
    assert valid and nxt["customers"] == 0


def test_zero_noise_reference_point():
    state = dict(DEFAULT_START, satisfaction=3.0, price=2.0, cleanliness=50.0, upgrade_level=0,
                 coffee_beans=100, milk=100)
    nxt, _ = step(state, {"name": "wait"}, RNG(0), noise=False)
    assert nxt["satisfaction"] == pytest.approx(3.0)
    assert nxt["customers"] == 10


def test_clean_adds_boost_before_litter():
    state = dict(DEFAULT_START, cleanliness=20.0, coffee_beans=100, milk=100, money=0.0)
    nxt, valid = step(state, {"name": "clean"}, RNG(0), noise=False)
    assert valid
    assert nxt["cleanliness"] == pytest.approx(20.0 + 60.0 - 0.3 * nxt["customers"])


def test_preconditions():
    s = dict(DEFAULT_START, money=10.0)
    assert not is_valid(s, {"name": "buy_beans", "quantity": 50})
    assert is_valid(s, {"name": "buy_beans", "quantity": 20})
    assert not is_valid(s, {"name": "upgrade"})
    assert is_valid(dict(s, money=1000.0, upgrade_level=1), {"name": "upgrade"})
    assert not is_valid(dict(s, money=1e6, upgrade_level=3), {"name": "upgrade"})
    assert not is_valid(s, {"name": "set_price", "price": 11})
    assert not is_valid(s, {"name": "dance"})


def test_invalid_action_changes_only_dynamics():
    s = dict(DEFAULT_START, money=10.0)
    a, _ = step(s, {"name": "upgrade"}, RNG(3))
    b, _ = step(s, {"name": "wait"}, RNG(3))
    assert a == b


def test_episodes_zero_and_counts():
    assert generate_dataset(episodes=0) == []
    data = generate_dataset("epsilon_random", episodes=100, horizon=50, seed=1)
    assert len(flatten(data)) == 5000


def test_dataset_deterministic(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    for path in (a, b):
        with open(path, "w") as fh:
            dump_trajectories(generate_dataset("epsilon_random", 5, 20, seed=9), fh)
    assert a.read_bytes() == b.read_bytes()
    again = load_trajectories(a, coffee_schema())
    assert len(again) == 5 and len(again[0]) == 20


def test_one_trajectory_round_trip(tmp_path):
    path = tmp_path / "t.jsonl"
    with open(path, "w") as fh:
        dump_trajectories(generate_dataset("heuristic", 1, 50, seed=2), fh)
    assert [len(t) for t in load_trajectories(path, coffee_schema())] == [50]


_state = st.fixed_dictionaries({
    "day": st.integers(0, 100),
    "price": st.floats(0.5, 10),
    "upgrade_level": st.integers(0, 3),
    "money": st.floats(-2000, 5000),
    "coffee_beans": st.integers(0, 200),
    "milk": st.integers(0, 200),
    "customers": st.integers(0, 60),
    "satisfaction": st.floats(1, 5),
    "cleanliness": st.floats(0, 100),
})


@settings(max_examples=200, deadline=None)
@given(_state, st.integers(0, 2**32 - 1), st.integers(0, 10**6))
def test_conservation_and_bounds(state, action_seed, seed):
    action = random_action(state, RNG(action_seed))
    nxt, valid = step(state, action, RNG(seed))
    spend = action_cost(state, action) if valid else 0.0
    price = nxt["price"]
    assert nxt["money"] - state["money"] == pytest.approx(nxt["customers"] * price - 20.0 - spend, abs=1e-9)
    assert nxt["coffee_beans"] >= 0 and nxt["milk"] >= 0
    assert validate(nxt, coffee_schema()) == []


def test_rollout_seeded_determinism():
    def run(seed):
        env = CoffeeShopEnv(seed)
        return [env.step(heuristic_action(env.state))[0]["money"] for _ in range(30)]

    assert run(4) == run(4)
    assert run(4) != run(5)


def test_planted_same_day_edge():
    # residual of customers on same-day satisfaction, controlling for yesterday
    recs = flatten(generate_dataset("epsilon_random", 60, 50, seed=3))
    rows = [r for r in recs if r.valid and r.prev_sto["coffee_beans"] > 60 and r.prev_sto["milk"] > 60]
    y = np.array([r.next_sto["customers"] for r in rows], float)
    x = np.array([[1.0, r.prev_sto["satisfaction"], r.next_det["upgrade_level"], r.next_det["price"],
                   r.prev_sto["cleanliness"], r.next_sto["satisfaction"]] for r in rows])
    coef, *_ = np.linalg.lstsq(x, y, rcond=None)
    assert coef[-1] > 5.0


def test_reference_program_is_exact():
    recs = flatten(generate_dataset("epsilon_random", 30, 50, seed=4))
    assert error_count(reference_program(), recs) == 0
    assert error_count(draft_program(), recs) > 0


def test_fixture_drafts_the_draft():
    program = ScriptedOracle(oracle_fixture()).init_program(coffee_schema())
    assert program == draft_program()


def test_constants_override():
    env = CoffeeShopEnv(0).with_constants(fixed_cost=0.0)
    assert env.const.fixed_cost == 0.0 and CoffeeConstants().fixed_cost == 20.0


def test_split():
    det, sto = split(DEFAULT_START)
    assert set(det) == {"day", "price", "upgrade_level"} and len(sto) == 6
