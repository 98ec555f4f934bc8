"""PatchScript programs and the scripted oracle fixture for the coffee shop.

``reference_program`` reproduces the simulator's deterministic stream and
action validity exactly. ``oracle_fixture`` plays the part of a knowledge
oracle: it drafts a plausible but flawed first program, answers repair
requests with a mix of fixes and decoys, and encodes common-sense beliefs
about which variables drive which.
"""

from __future__ import annotations

from ..program import TransitionProgram


def _fn(fid, kind, body, action=None, summary=""):
    out = {"id": fid, "kind": kind, "description": {"summary": summary} if summary else {}, "body": body}
    if action is not None:
        out["action_name"] = action
    return out


DAY = _fn("advance_day", "dynamic", 'emit replace "/day" (get "/day" + 1)', summary="one day passes")

PRE_PRICE = _fn("can_set_price", "precondition",
                'let p = aget "/price"\n'
                'return (p >= 0.5 and p <= 10, "price must be between 0.5 and 10")', "set_price")
PRE_BEANS = _fn("can_buy_beans", "precondition",
                'let q = aget "/quantity"\n'
                'return (q > 0 and get "/money" >= q * 0.5, "not enough money for " + str(q) + " beans")',
                "buy_beans")
PRE_MILK = _fn("can_buy_milk", "precondition",
               'let q = aget "/quantity"\n'
               'return (q > 0 and get "/money" >= q * 0.3, "not enough money for " + str(q) + " milk")',
               "buy_milk")
PRE_UPGRADE = _fn("can_upgrade", "precondition",
                  'let level = get "/upgrade_level"\n'
                  'if level >= 3 { return (false, "already fully upgraded") }\n'
                  'return (get "/money" >= 500 * (level + 1), "upgrade costs " + str(500 * (level + 1)))',
                  "upgrade")

SET_PRICE = _fn("do_set_price", "action", 'emit replace "/price" aget "/price"', "set_price")
UPGRADE = _fn("do_upgrade", "action", 'emit replace "/upgrade_level" (get "/upgrade_level" + 1)', "upgrade")
NO_OPS = [_fn(f"do_{a}", "action", "", a) for a in ("buy_beans", "buy_milk", "clean", "wait")]

REFERENCE = [DAY, PRE_PRICE, PRE_BEANS, PRE_MILK, PRE_UPGRADE, SET_PRICE, UPGRADE, *NO_OPS]

# first draft: prices in cents, beans priced like a full cup, milk and
# upgrades never checked
DRAFT = [
    DAY,
    PRE_PRICE,
    _fn("can_buy_beans", "precondition",
        'return (get "/money" >= aget "/quantity" * 1.0, "not enough money for beans")', "buy_beans"),
    _fn("do_set_price", "action", 'emit replace "/price" (aget "/price" * 100)', "set_price"),
    UPGRADE,
    *NO_OPS,
]


def reference_program() -> TransitionProgram:
    return TransitionProgram.from_json({"functions": REFERENCE})


def draft_program() -> TransitionProgram:
    return TransitionProgram.from_json({"functions": DRAFT})


def _replace(fn, body=None):
    new = dict(fn)
    if body is not None:
        new["body"] = body
    return {"op": "replace", "target_id": fn["id"], "function": new}


REFINEMENT_RULES = [
    {"match": {"error_kind": "E_od", "action": "set_price"},
     "candidates": [
         _replace(SET_PRICE, 'emit replace "/price" (aget "/price" * 10)'),
         _replace(SET_PRICE),
         {"op": "remove", "target_id": "do_set_price"},
     ]},
    {"match": {"error_kind": "E_od", "action": "upgrade"},
     "candidates": [
         _replace(UPGRADE, 'emit replace "/upgrade_level" (get "/upgrade_level" + 3)'),
         _replace(UPGRADE),
     ]},
    {"match": {"error_kind": "E_pf", "action": "buy_beans"},
     "candidates": [
         _replace(PRE_BEANS, 'return (get "/money" >= aget "/quantity" * 0.8, "not enough money for beans")'),
         _replace(PRE_BEANS),
         {"op": "remove", "target_id": "can_buy_beans"},
     ]},
    {"match": {"error_kind": "E_ps", "action": "buy_milk"},
     "candidates": [
         {"op": "add", "function": _fn("can_buy_milk", "precondition",
                                       'return (get "/money" >= aget "/quantity" * 0.3 + 50, "keep a cushion")',
                                       "buy_milk")},
         {"op": "add", "function": PRE_MILK},
     ]},
    {"match": {"error_kind": "E_pf", "action": "buy_milk"},
     "candidates": [_replace(PRE_MILK)]},
    {"match": {"error_kind": "E_pf", "action": "upgrade"},
     "candidates": [
         _replace(PRE_UPGRADE, 'return (get "/money" >= 500, "upgrades cost 500")'),
         _replace(PRE_UPGRADE),
     ]},
    {"match": {"error_kind": "E_ps", "action": "upgrade"},
     "candidates": [
         {"op": "add", "function": _fn("can_upgrade", "precondition",
                                       'return (get "/money" >= 500, "upgrades cost 500")', "upgrade")},
         {"op": "add", "function": PRE_UPGRADE},
     ]},
]

# Beliefs an informed reader of the manual would hold. Conditioning
# variables (price, upgrade_level) may feed the nodes the manual ties them to.
ALLOWED_PARENTS = {
    "customers": ["satisfaction", "upgrade_level"],
    "money": ["customers", "price"],
    "coffee_beans": ["customers"],
    "milk": ["customers"],
    "cleanliness": ["customers"],
    "satisfaction": ["cleanliness", "price", "upgrade_level"],
}

# the drafted graph misses the same-day satisfaction -> customers link
TOPO_ORDERS = [
    ["price", "upgrade_level", "satisfaction", "customers", "coffee_beans", "milk", "money", "cleanliness"],
    ["upgrade_level", "price", "satisfaction", "customers", "money", "cleanliness", "milk", "coffee_beans"],
    ["price", "upgrade_level", "satisfaction", "customers", "cleanliness", "coffee_beans", "milk", "money"],
]
SEED_PARENTS = {
    "satisfaction": [["price"], ["price", "upgrade_level"]],
    "customers": [["upgrade_level"], ["price"], []],
    "money": [["customers", "price"], ["customers"]],
    "coffee_beans": [["customers"]],
    "milk": [["customers"], []],
    "cleanliness": [["customers"], []],
}


def oracle_fixture() -> dict:
    return {
        "rules": {
            "init_program": {"functions": DRAFT},
            "refinements": REFINEMENT_RULES,
            "plausibility": {"plausible": 0.0, "implausible": -12.0, "allowed_parents": ALLOWED_PARENTS},
            "topo_order": TOPO_ORDERS,
            "parents": SEED_PARENTS,
        }
    }
