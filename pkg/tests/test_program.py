import json

import pytest

from hybridwm.program import (
    EvaluationFault,
    FunctionDef,
    ProgramError,
    TransitionProgram,
    check_record,
    classify_error,
    evaluate,
    try_evaluate,
)
from hybridwm.schema import TransitionRecord

DAY = FunctionDef("dyn", "dynamic", 'emit replace "/day" (get "/day" + 1)')


def program(*fns):
    return TransitionProgram((DAY,) + fns)


def test_wait_advances_day():
    pred = evaluate(program(), {"day": 3, "money": 10}, {"customers": 4}, {"name": "wait"})
    assert pred.valid is True
    assert pred.det == {"day": 4, "money": 10}


def test_failed_precondition_blocks_action_but_not_dynamic():
    prog = program(
        FunctionDef("pre", "precondition", 'return (get "/money" >= 100, "insufficient funds")', "buy_coffee"),
        FunctionDef("act", "action", 'emit replace "/money" (get "/money" - 100)', "buy_coffee"),
    )
    pred = evaluate(prog, {"day": 0, "money": 50}, {}, {"name": "buy_coffee"})
    assert (pred.valid, pred.feedback) == (False, "insufficient funds")
    assert pred.det == {"day": 1, "money": 50}
    pred = evaluate(prog, {"day": 0, "money": 150}, {}, {"name": "buy_coffee"})
    assert pred.valid and pred.det == {"day": 1, "money": 50}


def test_first_failing_precondition_wins():
    prog = program(
        FunctionDef("p1", "precondition", 'return (false, "first")', "a"),
        FunctionDef("p2", "precondition", 'return (false, "second")', "a"),
    )
    assert evaluate(prog, {"day": 0}, {}, {"name": "a"}).feedback == "first"


def test_dynamic_sees_post_action_state():
    prog = TransitionProgram(
        (
            FunctionDef("dyn", "dynamic", 'emit replace "/b" (get "/a" * 10)'),
            FunctionDef("act", "action", 'emit replace "/a" aget "/v"', "set"),
        )
    )
    assert evaluate(prog, {"a": 1, "b": 0}, {}, {"name": "set", "v": 2}).det == {"a": 2, "b": 20}


def test_reads_stochastic_state_but_cannot_write_it():
    prog = program(FunctionDef("act", "action", 'emit replace "/money" (get "/money" + get "/customers")', "sell"))
    assert evaluate(prog, {"day": 0, "money": 1}, {"customers": 5}, {"name": "sell"}).det["money"] == 6
    bad = program(FunctionDef("act", "action", 'emit replace "/customers" 0', "sell"))
    with pytest.raises(EvaluationFault) as e:
        evaluate(bad, {"day": 0}, {"customers": 5}, {"name": "sell"})
    assert e.value.function_id == "act"


def test_division_by_zero_is_exec_error():
    prog = program(FunctionDef("act", "action", 'emit replace "/money" (get "/money" / 0)', "x"))
    pred, fault = try_evaluate(prog, {"day": 0, "money": 1}, {}, {"name": "x"})
    assert pred is None
    err = classify_error(None, None, {"day": 1, "money": 1}, True, fault)
    assert err.kind == "E_exec" and err.function_id == "act"


def test_patch_failure_is_fault():
    prog = program(FunctionDef("act", "action", 'emit remove "/nope"', "x"))
    with pytest.raises(EvaluationFault):
        evaluate(prog, {"day": 0}, {}, {"name": "x"})


def test_classify_precedence():
    assert classify_error({"a": 1}, False, {"a": 2}, True).kind == "E_pf"
    assert classify_error({"a": 1}, True, {"a": 2}, False).kind == "E_ps"
    err = classify_error({"a": 1}, True, {"a": 2}, True)
    assert err.kind == "E_od" and [str(d.path) for d in err.diff] == ["/a"]
    assert classify_error({"a": 1}, True, {"a": 1.0}, True) is None


def test_check_record():
    rec = TransitionRecord({"day": 0}, {}, {"name": "wait"}, True, {"day": 2}, {})
    pred, err = check_record(program(), rec)
    assert pred.det == {"day": 1} and err.kind == "E_od"


def test_structure_rules():
    with pytest.raises(ProgramError):
        TransitionProgram(())
    with pytest.raises(ProgramError):
        TransitionProgram((DAY, DAY))
    with pytest.raises(ProgramError):
        program(FunctionDef("a1", "action", 'emit remove "/x"', "a"), FunctionDef("a2", "action", 'emit remove "/y"', "a"))
    with pytest.raises(ProgramError):
        FunctionDef("p", "precondition", 'return (true, "")')
    with pytest.raises(ProgramError):
        program(FunctionDef("p", "precondition", 'return (true, "")', "fly")).check_actions(["wait"])


def test_bundle_roundtrip(tmp_path):
    prog = program(FunctionDef("p", "precondition", 'return (true, "ok")', "a", {"text": "always"}))
    path = tmp_path / "prog.json"
    path.write_text(prog.dumps({"seed": 1}))
    again = TransitionProgram.load(path)
    assert again == prog
    assert again["p"].description == {"text": "always"}
    assert json.loads(path.read_text())["version"] == 1


def test_bundle_rejects_bad_bodies():
    with pytest.raises(ProgramError, match="bad"):
        TransitionProgram.from_json({"functions": [DAY.to_json(), {"id": "bad", "kind": "action", "action_name": "a", "body": "emit"}]})


def test_one_function_edits():
    prog = program()
    fn = FunctionDef("p", "precondition", 'return (false, "no")', "a")
    added = prog.with_added(fn)
    assert "p" in added and "p" not in prog
    assert "p" not in added.with_removed("p")
    fn2 = FunctionDef("p", "precondition", 'return (true, "yes")', "a")
    assert added.with_replaced("p", fn2)["p"].body == fn2.body
