import pytest
from hypothesis import given, settings, strategies as st

from hybridwm.doc import PatchOp, Pointer
from hybridwm.patchscript import (
    PatchScriptSyntaxError,
    RuntimeFault,
    UnboundIdentifier,
    compile_source,
)


def patch(src, state, action=None, **kw):
    return compile_source(src, "action").run_patch(state, action or {}, **kw)


def check(src, state, action=None):
    return compile_source(src, "precondition").run_check(state, action or {})


def test_emit_replace_action_body():
    ops = patch('emit replace "/money" (get "/money" - 100)', {"money": 250})
    assert ops == [PatchOp("replace", Pointer.parse("/money"), 150.0)]


def test_precondition_tuple():
    src = 'return (get "/money" >= 100, "insufficient funds")'
    assert check(src, {"money": 50}) == (False, "insufficient funds")
    assert check(src, {"money": 100}) == (True, "insufficient funds")


@pytest.mark.parametrize(
    "src",
    [
        "emit replace",
        'emit replace "/money"',
        'emit move "/a" 1',
        'let x = ',
        'return (true)',
        'if true { emit remove "/a"',
        '"dangling"',
        'let x = 1 +',
        'emit add "/x" min(1)',
    ],
)
def test_syntax_errors(src):
    with pytest.raises(PatchScriptSyntaxError) as e:
        compile_source(src, "action")
    assert e.value.line >= 1


def test_error_position_points_at_line():
    with pytest.raises(PatchScriptSyntaxError) as e:
        compile_source('let a = 1\nlet b = (2\n', "action")
    assert e.value.line in (2, 3)


def test_unbound_identifier():
    with pytest.raises(UnboundIdentifier):
        compile_source('emit replace "/a" y', "action")


def test_no_rebinding():
    with pytest.raises(Exception):
        compile_source('let a = 1\nlet a = 2', "action")


def test_kind_rules():
    with pytest.raises(Exception):
        compile_source('emit remove "/a"', "precondition")
    with pytest.raises(Exception):
        compile_source('return (true, "x")', "action")
    with pytest.raises(Exception):
        compile_source('emit replace "/a" aget "/q"', "dynamic")
    compile_source('emit replace "/a" aget "/q"', "action")


def test_division_by_zero_faults():
    with pytest.raises(RuntimeFault, match="division by zero"):
        patch('emit replace "/a" (1 / 0)', {"a": 1})


def test_missing_path_faults_unless_default():
    with pytest.raises(RuntimeFault):
        patch('emit replace "/a" get "/nope"', {"a": 1})
    assert patch('emit replace "/a" get "/nope" default 7', {"a": 1})[0].value == 7


def test_type_errors_fault():
    with pytest.raises(RuntimeFault):
        patch('emit replace "/a" (get "/s" + 1)', {"s": "x"})
    with pytest.raises(RuntimeFault):
        patch('if 1 { emit remove "/a" }', {"a": 1})


def test_step_budget():
    src = 'emit replace "/a" sum(x in get "/xs" : x * 2)'
    state = {"xs": list(range(100))}
    assert patch(src, state)[0].value == 9900
    with pytest.raises(RuntimeFault, match="budget"):
        patch(src, state, budget=50)


def test_control_flow_and_aggregates():
    src = """
    # restock
    let q = aget "/quantity"
    let cheap = filter(p in get "/prices" : p < 3)
    if q > 10 {
        emit replace "/beans" (get "/beans" + q)
    } else if q > 0 {
        emit replace "/beans" (get "/beans" + q * 2)
    } else {
        emit remove "/beans"
    }
    emit add "/n_cheap" len(cheap)
    emit add "/any" any(p in get "/prices" : p > 4)
    emit add "/r" (if count(p in get "/prices" : p > 1) == 2 then round(2.5) else clamp(9, 0, 5))
    emit add "/label" ("q=" + str(q))
    """
    ops = patch(src, {"beans": 1, "prices": [1, 2, 5]}, {"quantity": 3})
    vals = {str(o.path): o.value for o in ops}
    assert vals == {"/beans": 7.0, "/n_cheap": 2.0, "/any": True, "/r": 3.0, "/label": "q=3"}


def test_bool_is_not_number():
    assert check('return (true == 1, "m")', {}) == (False, "m")


def test_precondition_must_return():
    with pytest.raises(RuntimeFault):
        compile_source('let a = 1', "precondition").run_check({}, {})


def test_dynamic_pointer():
    ops = patch('let k = "day"\nemit replace ("/" + k) (get ("/" + k) + 1)', {"day": 4})
    assert ops[0].path == ("day",) and ops[0].value == 5


@settings(max_examples=200, deadline=None)
@given(
    st.integers(-1000, 1000),
    st.integers(-1000, 1000),
    st.sampled_from(["+", "-", "*"]),
)
def test_arithmetic_matches_python(a, b, op):
    ops = patch(f'emit replace "/r" (get "/a" {op} get "/b")', {"a": a, "b": b})
    assert ops[0].value == eval(f"{a} {op} {b}")


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=30))
def test_arbitrary_input_never_crashes_parser(src):
    try:
        compile_source(src)
    except Exception as e:
        from hybridwm.patchscript import PatchScriptError

        assert isinstance(e, PatchScriptError)
