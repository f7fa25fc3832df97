import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from prunesim.grammar import (
    GrammarSyntaxError,
    ResourceError,
    TurtleConfig,
    format_grammar,
    interpret,
    parse_grammar,
    parse_symbols,
    rewrite,
)


def test_minimal_grammar():
    g = parse_grammar("axiom: A(1); A(l) -> F(l) A(l*0.9);")
    assert len(g.rules) == 1
    assert rewrite(g, 0, np.random.default_rng(0)).serialize() == parse_symbols("A(1)").serialize()


def test_unbalanced_successor_reports_position():
    with pytest.raises(GrammarSyntaxError) as exc:
        parse_grammar("axiom: A; A -> [")
    assert exc.value.line == 1
    assert exc.value.col > 0


def test_undeclared_parameter():
    with pytest.raises(GrammarSyntaxError, match="undeclared"):
        parse_grammar("axiom: A; A -> F(x);")


def test_guard_blocks_rewrite():
    g = parse_grammar("axiom: A(0.04); A(l) : l > 0.05 -> F(l) A(l*0.8);")
    out = rewrite(g, 3, np.random.default_rng(0))
    assert out.serialize() == parse_symbols("A(0.04)").serialize()


def test_guard_allows_rewrite_until_threshold():
    g = parse_grammar("axiom: A(0.1); A(l) : l > 0.05 -> F(l) A(l*0.5);")
    out = rewrite(g, 5, np.random.default_rng(0))
    assert [s.name for s in out.symbols] == ["F", "A"]
    assert out.symbols[1].params[0] == pytest.approx(0.05)


def test_doubling_rule():
    g = parse_grammar("axiom: A; A -> A A;")
    assert len(rewrite(g, 3, np.random.default_rng(0))) == 8


def test_symbol_budget():
    g = parse_grammar("axiom: A; A -> A A;")
    with pytest.raises(ResourceError):
        rewrite(g, 30, np.random.default_rng(0))


def test_stochastic_rule_is_seeded():
    g = parse_grammar("axiom: A; A -> 1: A B | 1: B A;")
    a = rewrite(g, 8, np.random.default_rng(5)).serialize()
    b = rewrite(g, 8, np.random.default_rng(5)).serialize()
    assert a == b
    assert a != rewrite(g, 8, np.random.default_rng(6)).serialize()


def test_single_step_turtle():
    sk = interpret(parse_symbols("F(1)"))
    assert len(sk) == 1
    np.testing.assert_allclose(sk.start[0], [0, 0, 0], atol=1e-15)
    np.testing.assert_allclose(sk.end[0], [0, 0, 1], atol=1e-15)


def test_branch_is_orthogonal():
    sk = interpret(parse_symbols("F(1) [ +(90) F(1) ] F(1)"))
    assert len(sk) == 3
    d = sk.end - sk.start
    assert abs(d[1] @ d[0]) < 1e-12 and abs(d[1] @ d[2]) < 1e-12
    assert list(sk.depth) == [0, 1, 0]
    np.testing.assert_allclose(sk.start[1], sk.end[0], atol=1e-12)
    np.testing.assert_allclose(sk.start[2], sk.end[0], atol=1e-12)


def test_empty_string():
    assert len(interpret(parse_symbols(""))) == 0


def test_radius_never_grows_toward_tips():
    sk = interpret(parse_symbols("!(0.02) F(1) [ !(0.05) F(1) ] !(0.01) F(1)"))
    for i, p in enumerate(sk.parent):
        if p >= 0:
            assert sk.r_start[i] <= sk.r_end[p] + 1e-15
        assert sk.r_start[i] > 0 and sk.r_end[i] > 0


# ------------------------------------------------------------------ properties

_NAMES = ["A", "B", "C"]


@st.composite
def grammars(draw):
    consts = draw(st.dictionaries(st.sampled_from(["k", "m"]), st.floats(0.1, 5, allow_nan=False), max_size=2))
    lines = [f"const {k} = {v!r};" for k, v in consts.items()]
    lines.append("axiom: " + " ".join(f"{n}(1)" for n in draw(st.lists(st.sampled_from(_NAMES), min_size=1, max_size=3))) + ";")
    for name in draw(st.lists(st.sampled_from(_NAMES), min_size=1, max_size=3, unique=True)):
        names = list(consts) + ["x"]
        succs = []
        for _ in range(draw(st.integers(1, 3))):
            syms = []
            for _ in range(draw(st.integers(1, 4))):
                op = draw(st.sampled_from(["+", "-", "*", "/"]))
                expr = f"{draw(st.sampled_from(names))} {op} {draw(st.floats(0.5, 3)):.3f}"
                kind = draw(st.sampled_from(["F", "+", "[", "A", "B"]))
                syms.append(f"[ F({expr}) ]" if kind == "[" else f"{kind}({expr})")
            w = draw(st.integers(1, 5))
            succs.append(f"{w}: " + " ".join(syms))
        guard = " : x > 0.1" if draw(st.booleans()) else ""
        lines.append(f"{name}(x){guard} -> " + " | ".join(succs) + ";")
    return "\n".join(lines)


@settings(max_examples=60, deadline=None)
@given(grammars())
def test_print_parse_round_trip(text):
    g = parse_grammar(text)
    printed = format_grammar(g)
    again = parse_grammar(printed)
    assert again == g
    assert format_grammar(again) == printed


@settings(max_examples=30, deadline=None)
@given(grammars(), st.integers(0, 2**32 - 1))
def test_rewrite_determinism(text, seed):
    g = parse_grammar(text)
    try:
        a = rewrite(g, 3, np.random.default_rng(seed), budget=20000).serialize()
    except ResourceError:
        return
    assert a == rewrite(g, 3, np.random.default_rng(seed), budget=20000).serialize()


_TURTLE = st.lists(
    st.one_of(
        st.tuples(st.just("F"), st.floats(0.1, 2)),
        st.tuples(st.sampled_from(["+", "-", "&", "^", "\\", "/"]), st.floats(-180, 180)),
    ),
    min_size=1,
    max_size=12,
)


def _text(ops):
    return " ".join(f"{n}({v!r})" for n, v in ops)


@settings(max_examples=60, deadline=None)
@given(_TURTLE, st.integers(0, 2**32 - 1))
def test_turtle_isometry(ops, seed):
    s = parse_symbols(_text(ops))
    base = TurtleConfig()
    R = Rotation.random(random_state=seed).as_matrix()
    rotated = TurtleConfig(frame=R @ base.frame)
    a, b = interpret(s, base), interpret(s, rotated)
    np.testing.assert_allclose(b.start, a.start @ R.T, atol=1e-9)
    np.testing.assert_allclose(b.end, a.end @ R.T, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(_TURTLE)
def test_segment_count_and_connectivity(ops):
    s = parse_symbols(_text(ops))
    sk = interpret(s)
    assert len(sk) == sum(1 for n, _ in ops if n == "F")
    assert np.allclose(sk.lengths, [v for n, v in ops if n == "F"], atol=1e-12)
    for i, p in enumerate(sk.parent):
        if p >= 0:
            assert np.linalg.norm(sk.start[i] - sk.end[p]) <= 1e-9


def test_angles_are_degrees():
    sk = interpret(parse_symbols("+(45) F(1)"))
    d = sk.end[0] - sk.start[0]
    assert math.degrees(math.acos(d @ [0, 0, 1])) == pytest.approx(45, abs=1e-9)
