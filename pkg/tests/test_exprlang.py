import numpy as np
import pytest

from metricflow.exprlang import (
    BinOp,
    Call,
    CoordinateChart,
    DomainError,
    ExprSyntaxError,
    Neg,
    Num,
    UnknownIdentifierError,
    Var,
    compile_scalar,
    count_nodes,
    differentiate,
    evaluate,
    evaluate_at,
    free_vars,
    parse,
    simplify,
    to_string,
)


def fd_derivative(e, chart, coords, time, name, h_rel=1e-6):
    """Central finite-difference oracle for d e / d name."""
    idx = None if name == "t" else chart.index(name)
    base = coords if idx is not None else time
    x0 = coords[idx] if idx is not None else time
    h = h_rel * max(1.0, abs(x0))

    def at(v):
        if idx is None:
            return evaluate_at(e, chart, coords, v)
        shifted = np.array(coords, dtype=float)
        shifted[idx] = v
        return evaluate_at(e, chart, shifted, time)

    return (at(x0 + h) - at(x0 - h)) / (2 * h)


class TestChart:
    def test_default_names(self):
        chart = CoordinateChart(2)
        assert chart.names == ("q1", "q2", "p1", "p2")
        assert chart.dim == 4

    def test_reserved_time(self):
        with pytest.raises(ValueError):
            CoordinateChart(1, ("q1", "t"))

    def test_duplicates_rejected(self):
        with pytest.raises(ValueError):
            CoordinateChart(1, ("a", "a"))

    def test_wrong_count(self):
        with pytest.raises(ValueError):
            CoordinateChart(2, ("a", "b"))


class TestParse:
    def test_oscillator_ast(self):
        chart = CoordinateChart(1)
        e = parse("p1^2/2 + q1^2/2", chart)
        expected = BinOp(
            "+",
            BinOp("/", BinOp("^", Var("p1"), Num(2.0)), Num(2.0)),
            BinOp("/", BinOp("^", Var("q1"), Num(2.0)), Num(2.0)),
        )
        assert e == expected

    def test_unbalanced_paren_offset(self):
        with pytest.raises(ExprSyntaxError) as exc:
            parse("sin(q1", CoordinateChart(1))
        assert exc.value.offset == 7

    def test_unknown_identifier(self):
        with pytest.raises(UnknownIdentifierError) as exc:
            parse("q3", CoordinateChart(1))
        assert exc.value.name == "q3"

    def test_unknown_function(self):
        with pytest.raises(UnknownIdentifierError) as exc:
            parse("foo(q1)", CoordinateChart(1))
        assert exc.value.name == "foo"

    def test_empty(self):
        with pytest.raises(ExprSyntaxError):
            parse("   ", CoordinateChart(1))

    def test_trailing_garbage(self):
        with pytest.raises(ExprSyntaxError):
            parse("q1 )", CoordinateChart(1))

    def test_precedence(self):
        chart = CoordinateChart(1)
        env = chart.env([2.0, 3.0], 0.0)
        # ^ binds tighter than unary minus, right-associative
        assert evaluate(parse("-q1^2", chart), env) == -4.0
        assert evaluate(parse("2^3^2", chart), env) == 512.0
        assert evaluate(parse("2^-1", chart), env) == 0.5
        assert evaluate(parse("q1+p1*2", chart), env) == 8.0

    def test_number_forms(self):
        chart = CoordinateChart(1)
        assert evaluate(parse("1.5e2", chart), {}) == 150.0
        assert evaluate(parse(".25", chart), {}) == 0.25
        assert evaluate(parse("3.", chart), {}) == 3.0


class TestEvaluate:
    def test_examples(self):
        chart = CoordinateChart(1)
        assert evaluate_at(parse("p1^2/2", chart), chart, [0.0, 2.0]) == 2.0
        assert evaluate_at(parse("exp(t)", chart), chart, [0.0, 0.0], 0.0) == 1.0

    def test_log_domain(self):
        chart = CoordinateChart(1)
        with pytest.raises(DomainError):
            evaluate_at(parse("log(q1)", chart), chart, [-1.0, 0.0])

    def test_division_by_zero(self):
        chart = CoordinateChart(1)
        with pytest.raises(DomainError):
            evaluate_at(parse("1/q1", chart), chart, [0.0, 0.0])

    def test_sqrt_domain(self):
        chart = CoordinateChart(1)
        with pytest.raises(DomainError):
            evaluate_at(parse("sqrt(q1)", chart), chart, [-4.0, 0.0])

    def test_negative_fractional_power(self):
        chart = CoordinateChart(1)
        with pytest.raises(DomainError):
            evaluate_at(parse("q1^0.5", chart), chart, [-2.0, 0.0])

    def test_deterministic(self):
        chart = CoordinateChart(2)
        e = parse("sin(q1*p2) + exp(q2/2) - tanh(p1)", chart)
        env = chart.env([0.3, -0.4, 0.9, 1.2], 0.5)
        assert evaluate(e, env) == evaluate(e, env)


class TestDifferentiate:
    def test_power_rule(self):
        chart = CoordinateChart(1)
        d = differentiate(parse("p1^2/2 + q1^2/2", chart), "p1")
        assert d == Var("p1")
        assert to_string(d) == "p1"

    def test_independent_variable(self):
        chart = CoordinateChart(1)
        d = differentiate(parse("p1", chart), "q1")
        assert d == Num(0.0)
        assert to_string(d) == "0"

    def test_chain_rule_string(self):
        chart = CoordinateChart(2)
        d = differentiate(parse("sin(q1*q2)", chart), "q1")
        assert to_string(d) == "cos(q1*q2)*q2"

    def test_chain_rule_fd(self):
        chart = CoordinateChart(2)
        e = parse("sin(q1*q2)", chart)
        d = differentiate(e, "q1")
        rng = np.random.default_rng(11)
        for _ in range(10):
            coords = rng.uniform(-2.0, 2.0, 4)
            got = evaluate_at(d, chart, coords)
            want = fd_derivative(e, chart, coords, 0.0, "q1")
            assert abs(got - want) <= 1e-6 * max(1.0, abs(want))

    @pytest.mark.parametrize(
        "text",
        [
            "sin(q1+p1)",
            "cos(q1*p1)",
            "exp(q1/3)",
            "log(2 + q1^2)",
            "sqrt(1 + p1^2)",
            "tanh(q1 - p1)",
            "q1^3*p1^2",
            "q1/(1 + p1^2)",
            "(1 + q1^2)^(p1/4)",
            "exp(t)*q1",
        ],
    )
    def test_fd_agreement_each_node(self, text):
        chart = CoordinateChart(1)
        e = parse(text, chart)
        rng = np.random.default_rng(hash(text) % 2**32)
        for var in ("q1", "p1", "t"):
            d = differentiate(e, var)
            for _ in range(6):
                coords = rng.uniform(0.2, 1.5, 2)
                time = rng.uniform(0.1, 1.0)
                got = evaluate_at(d, chart, coords, time)
                want = fd_derivative(e, chart, coords, time, var)
                assert abs(got - want) <= 1e-6 * max(1.0, abs(want))

    def test_clairaut(self):
        # mixed second partials commute
        chart = CoordinateChart(1)
        for text in ("sin(q1*p1)*exp(q1)", "q1^3*p1^2 + tanh(q1*p1)", "log(2+q1^2+p1^2)"):
            e = parse(text, chart)
            ab = differentiate(differentiate(e, "q1"), "p1")
            ba = differentiate(differentiate(e, "p1"), "q1")
            rng = np.random.default_rng(5)
            for _ in range(10):
                coords = rng.uniform(-1.2, 1.2, 2)
                va = evaluate_at(ab, chart, coords)
                vb = evaluate_at(ba, chart, coords)
                assert abs(va - vb) <= 1e-9 * max(1.0, abs(va))


def _random_expr(rng, chart, depth):
    """Generator for round-trip tests; avoids unbounded domains."""
    if depth == 0 or rng.random() < 0.25:
        if rng.random() < 0.4:
            return Num(round(float(rng.uniform(-3, 3)), 3))
        return Var(str(rng.choice(list(chart.names) + ["t"])))
    kind = rng.integers(0, 6)
    a = _random_expr(rng, chart, depth - 1)
    b = _random_expr(rng, chart, depth - 1)
    if kind == 0:
        return BinOp("+", a, b)
    if kind == 1:
        return BinOp("-", a, b)
    if kind == 2:
        return BinOp("*", a, b)
    if kind == 3:
        return BinOp("/", a, BinOp("+", Num(2.5), Call("tanh", b)))
    if kind == 4:
        return Neg(a)
    return Call(str(rng.choice(["sin", "cos", "tanh"])), a)


class TestPrinting:
    def test_round_trip_values(self):
        chart = CoordinateChart(2)
        rng = np.random.default_rng(42)
        for _ in range(40):
            e = _random_expr(rng, chart, 4)
            text = to_string(e)
            back = parse(text, chart)
            for _ in range(100 // 40 + 3):
                coords = rng.uniform(-2.0, 2.0, 4)
                time = rng.uniform(0.0, 2.0)
                v1 = evaluate_at(e, chart, coords, time)
                v2 = evaluate_at(back, chart, coords, time)
                assert abs(v1 - v2) < 1e-12 * max(1.0, abs(v1))

    def test_parenthesization(self):
        chart = CoordinateChart(1)
        cases = {
            BinOp("-", Var("q1"), BinOp("-", Var("p1"), Num(1.0))): "q1-(p1-1)",
            BinOp("^", BinOp("^", Num(2.0), Num(3.0)), Num(2.0)): "(2^3)^2",
            Neg(BinOp("+", Var("q1"), Var("p1"))): "-(q1+p1)",
            BinOp("^", Num(-2.0), Num(2.0)): "(-2)^2",
        }
        for e, text in cases.items():
            assert to_string(e) == text
            env = chart.env([1.7, -0.6], 0.0)
            assert evaluate(parse(text, chart), env) == evaluate(e, env)


class TestSimplify:
    def test_identities(self):
        q = Var("q1")
        assert simplify(BinOp("+", q, Num(0.0))) == q
        assert simplify(BinOp("*", q, Num(1.0))) == q
        assert simplify(BinOp("*", q, Num(0.0))) == Num(0.0)
        assert simplify(BinOp("^", q, Num(1.0))) == q
        assert simplify(BinOp("-", Num(0.0), q)) == Neg(q)

    def test_constant_folding(self):
        e = BinOp("*", BinOp("+", Num(1.0), Num(2.0)), Num(4.0))
        assert simplify(e) == Num(12.0)
        assert simplify(Call("sin", Num(0.0))) == Num(0.0)

    def test_fold_guards_domains(self):
        # 1/0 must not fold into a constant
        e = BinOp("/", Num(1.0), Num(0.0))
        assert simplify(e) == e


class TestCompile:
    def test_matches_interpreter(self):
        chart = CoordinateChart(2)
        rng = np.random.default_rng(8)
        texts = ["sin(q1*p2)+exp(q2/3)-tanh(p1)^2", "q1^3/(2+p1^2)+sqrt(1+q2^2)"]
        for text in texts:
            e = parse(text, chart)
            fn = compile_scalar(e, chart)
            for _ in range(20):
                coords = rng.uniform(-1.5, 1.5, 4)
                time = rng.uniform(0.0, 1.0)
                assert fn(coords, time) == pytest.approx(
                    evaluate_at(e, chart, coords, time), abs=0, rel=1e-15
                )


def test_free_vars_and_count():
    chart = CoordinateChart(1)
    e = parse("sin(q1*p1) + t", chart)
    assert free_vars(e) == {"q1", "p1", "t"}
    assert count_nodes(e) > 5
