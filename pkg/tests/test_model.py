import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perfseer.errors import CalibrationError, ModelError, ParseError
from perfseer.model import (
    Bin, CalibratedModel, CalibrationProblem, Feat, Neg, Num, Param, Tanh, differentiate, evaluate_expr, fit_model,
    parse_model, parse_model_expr, parse_model_file, print_expr, sstep, scale_features_by_output,
)
from perfseer.features import parse_feature
from perfseer.uipick import empty_knl
from scenarios import LINEAR_MODEL, OVERLAP_MODEL, WALL

F = "f_op_float32_madd"


def _problem(feature_ids, rows, outputs):
    return CalibrationProblem(tuple(feature_ids), tuple(tuple(map(float, r)) for r in rows),
                              tuple(map(float, outputs)))


def test_parse_examples():
    m = parse_model(WALL, "p_f32madd * f_op_float32_madd")
    assert m.params == ("p_f32madd",) and m.feature_ids == (F,)
    affine = parse_model(WALL, "p_a * f_thread_groups + p_b")
    assert affine.params == ("p_a", "p_b")
    full = parse_model(WALL, LINEAR_MODEL)
    assert len(full.params) == 8
    assert "f_sync_barrier_local" in full.feature_ids and "f_thread_groups" in full.feature_ids


def test_first_occurrence_order():
    m = parse_model(WALL, "p_b * f_thread_groups + p_a * f_op_float32_add + p_b * f_op_float32_madd")
    assert m.params == ("p_b", "p_a")
    assert m.feature_ids == ("f_thread_groups", "f_op_float32_add", F)


@pytest.mark.parametrize("expr", ["q_x * f_thread_groups", "f_thread_groups", f"p_a * {WALL}",
                                  "p_a * (f_thread_groups", "p_a ** 2", "exp(p_a)"])
def test_parse_errors(expr):
    with pytest.raises((ModelError, ParseError)):
        parse_model(WALL, expr)


def test_output_must_be_wall_time():
    with pytest.raises(ModelError):
        parse_model(F, "p_a * f_thread_groups")


def test_model_file():
    m = parse_model_file(f"# comment\n{WALL}\np_a * f_thread_groups\n  + p_b\n")
    assert m.params == ("p_a", "p_b")
    assert parse_model_file(m.to_text()) == m
    with pytest.raises(ModelError):
        parse_model_file(WALL)


def test_print_round_trip():
    for src in (LINEAR_MODEL, OVERLAP_MODEL, "p_a - (p_b - p_c) / 2", "-p_a * tanh(p_b * 3)"):
        e = parse_model_expr(src)
        assert parse_model_expr(print_expr(e)) == e


_leaves = st.one_of(st.sampled_from([Param("p_a"), Param("p_b"), Feat(parse_feature(F))]),
                   st.integers(0, 9).map(lambda v: Num(Fraction(v))))
_exprs = st.recursive(_leaves, lambda sub: st.one_of(
    st.tuples(st.sampled_from("+-*/"), sub, sub).map(lambda t: Bin(*t)),
    sub.map(Neg), sub.map(Tanh)), max_leaves=12)


@settings(max_examples=200)
@given(_exprs)
def test_random_print_round_trip(e):
    assert parse_model_expr(print_expr(e)) == e


def test_sstep_values():
    edge = Param("p_edge")
    assert evaluate_expr(sstep(Num(0), edge), {"p_edge": 123.0}, {}) == 0.5
    assert math.isclose(evaluate_expr(sstep(Num(1), edge), {"p_edge": 10.0}, {}),
                        (math.tanh(10) + 1) / 2, rel_tol=0, abs_tol=1e-15)
    # 1 - 1/(1 + e^20)
    assert abs(evaluate_expr(sstep(Num(1), edge), {"p_edge": 10.0}, {}) - 0.99999999794) < 1e-11
    macro = parse_model_expr("sstep(p_a - 1; p_edge)")
    assert evaluate_expr(macro, {"p_a": 1.0, "p_edge": 4.0}, {}) == 0.5


@pytest.mark.parametrize("edge", [2.0, 5.0, 50.0])
def test_overlap_limit(edge):
    e = parse_model_expr("p_g * sstep(p_g - p_o; p_edge) + p_o * sstep(p_o - p_g; p_edge)")
    value = evaluate_expr(e, {"p_g": 10.0, "p_o": 2.0, "p_edge": edge}, {})
    assert abs(value - 10) < 1e-6


@settings(max_examples=50)
@given(st.floats(-5, 5), st.floats(0.1, 10))
def test_sstep_symmetry(x, edge):
    p = {"p_edge": edge}
    a = evaluate_expr(sstep(Num(x), Param("p_edge")), p, {})
    b = evaluate_expr(sstep(Num(-x), Param("p_edge")), p, {})
    assert abs(a + b - 1) <= 1e-15


def test_derivative_of_product():
    m = parse_model(WALL, f"p_a * {F}")
    (d,) = differentiate(m).values()
    assert isinstance(d, Feat) and d.name == F
    assert evaluate_expr(d, {"p_a": 7.0}, {F: 3.0}) == 3.0


def test_sstep_edge_derivative_matches_differences():
    m = parse_model(WALL, f"sstep(p_edge * ({F} - 2); p_k)")
    d = differentiate(m)
    rng = np.random.default_rng(0)
    for _ in range(20):
        params = {"p_edge": rng.uniform(0.2, 2), "p_k": rng.uniform(0.2, 2)}
        feats = {F: rng.uniform(-3, 5)}
        for name in m.params:
            h = 1e-6 * abs(params[name])
            up, down = dict(params), dict(params)
            up[name] += h
            down[name] -= h
            fd = (evaluate_expr(m.expr, up, feats) - evaluate_expr(m.expr, down, feats)) / (2 * h)
            exact = evaluate_expr(d[name], params, feats)
            assert abs(exact - fd) <= 1e-6 * max(abs(exact), 1e-12) + 1e-12


def test_scaling():
    p = _problem(["f_a", "f_b"], [(10, 4)], [2])
    s = scale_features_by_output(p)
    assert s.inputs == ((5.0, 2.0),) and s.outputs == (1.0,) and s.scaled
    assert scale_features_by_output(s) is s
    with pytest.raises(CalibrationError):
        scale_features_by_output(_problem(["f_a"], [(1,)], [0]))


def test_exact_line_fit():
    m = parse_model(WALL, f"p_x * {F}")
    cm = fit_model(m, _problem([F], [(1,), (2,)], [2, 4]))
    assert abs(cm.param_values["p_x"] - 2) < 1e-12
    assert cm.residual_norm < 1e-12 and cm.converged


def test_linear_fit_recovers_parameters():
    m = parse_model(WALL, "p_a * f_op_float32_add + p_b * f_op_float32_mul + p_c")
    rng = np.random.default_rng(3)
    truth = {"p_a": 2e-9, "p_b": 5e-9, "p_c": 1e-5}
    rows = rng.uniform(1e3, 1e6, size=(20, 2))
    t = rows @ [truth["p_a"], truth["p_b"]] + truth["p_c"]
    prob = _problem(["f_op_float32_add", "f_op_float32_mul"], rows, t)
    for problem in (prob, scale_features_by_output(prob)):
        cm = fit_model(m, problem)
        for k, v in truth.items():
            assert abs(cm.param_values[k] / v - 1) < 1e-3


def test_linear_fit_matches_normal_equations():
    m = parse_model(WALL, "p_a * f_op_float32_add + p_b * f_op_float32_mul")
    rng = np.random.default_rng(5)
    rows = rng.uniform(1, 10, size=(15, 2))
    t = rows @ [0.3, 1.7] + rng.normal(0, 0.05, 15)
    cm = fit_model(m, _problem(["f_op_float32_add", "f_op_float32_mul"], rows, t))
    ols = np.linalg.solve(rows.T @ rows, rows.T @ t)
    got = np.array([cm.param_values["p_a"], cm.param_values["p_b"]])
    assert np.max(np.abs(got - ols) / np.abs(ols)) < 1e-8


def test_residual_norm_is_self_consistent():
    m = parse_model(WALL, "p_a * f_op_float32_add + p_b")
    prob = scale_features_by_output(_problem(["f_op_float32_add"], [(1,), (2,), (4,)], [1.1, 2.0, 4.2]))
    cm = fit_model(m, prob)
    g = cm.param_values["p_a"] * np.array([1, 2, 4]) + cm.param_values["p_b"]
    t = np.array([1.1, 2.0, 4.2])
    assert abs(cm.residual_norm - np.linalg.norm(1 - g / t)) < 1e-12
    assert abs(cm.unscaled_residual_norm - np.linalg.norm(t - g)) < 1e-12
    assert np.allclose(cm.residuals(), 1 - g / t, rtol=0, atol=1e-12)


def test_too_few_rows():
    m = parse_model(WALL, "p_a * f_op_float32_add + p_b")
    with pytest.raises(CalibrationError):
        fit_model(m, _problem(["f_op_float32_add"], [(1,)], [1]))


def test_rank_deficient_warns():
    m = parse_model(WALL, "p_a * f_op_float32_add + p_b * f_op_float32_mul")
    rows = [(1, 2), (2, 4), (3, 6)]
    cm = fit_model(m, _problem(["f_op_float32_add", "f_op_float32_mul"], rows, [1, 2, 3]))
    assert any("rank" in w for w in cm.warnings)


def test_negative_costs_warn_and_clamp():
    m = parse_model(WALL, "p_a * f_op_float32_add + p_b * f_op_float32_mul")
    rows = [(1, 1), (2, 1), (3, 1), (4, 1)]
    t = [0.5, 1.5, 2.5, 3.5]  # exact fit needs p_b = -0.5
    prob = _problem(["f_op_float32_add", "f_op_float32_mul"], rows, t)
    free = fit_model(m, prob)
    assert free.param_values["p_b"] < 0 and any("negative" in w for w in free.warnings)
    clamped = fit_model(m, prob, nonnegative=True)
    assert clamped.param_values["p_b"] >= 0


def test_fit_is_deterministic():
    m = parse_model(WALL, "p_a * f_op_float32_add + p_b")
    prob = _problem(["f_op_float32_add"], [(1,), (2,), (4,), (7,)], [1.1, 2.0, 4.2, 6.5])
    a, b = fit_model(m, prob), fit_model(m, prob)
    assert a.param_values == b.param_values and a.iterations == b.iterations


def test_calibrated_json_round_trip():
    m = parse_model(WALL, "p_a * f_op_float32_add + p_b")
    prob = scale_features_by_output(_problem(["f_op_float32_add"], [(1,), (2,), (4,)], [1.1, 2.0, 4.2]))
    cm = fit_model(m, prob)
    again = CalibratedModel.from_json(json.loads(json.dumps(cm.to_json())))
    assert again.param_values == cm.param_values
    assert again.model == cm.model
    assert np.array_equal(again.residuals(), cm.residuals())
    with pytest.raises(ModelError):
        CalibratedModel.from_json({"format": "other"})


def test_zero_count_kernel_predicts_zero():
    m = parse_model(WALL, f"p_a * {F} + p_b * f_mem_access_global_float32_load")
    cm = CalibratedModel(m, {"p_a": 1e-9, "p_b": 2e-9}, 0.0, 0, True, _problem([], [], []))
    k, b = empty_knl(16, 256)
    assert cm.predict(k, b) == 0.0
