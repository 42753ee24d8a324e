"""Acceptance criteria 1-11, each at its stated tolerance and time budget."""

from __future__ import annotations

import math
import random
import time
from pathlib import Path

import numpy as np
import sympy

from acceptance_log import criterion
from kernelgen import afr_pairs, oracle_cases, strip_afr
from perfseer.counting import (
    AccessPattern, OpKind, brute_force_count, brute_force_points, classify_accesses, count_kernel,
    count_points,
)
from perfseer.executor import geo_mean_rel_error, summarize
from perfseer.features import gather_feature_values
from perfseer.ir import remove_work
from perfseer.kernel_lang import parse_domain
from perfseer.model import (
    Num, Param, evaluate_expr, jacobian, parse_model, sstep,
)
from perfseer.poly import Poly
from perfseer.uipick import ALL_GENERATORS, MatchCondition, generate_kernels, match_generators, matmul_sq
from pipeline import MATMUL_TAGS, run_pipeline
from scenarios import (
    ADDITIVE_MODEL, CG, CO, LINEAR_TRUTH, OVERLAP_MODEL, WALL, crossover, fit_linear, fit_overlap,
    overlap_pool, ranking_pairs,
)

N = Poly.var("n")


def _concrete(counts, bindings) -> dict:
    return counts.evaluate(bindings)


@criterion(1, "symbolic counts equal brute force on 50 random kernels x 5 bindings")
def test_counting_exactness():
    start = time.perf_counter()
    kernels = compared = afr_checked = 0
    for k, counts, bindings_list in oracle_cases(50, per_kernel=5):
        kernels += 1
        for b in bindings_list:
            sym = _concrete(counts, b)
            brute = brute_force_count(k, b)
            assert strip_afr(sym) == strip_afr(brute), (k.name, b)
            for afr, candidates in afr_pairs(sym, brute):
                assert afr in candidates, (k.name, b, afr, candidates)
                afr_checked += 1
            compared += 1
    elapsed = time.perf_counter() - start
    assert kernels == 50 and compared == 250
    assert afr_checked > 0
    assert elapsed < 30, f"{elapsed:.1f} s"


@criterion(2, "triangle point count formula")
def test_triangle_formula():
    dom = parse_domain("{[i,j]: p <= i < n and p <= j < i + 1}")
    got = count_points(dom)
    assert got.is_single
    n, p = sympy.symbols("n p")
    expected = sympy.expand((n**2 + p**2 - 2*n*p + n - p) / 2)
    assert str(sympy.expand(sympy.sympify(str(got.poly).replace("^", "**")))) == str(expected)
    rng = random.Random(2)
    for _ in range(10):
        pv = rng.randint(-5, 10)
        nv = pv + rng.randint(0, 15)
        b = {"n": nv, "p": pv}
        assert got.evaluate(b) == brute_force_points(dom, ["i", "j"], b)
        assert got.evaluate(b) == expected.subs({n: nv, p: pv})


def _tagged(patterns, tag):
    (hit,) = [pat for pat, _ in patterns if pat.tag == tag]
    return hit


@criterion(3, "global load patterns of tiled matmul with prefetching")
def test_matmul_load_patterns():
    k, _ = matmul_sq(True, "float32", 1024, 16, 16)
    patterns = classify_accesses(k)
    a, b = _tagged(patterns, "aLD"), _tagged(patterns, "bLD")
    for pat in (a, b):
        assert dict(pat.lstrides) == {0: Poly.const(1), 1: N}
        assert pat.afr.is_single and pat.afr.poly == N / 16
        assert pat.mem_type == "global" and pat.direction == "load"
    assert dict(a.gstrides) == {0: Poly.const(0), 1: 16 * N}
    assert dict(b.gstrides) == {0: Poly.const(16), 1: Poly.const(0)}
    assert a.loop_stride == Poly.const(16)
    assert b.loop_stride == 16 * N


@criterion(4, "work remover keeps the b load and a stride-1 store")
def test_work_remover():
    k, _ = matmul_sq(True, "float32", 1024, 16, 16)
    original_b = _tagged(classify_accesses(k), "bLD")
    rw = remove_work(k, remove_vars=("a", "c"))
    counts = count_kernel(rw)
    glob = {key for key in counts.keys() if isinstance(key, AccessPattern) and key.mem_type == "global"}
    stores = [key for key in glob if key.direction == "store"]
    assert len(stores) == 1
    (store,) = stores
    assert store.lstride(0) == Poly.const(1)
    assert glob == {original_b, store}
    assert not [key for key, v in counts.items() if isinstance(key, OpKind) and v]
    assert not [key for key in counts.keys() if isinstance(key, AccessPattern) and key.mem_type == "local"]


@criterion(5, "generator and variant filtering counts")
def test_generator_filtering():
    assert len(generate_kernels(ALL_GENERATORS, MATMUL_TAGS)) == 4
    assert len(generate_kernels(ALL_GENERATORS, [t for t in MATMUL_TAGS if t != "prefetch:True"])) == 8
    both = ["matmul_sq", "finite_diff"]
    assert match_generators(ALL_GENERATORS, both, MatchCondition.SUPERSET_OF_USER) == []
    assert generate_kernels(ALL_GENERATORS, both, MatchCondition.SUPERSET_OF_USER) == []
    hit = match_generators(ALL_GENERATORS, both, MatchCondition.INTERSECT)
    assert sorted(g.id for g in hit) == ["fd_stencil", "matmul_sq"]


@criterion(6, "linear calibration round trip")
def test_linear_round_trip():
    start = time.perf_counter()
    model, cm, _, train, _ = fit_linear(0.0)
    assert len(train) == 30
    for name, true in LINEAR_TRUTH.items():
        assert abs(cm.param_values[name] / true - 1) < 1e-3, (name, cm.param_values[name], true)
    model, cm, device, _, held = fit_linear(0.01, seed=1)
    pred = [cm.predict(v.kernel, v.bindings, v.geometry) for v in held]
    meas = [summarize(device.measure(v.kernel, v.bindings, v.geometry)).mean_seconds for v in held]
    err = geo_mean_rel_error(pred, meas)
    print(f"held-out geo-mean relative error {100 * err:.3f}%")
    assert err < 0.03
    assert time.perf_counter() - start < 10


def _sweep_crossover(values_gmem, values_onchip, sweep):
    return crossover([v.bindings["m"] for v in sweep], values_gmem, values_onchip)


@criterion(7, "overlap calibration round trip")
def test_overlap_round_trip():
    start = time.perf_counter()
    model, cm, device = fit_overlap(OVERLAP_MODEL, 0.01, seed=3)
    _, additive, _ = fit_overlap(ADDITIVE_MODEL, 0.01, seed=3)
    _, test, sweep = overlap_pool()
    meas = [summarize(device.measure(v.kernel, v.bindings, v.geometry)).mean_seconds for v in test]
    pred = [cm.predict(v.kernel, v.bindings, v.geometry) for v in test]
    err = geo_mean_rel_error(pred, meas)
    print(f"nonlinear held-out geo-mean relative error {100 * err:.3f}%")
    assert err < 0.05

    parts = [device.breakdown(v.kernel, v.bindings, v.geometry) for v in sweep]
    true_m = _sweep_crossover([b.gmem for b in parts], [b.onchip for b in parts], sweep)
    gmem, onchip = parse_model(WALL, CG), parse_model(WALL, CO)
    fitted = cm.param_values
    fit_m = _sweep_crossover([gmem.eval_with_kernel(fitted, v.kernel, v.bindings, v.geometry) for v in sweep],
                             [onchip.eval_with_kernel(fitted, v.kernel, v.bindings, v.geometry) for v in sweep],
                             sweep)
    print(f"crossover: true m={true_m:.3f}, fitted m={fit_m:.3f}")
    assert abs(fit_m - true_m) <= 1

    # overlapped regime: the smaller component is at least 3/4 of the larger
    over = []
    for v, b in zip(sweep, parts):
        if min(b.gmem, b.onchip) >= 0.75 * max(b.gmem, b.onchip):
            over.append(additive.predict(v.kernel, v.bindings, v.geometry) / b.total - 1)
    assert over
    print(f"additive model over-prediction in the overlapped regime: {100 * np.mean(over):.1f}%")
    assert np.mean(over) > 0.20
    assert time.perf_counter() - start < 20


@criterion(8, "calibrated model ranks 10 separated variant pairs")
def test_ranking():
    _, cm, _, _, _ = fit_linear(0.01, seed=1)
    pairs, times = ranking_pairs(10, seed=8)
    correct = 0
    for a, b in pairs:
        pa = cm.predict(a.kernel, a.bindings, a.geometry)
        pb = cm.predict(b.kernel, b.bindings, b.geometry)
        correct += (pa > pb) == (times[a.kernel_id] > times[b.kernel_id])
    assert correct == 10


@criterion(9, "analytic Jacobian matches centered differences")
def test_jacobian():
    model = parse_model(WALL, OVERLAP_MODEL)
    train, _, _ = overlap_pool()
    table = gather_feature_values(model.feature_ids, train)
    feats = {f: np.asarray(table.column(f), dtype=float) for f in model.feature_ids}
    wide_feats = {f: np.asarray(table.column(f), dtype=np.longdouble) for f in model.feature_ids}
    gap = np.median(np.abs(evaluate_expr(parse_model(WALL, f"{CG} - {CO}").expr,
                                         {"p_gl": 2e-11, "p_gs": 2.5e-11, "p_l": 1.4e-10,
                                          "p_madd": 1e-10}, feats)))
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(20):
        params = {"p_launch": 4e-6, "p_group": 3e-9, "p_gl": 2e-11, "p_gs": 2.5e-11,
                  "p_l": 1.4e-10, "p_madd": 1e-10}
        params = {k: v * math.exp(rng.uniform(-0.7, 0.7)) for k, v in params.items()}
        params["p_edge"] = rng.uniform(0.3, 3.0) / gap
        analytic = jacobian(model, params, feats)
        # the reference differences run in extended precision: p_launch moves
        # totals of seconds by microseconds, which float64 cancellation swamps
        wide = {k: np.longdouble(v) for k, v in params.items()}
        for j, name in enumerate(model.params):
            h = np.cbrt(np.finfo(float).eps) * abs(wide[name])
            up, down = dict(wide), dict(wide)
            up[name] += h
            down[name] -= h
            fd = (evaluate_expr(model.expr, up, wide_feats)
                  - evaluate_expr(model.expr, down, wide_feats)) / (2 * h)
            scale = np.max(np.abs(analytic[:, j]))
            assert scale > 0
            worst = max(worst, float(np.max(np.abs(analytic[:, j] - fd)) / scale))
    print(f"max relative Jacobian error {worst:.2e}")
    assert worst < 1e-5


@criterion(10, "sstep and error-metric identities")
def test_identities():
    p = Param("p_edge")
    assert evaluate_expr(sstep(Num(0), p), {"p_edge": 3.7}, {}) == 0.5
    for x in np.linspace(-4, 4, 41):
        s = evaluate_expr(sstep(Num(x), p), {"p_edge": 1.3}, {}) + \
            evaluate_expr(sstep(Num(-x), p), {"p_edge": 1.3}, {})
        assert abs(s - 1) <= 1e-12
    assert abs(geo_mean_rel_error([1.1, 1.4], [1.0, 1.0]) - 0.2) <= 1e-12


@criterion(11, "CLI pipeline reruns byte-identically")
def test_determinism(tmp_path: Path):
    first = run_pipeline(tmp_path / "one")
    second = run_pipeline(tmp_path / "two")
    assert first.keys() == second.keys()
    assert [name for name in first if first[name] != second[name]] == []
    assert "report/error_table.csv" in first and "cal.json" in first
