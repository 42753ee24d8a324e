import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kernelgen import random_kernel, valid_bindings
from perfseer.counting import count_kernel
from perfseer.errors import FeatureError, ParseError, PerfseerError
from perfseer.features import (
    FeatureTable, clear_cache, evaluate_feature, gather_feature_values, parse_feature,
    print_feature,
)
from perfseer.ir import launch_geometry
from perfseer.kernel_lang import make_kernel
from perfseer.uipick import ALL_GENERATORS, fd_stencil, generate_kernels, matmul_sq

MEM = "f_mem_access_global_float32_load_lstrides:{0:1;1:>15}_gstrides:{0:0}_afr:>1"
CANONICAL = [
    "f_op_float32_madd", "f_op_float64_add", MEM, "f_mem_access_tag:aLD",
    "f_mem_access_local_float64_store", "f_mem_access_global_lstrides:{0:<n}",
    "f_mem_access_float32_gstrides:{1:==16*n}_afr:==1", "f_sync_barrier_local",
    "f_sync_kernel_launch", "f_sync_group_launch", "f_thread_groups",
    "f_exec_wall_time_synthetic_gpu",
]


def _plain_matmul(tagged=False):
    a, b = ("a$aLD", "b$bLD") if tagged else ("a", "b")
    return make_kernel("{[i,j,k]: 0<=i,j,k<n}", [f"c[i,j] = sum(k, {a}[i,k]*{b}[k,j])"],
                       [(x, "float32", ["n", "n"]) for x in "abc"])


def test_parse_examples():
    op = parse_feature("f_op_float32_madd")
    assert (op.cls, op.dtype, op.op) == ("op", "float32", "madd")
    mem = parse_feature(MEM)
    assert mem.cls == "mem_access" and (mem.mem_type, mem.dtype, mem.direction) == \
        ("global", "float32", "load")
    assert [c.text for c in mem.lstrides] == ["0:1", "1:>15"]
    assert [c.text for c in mem.gstrides] == ["0:0"]
    assert mem.afr.relation == ">" and mem.afr.rhs.constant == 1
    assert parse_feature("f_exec_wall_time_synthetic_gpu").executor_id == "synthetic_gpu"


@pytest.mark.parametrize("text", [
    "f_mem_access_afr:>1_global",            # out of order
    "f_mem_access_load_global",
    "f_mem_access_tag:aLD_global",           # tag excludes other fields
    "f_mem_access_lstrides:{0:1;0:2}",       # repeated axis
    "f_mem_access_lstrides:{0:1",            # unclosed brace
    "f_op_float32_fma", "f_banana", "op_float32_madd", "f_sync_fence",
])
def test_parse_errors(text):
    with pytest.raises((ParseError, FeatureError, PerfseerError)):
        parse_feature(text)


@pytest.mark.parametrize("text", CANONICAL)
def test_print_round_trip(text):
    assert print_feature(parse_feature(text)) == text


def test_evaluation_examples():
    k = _plain_matmul()
    assert evaluate_feature("f_op_float32_madd", k, {"n": 1024}).numeric == 33_554_432
    tiled, b = matmul_sq(True, "float32", 1024, 16, 16)
    assert evaluate_feature("f_thread_groups", tiled, b).numeric == 4096
    assert evaluate_feature("f_mem_access_tag:bLD", _plain_matmul(True), {"n": 4}).numeric == 64


def test_prefetch_matmul_values():
    k, b = matmul_sq(True, "float32", 1024, 16, 16)
    geo = launch_geometry(k)
    expected = {
        "f_op_float32_madd": 33_554_432,
        "f_mem_access_local_float32": 71_303_168,
        "f_mem_access_local_float32_load": 67_108_864,
        "f_mem_access_tag:aLD": 67_108_864,
        "f_mem_access_tag:bLD": 67_108_864,
        "f_mem_access_global_float32_store": 1_048_576,
        "f_sync_barrier_local": 128,
        "f_thread_groups": 4096,
        "f_sync_kernel_launch": 1,
    }
    got = {f: evaluate_feature(f, k, b, geo).numeric for f in expected}
    assert got == expected


def test_sub_group_needs_divisible_group_size():
    k, b = fd_stencil("18x18", "float32", 64)
    geo = launch_geometry(k)
    with pytest.raises(FeatureError, match="324"):
        evaluate_feature("f_op_float32_madd", k, b, geo)
    # work-item-level global accesses are still defined
    assert evaluate_feature("f_mem_access_global_float32_store", k, b, geo).numeric > 0


def test_required_feature_must_match():
    k = _plain_matmul()
    assert evaluate_feature("f_op_float64_add", k, {"n": 4}).numeric == 0
    with pytest.raises(FeatureError):
        evaluate_feature("f_op_float64_add", k, {"n": 4}, required=True)


def test_parametric_constraint():
    k, b = matmul_sq(True, "float32", 1024, 16, 16)
    geo = launch_geometry(k)
    both = evaluate_feature("f_mem_access_global_float32_load_lstrides:{1:n}", k, b, geo)
    assert both.numeric == 2 * 67_108_864 and both.matched == 2
    assert evaluate_feature("f_mem_access_global_float32_load_lstrides:{1:<n}", k, b, geo).numeric == 0
    just_b = "f_mem_access_global_float32_load_lstrides:{1:n}_gstrides:{0:>n/2}"
    assert evaluate_feature(just_b, k, {"n": 16}, geo).numeric == 16 ** 3 / 16
    assert evaluate_feature(just_b, k, {"n": 64}, geo).numeric == 0


def test_granularity_ratio():
    # a uniform load (lid(0) stride 0) counts once per sub-group; stride 1 counts per work-item
    def knl(sub):
        return make_kernel("{[g,l]: 0<=g<n and 0<=l<32}", [f"y[32*g + l] = x[{sub}]"],
                           [("x", "float32", ["32*n"]), ("y", "float32", ["32*n"])],
                           tags={"g": "g.0", "l": "l.0"})
    uniform, strided = knl("32*g"), knl("32*g + l")
    spec = "f_mem_access_global_float32_load"
    u = evaluate_feature(spec, uniform, {"n": 8}, launch_geometry(uniform)).numeric
    s = evaluate_feature(spec, strided, {"n": 8}, launch_geometry(strided)).numeric
    assert s / u == 32


def test_gather_table():
    kernels = generate_kernels(ALL_GENERATORS, ["matmul_sq", "dtype:float32", "prefetch:True",
                                                "lsize_0:16", "lsize_1:16", "groups_fit:True",
                                                "n:2048,2560,3072,3584"])
    table = gather_feature_values(["f_op_float32_madd", "f_thread_groups"], kernels)
    assert len(table.rows) == 4 and all(len(r) == 2 for r in table.rows)
    assert table.columns == ["f_op_float32_madd", "f_thread_groups"]
    assert FeatureTable.from_csv(table.to_csv()) == table
    empty = gather_feature_values(["f_thread_groups"], [])
    assert empty.rows == [] and empty.kernel_ids == []


def test_gmem_rows_include_launch_features():
    (v,) = generate_kernels(ALL_GENERATORS, ["gmem_pattern", "dtype:float32", "nelements:1048576",
                                             "lsize_0:16", "lsize_1:16", "lid_stride_0:1",
                                             "lid_stride_1:16", "n_input_arrays:1"])
    table = gather_feature_values(["f_sync_kernel_launch", "f_thread_groups"], [v])
    assert table.rows[0][0] == 1 and table.rows[0][1] > 1


def test_errors_carry_kernel_id():
    kernels = generate_kernels(ALL_GENERATORS, ["finite_diff", "tile:18x18", "dtype:float32"])
    with pytest.raises(FeatureError, match=kernels[0].kernel_id):
        gather_feature_values(["f_op_float32_madd"], kernels[:1])


_SPECS = ["f_mem_access_global_load", "f_mem_access_global_lstrides:{0:<n}",
          "f_mem_access_global_lstrides:{0:>1}_afr:>1", "f_mem_access_gstrides:{0:==m}",
          "f_op_float32_add", "f_op_float32_madd", "f_mem_access_local_store_afr:<m"]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 5000))
def test_cache_agrees_with_fresh_evaluation(seed):
    k = random_kernel(seed)
    rng = random.Random(seed)
    for b in valid_bindings(k, count_kernel(k), rng, want=2):
        for spec in _SPECS:
            try:
                fresh = evaluate_feature(spec, k, b, use_cache=False).numeric
            except PerfseerError:
                continue
            assert evaluate_feature(spec, k, b).numeric == fresh
            assert evaluate_feature(spec, k, b).numeric == fresh
    clear_cache()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 5000), st.sampled_from([
    ("f_mem_access_global_float32_load_lstrides:{0:<n}_afr:>1", "f_mem_access_global_float32_load_afr:>1"),
    ("f_mem_access_global_float32_load_lstrides:{0:<n}_afr:>1", "f_mem_access_global_float32_load_lstrides:{0:<n}"),
    ("f_mem_access_global_float32_store_gstrides:{0:0}", "f_mem_access_global_float32_store"),
    ("f_mem_access_local_float32", "f_mem_access_float32"),
]))
def test_loosening_never_decreases(seed, pair):
    tight, loose = pair
    k = random_kernel(seed)
    for b in valid_bindings(k, count_kernel(k), random.Random(seed), want=1):
        try:
            t = evaluate_feature(tight, k, b).numeric
            lo = evaluate_feature(loose, k, b).numeric
        except PerfseerError:
            continue
        assert lo >= t
