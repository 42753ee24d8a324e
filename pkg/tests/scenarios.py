"""Synthetic-device calibration scenarios shared by the acceptance tests."""

from __future__ import annotations

import functools
import random

from perfseer.executor import SyntheticDevice, SyntheticDeviceSpec, measure_variants
from perfseer.features import gather_feature_values
from perfseer.model import CalibrationProblem, fit_model, parse_model, scale_features_by_output
from perfseer.uipick import ALL_GENERATORS, generate_kernels

WALL = "f_exec_wall_time_synth"
LSIZE = ["lsize_0:16", "lsize_1:16"]

GA = "f_mem_access_global_float32_load_lstrides:{0:1;1:>15}_gstrides:{0:0}_afr:>1"
GB = "f_mem_access_global_float32_load_lstrides:{0:1;1:>15}_gstrides:{0:16}_afr:>1"
LINEAR_MODEL = (
    "p_f32madd * f_op_float32_madd + p_f32l * f_mem_access_local_float32"
    f" + p_f32ga * {GA} + p_f32gb * {GB}"
    " + p_f32gc * f_mem_access_global_float32_store"
    " + p_barrier * f_sync_barrier_local * f_thread_groups"
    " + p_group * f_thread_groups + p_launch * f_sync_kernel_launch")
LINEAR_TRUTH = {
    "p_f32madd": 1.0e-13, "p_f32l": 2.2e-13, "p_f32ga": 3.1e-12, "p_f32gb": 4.3e-13,
    "p_f32gc": 6.0e-12, "p_barrier": 1.5e-9, "p_group": 4.0e-8, "p_launch": 5.0e-6,
}
LINEAR_TAGS = [
    ["matmul_sq", "prefetch:True", "dtype:float32", *LSIZE],
    ["mm_rw", "prefetch:True", "dtype:float32", *LSIZE],
    ["flops_madd_pattern", "dtype:float32", *LSIZE],
    ["lmem_shuffle", "dtype:float32", *LSIZE],
    ["barrier", *LSIZE],
    ["empty"],
]


def linear_device(noise: float = 0.0, seed: int = 0) -> SyntheticDevice:
    t = LINEAR_TRUTH
    costs = {
        "f_op_float32_madd": t["p_f32madd"],
        "f_mem_access_local_float32": t["p_f32l"],
        GA: t["p_f32ga"],
        GB: t["p_f32gb"],
        "f_mem_access_global_float32_store": t["p_f32gc"],
        "f_sync_barrier_local * f_thread_groups": t["p_barrier"],
    }
    return SyntheticDevice(SyntheticDeviceSpec.build(
        "synth", costs, overhead_kernel=t["p_launch"], overhead_group=t["p_group"],
        noise=noise, seed=seed))


@functools.lru_cache(maxsize=None)
def linear_pool() -> tuple[tuple, tuple]:
    """30 training kernels (every other size of each generator) and the rest held out."""
    train, held = [], []
    for tags in LINEAR_TAGS:
        vs = generate_kernels(ALL_GENERATORS, tags)
        train += vs[0::2]
        held += vs[1::2]
    # 31 after alternation: move one flops kernel to the held-out side
    flops = [v for v in train if v.generator == "flops_pattern"]
    train.remove(flops[-1])
    held.append(flops[-1])
    return tuple(train), tuple(held)


def fit_linear(noise: float, seed: int = 0):
    model = parse_model(WALL, LINEAR_MODEL)
    device = linear_device(noise, seed)
    train, held = linear_pool()
    table = gather_feature_values(model.feature_ids, train)
    records = measure_variants(device, train)
    problem = CalibrationProblem.from_measurements(model, table, records)
    return model, fit_model(model, scale_features_by_output(problem)), device, train, held


CG = "(p_gl * f_mem_access_global_float32_load + p_gs * f_mem_access_global_float32_store)"
CO = "(p_l * f_mem_access_local_float32 + p_madd * f_op_float32_madd)"
FIXED = "p_launch * f_sync_kernel_launch + p_group * f_thread_groups"
OVERLAP_MODEL = f"{FIXED} + {CG} * sstep({CG} - {CO}; p_edge) + {CO} * sstep({CO} - {CG}; p_edge)"
ADDITIVE_MODEL = f"{FIXED} + {CG} + {CO}"


def overlap_device(noise: float = 0.0, seed: int = 0) -> SyntheticDevice:
    return SyntheticDevice(SyntheticDeviceSpec.build(
        "synth", {"f_mem_access_global_float32_load": 2.0e-11,
                  "f_mem_access_global_float32_store": 2.5e-11,
                  "f_mem_access_local_float32": 1.4e-10,
                  "f_op_float32_madd": 1.0e-10},
        combine="max_overlap", overhead_kernel=4e-6, overhead_group=3e-9, noise=noise, seed=seed))


@functools.lru_cache(maxsize=None)
def overlap_pool() -> tuple[tuple, tuple, tuple]:
    """(even-m sweep plus microbenchmarks, odd-m sweep, full sweep)."""
    sweep = generate_kernels(ALL_GENERATORS, ["overlap", *LSIZE])
    micro = (generate_kernels(ALL_GENERATORS, ["gmem_pattern", "dtype:float32", *LSIZE,
                                               "lid_stride_0:1"])
             + generate_kernels(ALL_GENERATORS, ["flops_madd_pattern", "dtype:float32", *LSIZE])
             + generate_kernels(ALL_GENERATORS, ["empty"]))
    train = [v for v in sweep if v.bindings["m"] % 2 == 0] + micro
    test = [v for v in sweep if v.bindings["m"] % 2 == 1]
    return tuple(train), tuple(test), tuple(sweep)


def fit_overlap(model_src: str, noise: float = 0.0, seed: int = 0):
    model = parse_model(WALL, model_src)
    device = overlap_device(noise, seed)
    train, test, sweep = overlap_pool()
    table = gather_feature_values(model.feature_ids, train)
    problem = CalibrationProblem.from_measurements(model, table, measure_variants(device, train))
    return model, fit_model(model, scale_features_by_output(problem)), device


def crossover(m_values, gmem, onchip) -> float:
    """Linearly interpolated ``m`` where on-chip time first reaches global time."""
    pts = list(zip(m_values, gmem, onchip))
    for (m0, g0, c0), (m1, g1, c1) in zip(pts, pts[1:]):
        d0, d1 = c0 - g0, c1 - g1
        if d0 <= 0 <= d1 and d1 != d0:
            return m0 + (m1 - m0) * (-d0) / (d1 - d0)
    raise ValueError("no crossover in the sweep")


def ranking_pairs(count: int, seed: int, separation: float = 1.2):
    """Random variant pairs whose true (noise-free) times differ by ``separation``."""
    rng = random.Random(seed)
    device = linear_device()
    train, held = linear_pool()
    sizes = [n for n in range(512, 4097, 128)]
    pool = list(held)
    for n in rng.sample(sizes, 8):
        pool += generate_kernels(ALL_GENERATORS, ["matmul_sq", "prefetch:True", "dtype:float32",
                                                  *LSIZE, f"n:{n}"])
    times = {v.kernel_id: device.base_time(v.kernel, v.bindings, v.geometry) for v in pool}
    pairs = []
    while len(pairs) < count:
        a, b = rng.sample(pool, 2)
        hi, lo = max(times[a.kernel_id], times[b.kernel_id]), min(times[a.kernel_id], times[b.kernel_id])
        if hi >= separation * lo and (a, b) not in pairs:
            pairs.append((a, b))
    return pairs, times
