"""Measurement backends, trial statistics and accuracy metrics.

An executor is any object with an ``id`` string and a method
``measure(kernel, bindings, geometry, trials) -> list[float]`` returning
per-trial seconds. :class:`SyntheticDevice` is the built-in one: a hidden
cost table over feature ids, combined linearly or with full overlap of
global-memory and on-chip time.

A hardware adapter would implement the same two members, e.g. by handing
externally generated OpenCL source to a queue and timing kernel events.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import statistics
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from perfseer.counting import group_count
from perfseer.errors import ExecutorError, PerfseerError
from perfseer.features import FeatureSpec, evaluate_feature, parse_feature
from perfseer.ir import Kernel, LaunchGeometry, launch_geometry

DEFAULT_TRIALS = 60
COMBINES = ("linear", "max_overlap")
GMEM, ONCHIP = "gmem", "onchip"


@dataclass(frozen=True)
class CostEntry:
    """Cost per unit of a feature or a product of features (``"f_a * f_b"``)."""

    key: str
    seconds: float
    factors: tuple[FeatureSpec, ...]
    cls: str

    def units(self, k: Kernel, bindings, geometry, sub_group_size: int) -> float:
        value = 1.0
        for f in self.factors:
            value *= float(evaluate_feature(f, k, bindings, geometry,
                                            sub_group_size=sub_group_size).numeric)
        return value


def _cost_class(factors: Sequence[FeatureSpec]) -> str:
    if any(f.cls == "mem_access" and f.mem_type == "global" for f in factors):
        return GMEM
    return ONCHIP


def parse_cost_key(key: str) -> tuple[FeatureSpec, ...]:
    parts = [p.strip() for p in key.split(" * ")]
    factors = tuple(parse_feature(p) for p in parts)
    if any(not f.is_count for f in factors):
        raise ExecutorError(f"cost key '{key}' refers to a wall-time feature")
    return factors


@dataclass(frozen=True)
class SyntheticDeviceSpec:
    id: str
    costs: tuple[CostEntry, ...]
    combine: str = "linear"
    overhead_kernel: float = 0.0
    overhead_group: float = 0.0
    noise: float = 0.0
    anomaly_probability: float = 0.0
    anomaly_factor: float = 10.0
    seed: int = 0
    sub_group_size: int = 32

    def __post_init__(self):
        if self.combine not in COMBINES:
            raise ExecutorError(f"combine must be one of {', '.join(COMBINES)}, not '{self.combine}'")
        for c in self.costs:
            if not c.seconds > 0:
                raise ExecutorError(f"cost of '{c.key}' must be positive, got {c.seconds}")
        if self.overhead_kernel < 0 or self.overhead_group < 0:
            raise ExecutorError("overheads must be nonnegative")
        if self.noise < 0:
            raise ExecutorError("noise sigma must be nonnegative")
        if not 0 <= self.anomaly_probability <= 1:
            raise ExecutorError("anomaly probability must lie in [0, 1]")

    @staticmethod
    def build(id: str, costs: Mapping[str, float], classes: Mapping[str, str] | None = None,
              **kw) -> SyntheticDeviceSpec:
        classes = classes or {}
        entries = []
        for key, seconds in costs.items():
            factors = parse_cost_key(key)
            cls = classes.get(key, _cost_class(factors))
            if cls not in (GMEM, ONCHIP):
                raise ExecutorError(f"cost class of '{key}' must be gmem or onchip")
            entries.append(CostEntry(key, float(seconds), factors, cls))
        return SyntheticDeviceSpec(id, tuple(entries), **kw)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "costs": {c.key: c.seconds for c in self.costs},
            "classes": {c.key: c.cls for c in self.costs},
            "combine": self.combine,
            "overhead": {"kernel": self.overhead_kernel, "group": self.overhead_group},
            "noise": self.noise,
            "anomaly": {"probability": self.anomaly_probability, "factor": self.anomaly_factor},
            "seed": self.seed,
            "sub_group_size": self.sub_group_size,
        }

    @staticmethod
    def from_json(data: Mapping) -> SyntheticDeviceSpec:
        try:
            overhead = data.get("overhead", {})
            anomaly = data.get("anomaly", {})
            return SyntheticDeviceSpec.build(
                data["id"], data["costs"], data.get("classes"),
                combine=data.get("combine", "linear"),
                overhead_kernel=float(overhead.get("kernel", 0.0)),
                overhead_group=float(overhead.get("group", 0.0)),
                noise=float(data.get("noise", 0.0)),
                anomaly_probability=float(anomaly.get("probability", 0.0)),
                anomaly_factor=float(anomaly.get("factor", 10.0)),
                seed=int(data.get("seed", 0)),
                sub_group_size=int(data.get("sub_group_size", 32)))
        except KeyError as exc:
            raise ExecutorError(f"device spec lacks field {exc.args[0]!r}") from None


@dataclass(frozen=True)
class CostBreakdown:
    kernel: float
    groups: float
    gmem: float
    onchip: float
    combine: str

    @property
    def total(self) -> float:
        body = (self.gmem + self.onchip if self.combine == "linear"
                else max(self.gmem, self.onchip))
        return self.kernel + self.groups + body


class SyntheticDevice:
    def __init__(self, spec: SyntheticDeviceSpec):
        self.spec = spec
        self.id = spec.id

    def breakdown(self, k: Kernel, bindings: Mapping[str, int],
                  geometry: LaunchGeometry | None = None) -> CostBreakdown:
        if geometry is None:
            geometry = launch_geometry(k, self.spec.sub_group_size)
        sg = self.spec.sub_group_size
        parts = {GMEM: 0.0, ONCHIP: 0.0}
        for c in self.spec.costs:
            parts[c.cls] += c.seconds * c.units(k, bindings, geometry, sg)
        groups = float(group_count(k).evaluate(bindings))
        return CostBreakdown(self.spec.overhead_kernel, self.spec.overhead_group * groups,
                             parts[GMEM], parts[ONCHIP], self.spec.combine)

    def base_time(self, k: Kernel, bindings, geometry=None) -> float:
        return self.breakdown(k, bindings, geometry).total

    def _rng(self, k: Kernel, bindings: Mapping[str, int]) -> np.random.Generator:
        key = json.dumps([self.spec.seed, k.digest, sorted(bindings.items())])
        return np.random.default_rng(int.from_bytes(hashlib.sha256(key.encode()).digest()[:8], "big"))

    def measure(self, k: Kernel, bindings: Mapping[str, int],
                geometry: LaunchGeometry | None = None, trials: int = DEFAULT_TRIALS) -> list[float]:
        if trials < 1:
            raise ExecutorError("trials must be at least 1")
        base = self.base_time(k, bindings, geometry)
        rng = self._rng(k, bindings)
        z = rng.standard_normal(trials)
        anomalies = rng.random(trials) < self.spec.anomaly_probability
        times = base * np.exp(self.spec.noise * z)
        times[anomalies] *= self.spec.anomaly_factor
        return [float(t) for t in times]


@dataclass(frozen=True)
class MeasurementRecord:
    kernel_id: str
    bindings: tuple[tuple[str, int], ...]
    trials: int
    mean_seconds: float
    raw: tuple[float, ...] = ()
    dropped: int = 0


def summarize(times: Sequence[float], filter_factor: float = 5.0, kernel_id: str = "",
              bindings: Mapping[str, int] | None = None) -> MeasurementRecord:
    """Mean of the trials that are at most ``filter_factor`` times the median."""
    if not times:
        raise ExecutorError("no trials to summarize")
    med = statistics.median(times)
    kept = [t for t in times if t <= filter_factor * med]
    if not kept:
        raise ExecutorError("every trial was excluded as an outlier")
    return MeasurementRecord(kernel_id, tuple(sorted((bindings or {}).items())), len(times),
                             math.fsum(kept) / len(kept), tuple(times), len(times) - len(kept))


def measure_variants(executor, variants: Iterable, trials: int = DEFAULT_TRIALS,
                     filter_factor: float = 5.0) -> list[MeasurementRecord]:
    out = []
    for v in variants:
        try:
            times = executor.measure(v.kernel, v.bindings, v.geometry, trials)
        except PerfseerError as exc:
            raise type(exc)(f"kernel '{v.kernel_id}': {exc}") from exc
        out.append(summarize(times, filter_factor, v.kernel_id, v.bindings))
    return out


def geo_mean_rel_error(pred: Sequence[float], meas: Sequence[float], floor: float = 1e-12) -> float:
    if len(pred) != len(meas):
        raise ExecutorError(f"{len(pred)} predictions for {len(meas)} measurements")
    if not pred:
        raise ExecutorError("no values")
    logs = []
    for p, m in zip(pred, meas):
        if m <= 0:
            raise ExecutorError(f"measured value {m} is not positive")
        logs.append(math.log(max(abs(p - m) / m, floor)))
    return math.exp(math.fsum(logs) / len(logs))


def diagnose_overlap(full_time: float, removed_time: float, onchip_estimate: float,
                     tolerance: float = 0.1) -> str:
    """Classify a device as ``"linear"`` or ``"max"`` from one kernel.

    ``removed_time`` is the time of the work-removed variant (global traffic
    only) and ``onchip_estimate`` the modeled on-chip cost of the full kernel.
    Their sum matching the full time means the costs add; a sum clearly above
    it means they overlap.
    """
    if full_time <= 0:
        raise ExecutorError("full kernel time must be positive")
    ratio = (removed_time + onchip_estimate) / full_time
    return "max" if ratio > 1 + tolerance else "linear"


# {{{ measurement CSV

def format_bindings(bindings) -> str:
    items = bindings.items() if isinstance(bindings, Mapping) else bindings
    return ";".join(f"{k}={v}" for k, v in sorted(items))


def parse_bindings(text: str) -> dict[str, int]:
    out = {}
    for item in filter(None, (t.strip() for t in text.replace(",", ";").split(";"))):
        name, sep, value = item.partition("=")
        if not sep:
            raise ExecutorError(f"malformed binding '{item}'; expected name=value")
        try:
            out[name.strip()] = int(value)
        except ValueError:
            raise ExecutorError(f"binding '{item}' is not an integer") from None
    return out


def write_measurements(records: Sequence[MeasurementRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kernel_id", "bindings", "mean_seconds", "trials"])
    for r in records:
        w.writerow([r.kernel_id, format_bindings(r.bindings), repr(r.mean_seconds), r.trials])
    return buf.getvalue()


def read_measurements(text: str) -> list[MeasurementRecord]:
    reader = csv.DictReader(io.StringIO(text))
    need = {"kernel_id", "bindings", "mean_seconds", "trials"}
    if reader.fieldnames is None or not need <= set(reader.fieldnames):
        raise ExecutorError(f"measurement CSV needs columns {', '.join(sorted(need))}")
    out = []
    for row in reader:
        out.append(MeasurementRecord(row["kernel_id"],
                                     tuple(sorted(parse_bindings(row["bindings"]).items())),
                                     int(row["trials"]), float(row["mean_seconds"])))
    return out

# }}}
