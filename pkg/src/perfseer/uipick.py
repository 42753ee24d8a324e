"""Measurement-kernel generators and tag-driven filtering.

Each :class:`Generator` carries generator filter tags (bare strings) and a
set of arguments with allowable values. User tags select generators through
a :class:`MatchCondition`; variant tags ``arg:v1,v2`` restrict argument
sets, and every assignment in the Cartesian product yields one kernel.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from perfseer.errors import GeneratorError, PerfseerError
from perfseer.ir import Kernel, LaunchGeometry, launch_geometry, remove_work, split_iname
from perfseer.kernel_lang import make_kernel

CONFIG_VERSION = "perfseer-uipick/1"


class MatchCondition(enum.Enum):
    IDENTICAL = "identical"
    SUBSET_OF_USER = "subset"
    SUPERSET_OF_USER = "superset"
    INTERSECT = "intersect"

    @staticmethod
    def parse(text: str) -> MatchCondition:
        for cond in MatchCondition:
            if text.lower() in (cond.value, cond.name.lower()):
                return cond
        raise GeneratorError(f"unknown match condition '{text}' "
                             f"(expected one of {', '.join(c.value for c in MatchCondition)})")

    def matches(self, generator_tags: frozenset[str], user_tags: frozenset[str]) -> bool:
        if self is MatchCondition.IDENTICAL:
            return generator_tags == user_tags
        if self is MatchCondition.SUBSET_OF_USER:
            return generator_tags <= user_tags
        if self is MatchCondition.SUPERSET_OF_USER:
            return generator_tags >= user_tags
        return bool(generator_tags & user_tags)


def _parse_bool(text: str) -> bool:
    if text in ("True", "true", "1"):
        return True
    if text in ("False", "false", "0"):
        return False
    raise GeneratorError(f"expected True or False, got '{text}'")


def _parse_int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise GeneratorError(f"expected an integer, got '{text}'") from None


def _positive(value: int) -> bool:
    return value >= 1


def _nonnegative(value: int) -> bool:
    return value >= 0


@dataclass(frozen=True)
class ArgSpec:
    """Allowable values of one generator argument.

    ``allowed=None`` accepts any value passing ``validate``; without a user
    restriction such an argument expands to ``default``.
    """

    kind: str
    allowed: tuple | None
    default: tuple
    validate: Callable[[object], bool] | None = None

    def convert(self, text: str):
        if self.kind == "bool":
            return _parse_bool(text)
        if self.kind == "int":
            return _parse_int(text)
        return text

    def restrict(self, name: str, texts: Sequence[str], generator: str) -> tuple:
        values = []
        for t in texts:
            v = self.convert(t)
            if self.allowed is None:
                if self.validate is not None and not self.validate(v):
                    raise GeneratorError(f"{generator}: invalid value {t!r} for '{name}'")
                values.append(v)
            elif v in self.allowed:
                values.append(v)
        values = list(dict.fromkeys(values))
        if not values:
            raise GeneratorError(f"{generator}: variant tag {name}:{','.join(texts)} empties "
                                 f"the allowable set {list(self.allowed or ())}")
        return tuple(values)

    def values(self) -> tuple:
        return self.allowed if self.allowed is not None else self.default


@dataclass(frozen=True)
class Variant:
    """One generated measurement kernel."""

    kernel_id: str
    kernel: Kernel
    bindings: dict
    geometry: LaunchGeometry
    generator: str
    args: dict
    size_args: tuple[str, ...]

    @property
    def variant(self) -> str:
        rest = [f"{k}={_fmt(v)}" for k, v in self.args.items() if k not in self.size_args]
        return self.generator + ("[" + ",".join(rest) + "]" if rest else "")

    @property
    def size(self) -> str:
        return ",".join(f"{k}={_fmt(self.args[k])}" for k in self.size_args if k in self.args)

    @property
    def provenance(self) -> dict:
        return {"generator": self.generator, "args": {k: _fmt(v) for k, v in self.args.items()},
                "variant": self.variant, "size": self.size}


def _fmt(value) -> str:
    return str(value)


@dataclass(frozen=True)
class Generator:
    id: str
    tags: frozenset[str]
    args: Mapping[str, ArgSpec]
    create: Callable[..., tuple[Kernel, dict]]
    size_args: tuple[str, ...] = ()
    # generator tags that imply an argument restriction, e.g. flops_madd_pattern -> op:madd
    implied: Mapping[str, Mapping[str, tuple]] = field(default_factory=dict)

    def expand(self, generator_tags: frozenset[str], variant_tags: Mapping[str, Sequence[str]]
               ) -> list[dict]:
        unknown = sorted(set(variant_tags) - set(self.args))
        if unknown:
            raise GeneratorError(f"{self.id}: unknown argument(s) {unknown}; "
                                 f"known: {sorted(self.args)}")
        sets: dict[str, tuple] = {}
        for name, spec in self.args.items():
            values = spec.values()
            for tag in sorted(generator_tags & set(self.implied)):
                if name in self.implied[tag]:
                    values = tuple(v for v in values if v in self.implied[tag][name])
            if name in variant_tags:
                restricted = spec.restrict(name, variant_tags[name], self.id)
                if spec.allowed is not None:
                    restricted = tuple(v for v in restricted if v in values)
                values = restricted
            if not values:
                raise GeneratorError(f"{self.id}: no allowable value left for '{name}'")
            sets[name] = values
        names = list(self.args)
        return [dict(zip(names, combo)) for combo in itertools.product(*(sets[n] for n in names))]


def parse_tags(tags: Iterable[str]) -> tuple[frozenset[str], dict[str, list[str]]]:
    """Split user tags into generator tags and ``{arg: [values]}``."""
    generator_tags, variant_tags = set(), {}
    for raw in tags:
        tag = raw.strip()
        if not tag:
            continue
        if ":" in tag:
            name, _, values = tag.partition(":")
            parts = [v.strip() for v in values.split(",") if v.strip()]
            if not name.strip() or not parts:
                raise GeneratorError(f"malformed variant tag '{tag}'")
            variant_tags.setdefault(name.strip(), []).extend(parts)
        else:
            generator_tags.add(tag)
    return frozenset(generator_tags), variant_tags


def match_generators(registry: Mapping[str, Generator], tags: Iterable[str],
                     cond: MatchCondition = MatchCondition.SUPERSET_OF_USER) -> list[Generator]:
    generator_tags, _ = parse_tags(tags)
    return [g for g in registry.values() if cond.matches(g.tags, generator_tags)]


def generate_kernels(registry: Mapping[str, Generator], tags: Iterable[str],
                     cond: MatchCondition = MatchCondition.SUPERSET_OF_USER,
                     sub_group_size: int = 32) -> list[Variant]:
    tags = list(tags)
    generator_tags, variant_tags = parse_tags(tags)
    out = []
    for gen in match_generators(registry, tags, cond):
        for args in gen.expand(generator_tags, variant_tags):
            try:
                kernel, bindings = gen.create(**args)
            except GeneratorError:
                raise
            except PerfseerError as exc:
                raise GeneratorError(f"{gen.id}({args}): {exc}") from exc
            kernel.check_bindings(bindings)
            geometry = launch_geometry(kernel, sub_group_size)
            kid = gen.id + "__" + "_".join(f"{k}-{_fmt(v)}" for k, v in args.items())
            out.append(Variant(kid, kernel, dict(bindings), geometry, gen.id, dict(args),
                               gen.size_args))
    return out


class KernelCollection:
    def __init__(self, generators: Mapping[str, Generator] | Iterable[Generator],
                 generator_match_cond: MatchCondition = MatchCondition.SUPERSET_OF_USER):
        if not isinstance(generators, Mapping):
            generators = {g.id: g for g in generators}
        self.generators = dict(generators)
        self.cond = generator_match_cond

    def generate_kernels(self, tags: Iterable[str], sub_group_size: int = 32) -> list[Variant]:
        return generate_kernels(self.generators, tags, self.cond, sub_group_size)


# {{{ shared pieces

def _require(cond: bool, message: str) -> None:
    if not cond:
        raise GeneratorError(message)


def _grid_2d(lsize_0: int, lsize_1: int, nelements: int, row: int, lid_stride_0: int = 1):
    """Domain and flat subscript for a 2-D launch over a row-major view of a
    1-D array with ``row`` elements per row, ``lid(0)`` stride
    ``lid_stride_0`` and ``lid(1)`` stride ``row``."""
    _require(row % (lid_stride_0 * lsize_0) == 0,
             f"row width {row} is not a multiple of lid_stride_0*lsize_0 = "
             f"{lid_stride_0 * lsize_0}")
    _require(nelements % (row * lsize_1) == 0,
             f"nelements={nelements} is not a multiple of row*lsize_1 = {row * lsize_1}")
    groups_0 = row // (lid_stride_0 * lsize_0)
    block = row * lsize_1
    domain = (f"{{[gi1, li1, gi0, li0]: 0 <= gi1 < nelements/{block} and 0 <= li1 < {lsize_1} "
              f"and 0 <= gi0 < {groups_0} and 0 <= li0 < {lsize_0}}}")
    index = (f"{lid_stride_0}*li0 + {lid_stride_0 * lsize_0}*gi0 + {row}*li1 + {block}*gi1")
    tags = {"gi1": "g.1", "li1": "l.1", "gi0": "g.0", "li0": "l.0"}
    return domain, index, tags, f"nelements mod {block} == 0"


_PARALLEL = "gi1:li1:gi0:li0"

# }}}


# {{{ microbenchmark generators

def gmem_pattern(dtype: str, nelements: int, lsize_0: int, lsize_1: int, lid_stride_0: int,
                 lid_stride_1: int, n_input_arrays: int, groups_fit: bool = True):
    _require(groups_fit, "gmem_pattern only supports groups_fit:True")
    _require(lid_stride_1 >= lid_stride_0 * lsize_0,
             "lid_stride_1 must be at least lid_stride_0*lsize_0 (race-free pattern)")
    domain, index, tags, assumption = _grid_2d(lsize_0, lsize_1, nelements, lid_stride_1,
                                               lid_stride_0)
    inputs = [f"in{i}" for i in range(n_input_arrays)]
    rhs = " + ".join(f"{a}[{index}]" for a in inputs)
    args = [(a, dtype, ["nelements"]) for a in inputs + ["result"]]
    k = make_kernel(domain, [f"result[{index}] = {rhs}"], args, name="gmem_pattern",
                    assumptions=[assumption], tags=tags)
    return k, {"nelements": nelements}


NUM_ACCUMULATORS = 32
UNROLL = 64


def flops_pattern(op: str, dtype: str, m: int, nelements: int, lsize_0: int, lsize_1: int,
                  lid_stride_0: int, lid_stride_1: int, groups_fit: bool = True):
    """32 accumulators updated ``64*m`` times each. Accumulator ``j`` reads
    ``j ^ 16``, so no update depends on the four statements before it."""
    _require(groups_fit, "flops_pattern only supports groups_fit:True")
    domain, index, tags, assumption = _grid_2d(lsize_0, lsize_1, nelements, lid_stride_1,
                                               lid_stride_0)
    domain = domain[:-1].replace("[gi1, li1, gi0, li0]", "[gi1, li1, gi0, li0, it, u]") + \
        " and 0 <= it < m and 0 <= u < 64}"
    n = NUM_ACCUMULATORS
    regs = [f"r{j}" for j in range(n)]
    insns = [f"r{j} = {0.5 + j / 64!r} {{id=init{j}, dep=, within={_PARALLEL}}}"
             for j in range(n)]
    update = {"add": "r{j} + r{o}", "mul": "r{j}*r{o}", "madd": "r{j}*r{o} + r{o}"}[op]
    within = f"{_PARALLEL}:it:u"
    for j in range(n):
        other = (j + n // 2) % n
        deps = f"init{j}:init{other}"
        insns.append(f"r{j} = {update.format(j=j, o=other)} "
                     f"{{id=upd{j}, dep={deps}, within={within}}}")
    total = " + ".join(regs)
    insns.append(f"result[{index}] = {total} {{id=store, dep="
                 + ":".join(f"upd{j}" for j in range(n)) + f", within={_PARALLEL}}}")
    args = [("result", dtype, ["nelements"])] + [(r, dtype, [], "private") for r in regs]
    k = make_kernel(domain, insns, args, name=f"flops_{op}_pattern",
                    assumptions=[assumption, "m >= 0"], tags=tags)
    return k, {"nelements": nelements, "m": m}


def _flat_grid(lsize_0: int, lsize_1: int, nelements: int):
    block = lsize_0 * lsize_1
    _require(nelements % block == 0, f"nelements={nelements} is not a multiple of {block}")
    domain = (f"{{[gi0, li1, li0, it]: 0 <= gi0 < nelements/{block} and 0 <= li1 < {lsize_1} "
              f"and 0 <= li0 < {lsize_0} and 0 <= it < m}}")
    index = f"li0 + {lsize_0}*li1 + {block}*gi0"
    tags = {"gi0": "g.0", "li1": "l.1", "li0": "l.0"}
    return domain, index, tags, f"nelements mod {block} == 0"


def lmem_shuffle(dtype: str, m: int, nelements: int, lsize_0: int, lsize_1: int):
    """Each work-item owns two local slots and moves a value between them
    ``m`` times (lid(0) stride 1, no races), then stores one value."""
    domain, index, tags, assumption = _flat_grid(lsize_0, lsize_1, nelements)
    par = "gi0:li1:li0"
    insns = [
        f"lm[0, li1, li0] = 1.0 {{id=init, dep=, within={par}}}",
        f"lm[1, li1, li0] = lm[0, li1, li0] {{id=move, dep=init, within={par}:it}}",
        f"result[{index}] = lm[1, li1, li0] {{id=store, dep=move, within={par}}}",
    ]
    args = [("lm", dtype, [2, lsize_1, lsize_0], "local"), ("result", dtype, ["nelements"])]
    k = make_kernel(domain, insns, args, name="lmem_shuffle",
                    assumptions=[assumption, "m >= 0"], tags=tags)
    return k, {"nelements": nelements, "m": m}


def overlap_knl(dtype: str, m: int, nelements: int, lsize_0: int, lsize_1: int):
    """One global load, ``m`` local store/load pairs, one global store."""
    domain, index, tags, assumption = _flat_grid(lsize_0, lsize_1, nelements)
    par = "gi0:li1:li0"
    insns = [
        f"t = gin[{index}] {{id=load, dep=, within={par}}}",
        f"lm[li1, li0] = t {{id=lst, dep=load:lld, within={par}:it}}",
        f"t = lm[li1, li0] {{id=lld, dep=lst, within={par}:it}}",
        f"gout[{index}] = t {{id=store, dep=lld:load, within={par}}}",
    ]
    args = [("gin", dtype, ["nelements"]), ("gout", dtype, ["nelements"]),
            ("lm", dtype, [lsize_1, lsize_0], "local"), ("t", dtype, [], "private")]
    # lst and lld form a loop-carried pair; break the cycle at lst
    insns[1] = insns[1].replace("dep=load:lld", "dep=load")
    k = make_kernel(domain, insns, args, name="overlap",
                    assumptions=[assumption, "m >= 0"], tags=tags)
    return k, {"nelements": nelements, "m": m}


def barrier_knl(m: int, ngroups: int, lsize_0: int, lsize_1: int):
    domain = (f"{{[gi0, li1, li0, it]: 0 <= gi0 < ngroups and 0 <= li1 < {lsize_1} "
              f"and 0 <= li0 < {lsize_0} and 0 <= it < m}}")
    k = make_kernel(domain, ["barrier {id=bar, dep=, within=gi0:li1:li0:it}"], [],
                    name="barrier", assumptions=["m >= 0", "ngroups >= 1"],
                    tags={"gi0": "g.0", "li1": "l.1", "li0": "l.0"})
    return k, {"m": m, "ngroups": ngroups}


def empty_knl(ngroups: int, lsize_0: int):
    domain = f"{{[gi0, li0]: 0 <= gi0 < ngroups and 0 <= li0 < {lsize_0}}}"
    k = make_kernel(domain, [], [], name="empty", assumptions=["ngroups >= 1"],
                    tags={"gi0": "g.0", "li0": "l.0"})
    return k, {"ngroups": ngroups}

# }}}


# {{{ application generators

def matmul_sq(prefetch: bool, dtype: str, n: int, lsize_0: int, lsize_1: int,
              groups_fit: bool = True):
    _require(groups_fit, "matmul_sq only supports groups_fit:True")
    _require(lsize_0 == lsize_1, "matmul_sq needs square work-groups")
    tile = lsize_0
    _require(n % tile == 0, f"n={n} is not a multiple of the tile size {tile}")
    args = [(name, dtype, ["n", "n"]) for name in ("a", "b", "c")]
    if not prefetch:
        k = make_kernel("{[i,j,k]: 0<=i,j,k<n}", ["c[i,j] = sum(k, a$aLD[i,k]*b$bLD[k,j])"],
                        args, name="matmul_noPF", assumptions=[f"n mod {tile} == 0"])
        k = split_iname(k, "i", tile, outer_tag="g.1", inner_tag="l.1")
        k = split_iname(k, "j", tile, outer_tag="g.0", inner_tag="l.0")
        return k, {"n": n}
    domain = (f"{{[i_out, i_in, j_out, j_in, k_out, k_in]: 0 <= i_out, j_out, k_out < n/{tile} "
              f"and 0 <= i_in, j_in, k_in < {tile}}}")
    par = "i_out:i_in:j_out:j_in"
    t = tile
    insns = [
        f"acc = 0 {{id=init, dep=, within={par}}}",
        f"barrier {{id=bar1, dep=init, within={par}:k_out}}",
        f"a_fetch[i_in, j_in] = a$aLD[{t}*i_out + i_in, {t}*k_out + j_in] "
        f"{{id=fetch_a, dep=bar1, within={par}:k_out}}",
        f"b_fetch[i_in, j_in] = b$bLD[{t}*k_out + i_in, {t}*j_out + j_in] "
        f"{{id=fetch_b, dep=bar1, within={par}:k_out}}",
        f"barrier {{id=bar2, dep=fetch_a:fetch_b, within={par}:k_out}}",
        f"acc = acc + a_fetch[i_in, k_in]*b_fetch[k_in, j_in] "
        f"{{id=update, dep=bar2:init, within={par}:k_out:k_in}}",
        f"c[{t}*i_out + i_in, {t}*j_out + j_in] = acc {{id=store, dep=update, within={par}}}",
    ]
    args += [("a_fetch", dtype, [t, t], "local"), ("b_fetch", dtype, [t, t], "local")]
    k = make_kernel(domain, insns, args, name="matmul_PF", assumptions=[f"n mod {t} == 0"],
                    tags={"i_out": "g.1", "i_in": "l.1", "j_out": "g.0", "j_in": "l.0"})
    return k, {"n": n}


FD_TILES = {"16x16": 16, "18x18": 18}


def fd_stencil(tile: str, dtype: str, n: int):
    """5-point stencil on an ``(n+2)^2`` grid with ``T x T`` work-groups that
    prefetch a tile including the halo; the ``T-2`` interior work-items per
    axis compute."""
    _require(tile in FD_TILES, f"unknown tile '{tile}'")
    size = FD_TILES[tile]
    step = size - 2
    _require(n % step == 0, f"n={n} is not a multiple of {step} (tile {tile})")
    domain = (f"{{[gi1, li1, gi0, li0]: 0 <= gi1, gi0 < n/{step} and 0 <= li1, li0 < {size}}}")
    par = "gi1:li1:gi0:li0"
    row, col = f"{step}*gi1 + li1", f"{step}*gi0 + li0"
    f = "u_fetch"
    stencil = (f"{f}[li1, li0 + 1] + {f}[li1 + 1, li0] - 4*{f}[li1 + 1, li0 + 1] "
               f"+ {f}[li1 + 1, li0 + 2] + {f}[li1 + 2, li0 + 1]")
    insns = [
        f"u_fetch[li1, li0] = u$uLD[{row}, {col}] {{id=fetch, dep=, within={par}}}",
        f"barrier {{id=bar, dep=fetch, within={par}}}",
        f"res$resST[{row}, {col}] = {stencil} "
        f"{{id=compute, dep=bar, within={par}, if=li1 <= {size - 3} and li0 <= {size - 3}}}",
    ]
    args = [("u", dtype, ["n + 2", "n + 2"]), ("res", dtype, ["n", "n"]),
            ("u_fetch", dtype, [size, size], "local")]
    k = make_kernel(domain, insns, args, name=f"fd_{tile}", assumptions=[f"n mod {step} == 0"],
                    tags={"gi1": "g.1", "li1": "l.1", "gi0": "g.0", "li0": "l.0"})
    return k, {"n": n}


MM_KEEP = {"a": ("b", "c"), "b": ("a", "c")}
FD_KEEP = {"u": ("res",), "res": ("u",)}


def mm_rw(prefetch: bool, dtype: str, n: int, lsize_0: int, lsize_1: int, keep: str,
          remove_onchip: bool = True, groups_fit: bool = True):
    _require(remove_onchip, "mm_rw only supports remove_onchip:True")
    k, bindings = matmul_sq(prefetch, dtype, n, lsize_0, lsize_1, groups_fit)
    rw = remove_work(k, remove_vars=MM_KEEP[keep])
    return rw, bindings


def fd_rw(tile: str, dtype: str, n: int, keep: str, remove_onchip: bool = True):
    _require(remove_onchip, "fd_rw only supports remove_onchip:True")
    k, bindings = fd_stencil(tile, dtype, n)
    return remove_work(k, remove_vars=FD_KEEP[keep]), bindings

# }}}


# {{{ registry / configuration

def _arg(kind: str, allowed=None, default=(), validate=None) -> ArgSpec:
    return ArgSpec(kind, tuple(allowed) if allowed is not None else None, tuple(default),
                   validate)


DTYPES = ("float32", "float64")
N_LADDER = (1024, 1536, 2048, 2560, 3072, 3584)
FD_LADDER = (1120, 2240, 3360, 4480)
NELEMENTS_LADDER = (524288, 786432, 1048576, 1310720)
M_LADDER = (1024, 1152, 1280, 1408)
OVERLAP_M = tuple(range(17))


def _build_registry() -> dict[str, Generator]:
    lsize = lambda: _arg("int", (16,))
    out = [
        Generator("gmem_pattern", frozenset({"gmem_pattern"}), {
            "dtype": _arg("str", DTYPES),
            "nelements": _arg("int", None, NELEMENTS_LADDER, _positive),
            "lsize_0": lsize(), "lsize_1": lsize(),
            "lid_stride_0": _arg("int", None, (1,), _positive),
            "lid_stride_1": _arg("int", None, (2048,), _positive),
            "n_input_arrays": _arg("int", (1, 2, 3, 4)),
            "groups_fit": _arg("bool", (True,)),
        }, gmem_pattern, size_args=("nelements",)),
        Generator("flops_pattern", frozenset({"flops_pattern", "flops_add_pattern",
                                              "flops_mul_pattern", "flops_madd_pattern"}), {
            "op": _arg("str", ("add", "mul", "madd")),
            "dtype": _arg("str", DTYPES),
            "m": _arg("int", None, M_LADDER, _nonnegative),
            "nelements": _arg("int", None, NELEMENTS_LADDER, _positive),
            "lsize_0": lsize(), "lsize_1": lsize(),
            "lid_stride_0": _arg("int", None, (1,), _positive),
            "lid_stride_1": _arg("int", None, (2048,), _positive),
            "groups_fit": _arg("bool", (True,)),
        }, flops_pattern, size_args=("nelements", "m"),
            implied={f"flops_{op}_pattern": {"op": (op,)} for op in ("add", "mul", "madd")}),
        Generator("lmem_shuffle", frozenset({"lmem_shuffle"}), {
            "dtype": _arg("str", DTYPES),
            "m": _arg("int", None, M_LADDER, _nonnegative),
            "nelements": _arg("int", None, NELEMENTS_LADDER, _positive),
            "lsize_0": lsize(), "lsize_1": lsize(),
        }, lmem_shuffle, size_args=("nelements", "m")),
        Generator("barrier_knl", frozenset({"barrier"}), {
            "m": _arg("int", None, (256, 512, 768, 1024), _nonnegative),
            "ngroups": _arg("int", None, (1024, 2048), _positive),
            "lsize_0": lsize(), "lsize_1": lsize(),
        }, barrier_knl, size_args=("m", "ngroups")),
        Generator("empty_knl", frozenset({"empty"}), {
            "ngroups": _arg("int", None, (16, 256, 4096, 65536), _positive),
            "lsize_0": _arg("int", (256,)),
        }, empty_knl, size_args=("ngroups",)),
        Generator("overlap_knl", frozenset({"overlap"}), {
            "dtype": _arg("str", ("float32",)),
            "m": _arg("int", None, OVERLAP_M, _nonnegative),
            "nelements": _arg("int", None, (1048576,), _positive),
            "lsize_0": lsize(), "lsize_1": lsize(),
        }, overlap_knl, size_args=("m", "nelements")),
        Generator("matmul_sq", frozenset({"matmul_sq"}), {
            "prefetch": _arg("bool", (True, False)),
            "dtype": _arg("str", DTYPES),
            "lsize_0": lsize(), "lsize_1": lsize(),
            "groups_fit": _arg("bool", (True,)),
            "n": _arg("int", None, N_LADDER, _positive),
        }, matmul_sq, size_args=("n",)),
        Generator("fd_stencil", frozenset({"finite_diff"}), {
            "tile": _arg("str", tuple(FD_TILES)),
            "dtype": _arg("str", DTYPES),
            "n": _arg("int", None, FD_LADDER, _positive),
        }, fd_stencil, size_args=("n",)),
        Generator("mm_rw", frozenset({"mm_rw", "gmem_rw"}), {
            "prefetch": _arg("bool", (True, False)),
            "dtype": _arg("str", DTYPES),
            "lsize_0": lsize(), "lsize_1": lsize(),
            "groups_fit": _arg("bool", (True,)),
            "remove_onchip": _arg("bool", (True,)),
            "keep": _arg("str", tuple(MM_KEEP)),
            "n": _arg("int", None, N_LADDER, _positive),
        }, mm_rw, size_args=("n",)),
        Generator("fd_rw", frozenset({"fd_rw", "gmem_rw"}), {
            "tile": _arg("str", tuple(FD_TILES)),
            "dtype": _arg("str", DTYPES),
            "remove_onchip": _arg("bool", (True,)),
            "keep": _arg("str", tuple(FD_KEEP)),
            "n": _arg("int", None, FD_LADDER, _positive),
        }, fd_rw, size_args=("n",)),
    ]
    return {g.id: g for g in out}


ALL_GENERATORS: dict[str, Generator] = _build_registry()


def config_manifest() -> dict:
    """The versioned argument-set configuration, for provenance records."""
    def spec(a: ArgSpec):
        return {"kind": a.kind, "allowed": None if a.allowed is None else [str(v) for v in a.allowed],
                "default": [str(v) for v in a.default]}
    return {"version": CONFIG_VERSION,
            "generators": {g.id: {"tags": sorted(g.tags),
                                  "args": {n: spec(a) for n, a in g.args.items()}}
                           for g in ALL_GENERATORS.values()}}

# }}}
