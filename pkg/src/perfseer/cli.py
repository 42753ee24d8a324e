"""Command-line interface: count, generate, features, measure, calibrate,
predict and report.

Outputs are deterministic for fixed inputs and seed. Manifests carry a
timestamp only when ``SOURCE_DATE_EPOCH`` is set, so reruns stay
byte-identical.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import sys
from pathlib import Path

import click

from perfseer import __version__
from perfseer.counting import count_kernel
from perfseer.errors import CalibrationError, ExecutorError, PerfseerError
from perfseer.executor import (
    SyntheticDevice, SyntheticDeviceSpec, format_bindings, geo_mean_rel_error, measure_variants,
    parse_bindings, read_measurements, write_measurements,
)
from perfseer.features import FeatureTable, format_value, gather_feature_values
from perfseer.ir import Kernel, LaunchGeometry, kernel_from_json, kernel_to_json, launch_geometry, load_kernel
from perfseer.model import (
    CalibratedModel, CalibrationProblem, fit_model, parse_model_file, predict, scale_features_by_output,
)
from perfseer.uipick import ALL_GENERATORS, MatchCondition, generate_kernels


# {{{ plumbing

def _sha(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()[:16]


def _file_hash(path) -> str:
    p = Path(path)
    if p.is_dir():
        h = hashlib.sha256()
        for f in sorted(p.iterdir()):
            if f.is_file():
                h.update(f.name.encode())
                h.update(f.read_bytes())
        return h.hexdigest()[:16]
    return _sha(p.read_bytes())


def manifest(command: str, inputs: dict, seed: int | None = None, failures=()) -> dict:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    return {
        "command": command,
        "inputs": {k: _file_hash(v) for k, v in sorted(inputs.items()) if v is not None},
        "seed": seed,
        "tool_version": __version__,
        "timestamp": int(epoch) if epoch and epoch.isdigit() else None,
        "failures": list(failures),
    }


def _emit(text: str, out: str | None) -> None:
    if out is None or out == "-":
        click.echo(text, nl=False)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


class KernelEntry:
    """A kernel read back from a ``generate`` directory (same fields as a Variant)."""

    def __init__(self, kernel_id: str, kernel: Kernel, bindings: dict, geometry: LaunchGeometry,
                 variant: str, size: str):
        self.kernel_id = kernel_id
        self.kernel = kernel
        self.bindings = bindings
        self.geometry = geometry
        self.variant = variant
        self.size = size


def load_kernel_dir(path, sub_group_size: int) -> list[KernelEntry]:
    root = Path(path)
    man = root / "manifest.json"
    if not man.exists():
        raise PerfseerError(f"{root} has no manifest.json; create it with 'perfseer generate'")
    doc = json.loads(man.read_text())
    out = []
    for entry in doc["kernels"]:
        k = kernel_from_json(json.loads((root / entry["file"]).read_text()))
        out.append(KernelEntry(entry["kernel_id"], k, dict(entry["bindings"]),
                               launch_geometry(k, sub_group_size), entry.get("variant", ""),
                               entry.get("size", "")))
    return out


def _bindings(items) -> dict[str, int]:
    out = {}
    for item in items:
        out.update(parse_bindings(item))
    return out


def common(f):
    f = click.option("--out", "out", default=None, help="Output file or directory (default: stdout).")(f)
    f = click.option("--sub-group-size", type=int, default=None,
                     help="Sub-group size used for granularity division (default 32).")(f)
    f = click.option("--seed", type=int, default=None, help="Seed for stochastic steps.")(f)
    return f


def _opts(ctx, seed, sub_group_size, out):
    g = ctx.obj or {}
    return (seed if seed is not None else g.get("seed"),
            sub_group_size or g.get("sub_group_size") or 32,
            out if out is not None else g.get("out"))

# }}}


@click.group()
@click.option("--seed", type=int, default=None, help="Seed for stochastic steps.")
@click.option("--sub-group-size", type=int, default=32, show_default=True)
@click.option("--out", default=None, help="Output file or directory.")
@click.version_option(__version__, prog_name="perfseer")
@click.pass_context
def cli(ctx, seed, sub_group_size, out):
    """Performance modeling from kernel features and calibrated parameters."""
    ctx.obj = {"seed": seed, "sub_group_size": sub_group_size, "out": out}


@cli.command("count")
@click.argument("kernel_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--bind", "-b", multiple=True, help="Parameter bindings, e.g. n=1024.")
@click.option("--format", "fmt", type=click.Choice(["text", "json"]), default="text")
@common
@click.pass_context
def cmd_count(ctx, kernel_file, bind, fmt, seed, sub_group_size, out):
    """Print the symbolic counts of a kernel (.knl text or .json)."""
    _, sg, out = _opts(ctx, seed, sub_group_size, out)
    k = load_kernel(kernel_file)
    bindings = _bindings(bind)
    if bindings:
        k.check_bindings(bindings)
    counts = count_kernel(k)
    rows = sorted(((str(key), key.granularity, value) for key, value in counts.items()),
                  key=lambda r: r[0])
    if fmt == "json":
        doc = [{"key": key, "granularity": gran, "count": str(value),
                **({"value": format_value(value.evaluate(bindings))} if bindings else {})}
               for key, gran, value in rows]
        _emit(json.dumps({"kernel": k.name, "bindings": bindings, "counts": doc},
                         indent=2, sort_keys=True) + "\n", out)
        return
    lines = []
    for key, gran, value in rows:
        line = f"{key} [{gran}]: {value}"
        if bindings:
            line += f" = {format_value(value.evaluate(bindings))}"
        lines.append(line)
    _emit("\n".join(lines) + "\n", out)


@cli.command("generate")
@click.option("--tags", "-t", multiple=True, required=True,
              help="Generator and variant tags; repeat or separate with commas.")
@click.option("--cond", default="superset", show_default=True,
              type=click.Choice(["identical", "subset", "superset", "intersect"]))
@click.option("--append", is_flag=True, help="Add to an existing kernel directory.")
@common
@click.pass_context
def cmd_generate(ctx, tags, cond, append, seed, sub_group_size, out):
    """Expand measurement kernels into a directory of kernel JSON files."""
    _, sg, out = _opts(ctx, seed, sub_group_size, out)
    if not out:
        raise click.UsageError("generate needs --out DIR")
    tag_list = [t.strip() for group in tags for t in _split_tags(group) if t.strip()]
    variants = generate_kernels(ALL_GENERATORS, tag_list, MatchCondition.parse(cond), sg)
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    entries, runs = [], []
    if append and (root / "manifest.json").exists():
        old = json.loads((root / "manifest.json").read_text())
        entries, runs = old["kernels"], old["runs"]
    known = {e["kernel_id"] for e in entries}
    for v in variants:
        if v.kernel_id in known:
            continue
        fname = f"{v.kernel_id}.json"
        _write_json(root / fname, kernel_to_json(v.kernel))
        entries.append({"kernel_id": v.kernel_id, "file": fname, "bindings": v.bindings,
                        "variant": v.variant, "size": v.size, "provenance": v.provenance})
    runs.append(manifest("generate", {}, seed) | {"tags": tag_list, "cond": cond})
    _write_json(root / "manifest.json", {"runs": runs, "kernels": entries})
    click.echo(f"{len(variants)} kernels generated; {len(entries)} in {root}", err=True)


def _split_tags(text: str) -> list[str]:
    # "dtype:float32,float64" keeps its value list; a comma before "name:" or a
    # bare generator tag starts a new tag
    parts, cur = [], ""
    for piece in text.split(","):
        if cur and (":" in piece or ":" not in cur):
            parts.append(cur)
            cur = piece
        else:
            cur = f"{cur},{piece}" if cur else piece
    if cur:
        parts.append(cur)
    return parts


@cli.command("features")
@click.option("--model", "model_file", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--kernels", "kernel_dir", required=True, type=click.Path(exists=True, file_okay=False))
@common
@click.pass_context
def cmd_features(ctx, model_file, kernel_dir, seed, sub_group_size, out):
    """Evaluate a model's input features on every kernel of a directory (CSV)."""
    _, sg, out = _opts(ctx, seed, sub_group_size, out)
    m = parse_model_file(Path(model_file).read_text())
    entries = load_kernel_dir(kernel_dir, sg)
    good, failures = [], []
    for e in entries:
        try:
            gather_feature_values(m.feature_ids, [e], sub_group_size=sg)
            good.append(e)
        except PerfseerError as exc:
            failures.append({"kernel_id": e.kernel_id, "error": str(exc)})
    table = gather_feature_values(m.feature_ids, good, sub_group_size=sg)
    _emit(table.to_csv(), out)
    _partial(failures, out, manifest("features", {"model": model_file, "kernels": kernel_dir},
                                     seed, [f["kernel_id"] for f in failures]))


def _partial(failures, out, man) -> None:
    if out and out != "-":
        _write_json(Path(str(out) + ".manifest.json"), man)
    if failures:
        for f in failures:
            click.echo(f"error: {f['kernel_id']}: {f['error']}", err=True)
        raise SystemExit(1)


@cli.command("measure")
@click.option("--device", "device_file", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--kernels", "kernel_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--trials", type=int, default=60, show_default=True)
@common
@click.pass_context
def cmd_measure(ctx, device_file, kernel_dir, trials, seed, sub_group_size, out):
    """Time every kernel of a directory on a synthetic device (CSV)."""
    seed, sg, out = _opts(ctx, seed, sub_group_size, out)
    spec_doc = json.loads(Path(device_file).read_text())
    if seed is not None:
        spec_doc["seed"] = seed
    dev = SyntheticDevice(SyntheticDeviceSpec.from_json(spec_doc))
    entries = load_kernel_dir(kernel_dir, dev.spec.sub_group_size)
    records, failures = [], []
    for e in entries:
        try:
            records.extend(measure_variants(dev, [e], trials))
        except PerfseerError as exc:
            failures.append({"kernel_id": e.kernel_id, "error": str(exc)})
    _emit(write_measurements(records), out)
    _partial(failures, out, manifest("measure", {"device": device_file, "kernels": kernel_dir},
                                     dev.spec.seed, [f["kernel_id"] for f in failures]))


@cli.command("calibrate")
@click.option("--model", "model_file", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--measurements", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--features", "features_file", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--scale/--no-scale", default=True, show_default=True,
              help="Fit relative errors (divide inputs by outputs).")
@click.option("--nonnegative", is_flag=True, help="Clamp cost parameters at zero.")
@common
@click.pass_context
def cmd_calibrate(ctx, model_file, measurements, features_file, scale, nonnegative, seed,
                  sub_group_size, out):
    """Fit model parameters; writes calibrated-model JSON."""
    _, _, out = _opts(ctx, seed, sub_group_size, out)
    m = parse_model_file(Path(model_file).read_text())
    table = FeatureTable.from_csv(Path(features_file).read_text())
    records = read_measurements(Path(measurements).read_text())
    prob = CalibrationProblem.from_measurements(m, table, records)
    if prob.nrows < len(m.params):
        raise CalibrationError(
            f"rank-deficient calibration: {prob.nrows} row(s) for {len(m.params)} parameters; "
            "measure more kernels")
    if scale:
        prob = scale_features_by_output(prob)
    cm = fit_model(m, prob, nonnegative=nonnegative)
    for w in cm.warnings:
        click.echo(f"warning: {w}", err=True)
    doc = cm.to_json()
    doc["manifest"] = manifest("calibrate", {"model": model_file, "measurements": measurements,
                                             "features": features_file}, seed)
    _emit(json.dumps(doc, indent=2, sort_keys=True) + "\n", out)


@cli.command("predict")
@click.option("--calibrated", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--kernel", "kernel_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--kernels", "kernel_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--bind", "-b", multiple=True, help="Parameter bindings for --kernel.")
@common
@click.pass_context
def cmd_predict(ctx, calibrated, kernel_file, kernel_dir, bind, seed, sub_group_size, out):
    """Predict seconds for one kernel, or a predictions CSV for a directory."""
    _, sg, out = _opts(ctx, seed, sub_group_size, out)
    if (kernel_file is None) == (kernel_dir is None):
        raise click.UsageError("give exactly one of --kernel and --kernels")
    cm = CalibratedModel.from_json(json.loads(Path(calibrated).read_text()))
    if kernel_file is not None:
        k = load_kernel(kernel_file)
        bindings = _bindings(bind)
        k.check_bindings(bindings)
        seconds = predict(cm, k, bindings, launch_geometry(k, sg))
        _emit(f"{seconds!r}\n", out)
        return
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kernel_id", "variant", "size", "bindings", "predicted_seconds"])
    for e in load_kernel_dir(kernel_dir, sg):
        seconds = predict(cm, e.kernel, e.bindings, e.geometry)
        w.writerow([e.kernel_id, e.variant, e.size, format_bindings(e.bindings), repr(seconds)])
    _emit(buf.getvalue(), out)


def _read_predictions(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    if rows and not {"kernel_id", "predicted_seconds"} <= set(rows[0]):
        raise ExecutorError("predictions CSV needs kernel_id and predicted_seconds columns")
    return rows


def build_report(measured: dict[str, float], predictions: list[dict]) -> dict[str, str]:
    """Report files keyed by name: per-variant series, error table, ranking."""
    missing = [p["kernel_id"] for p in predictions if p["kernel_id"] not in measured]
    if missing:
        raise ExecutorError("no measurement for kernel(s) " + ", ".join(missing))
    extra = sorted(set(measured) - {p["kernel_id"] for p in predictions})
    if extra:
        raise ExecutorError("no prediction for kernel(s) " + ", ".join(extra))
    by_variant: dict[str, list] = {}
    for p in predictions:
        by_variant.setdefault(p.get("variant") or p["kernel_id"], []).append(p)
    files = {}
    table = io.StringIO()
    tw = csv.writer(table, lineterminator="\n")
    tw.writerow(["variant", "kernels", "geo_mean_rel_error_pct"])
    all_pred, all_meas = [], []
    for variant in sorted(by_variant):
        rows = by_variant[variant]
        series = io.StringIO()
        sw = csv.writer(series, lineterminator="\n")
        sw.writerow(["size", "measured", "predicted"])
        pred = [float(r["predicted_seconds"]) for r in rows]
        meas = [measured[r["kernel_id"]] for r in rows]
        for r, pv, mv in zip(rows, pred, meas):
            sw.writerow([r.get("size", ""), repr(mv), repr(pv)])
        safe = "".join(c if c.isalnum() or c in "-_=." else "_" for c in variant)
        files[f"series_{safe}.csv"] = series.getvalue()
        tw.writerow([variant, len(rows), f"{100 * geo_mean_rel_error(pred, meas):.4g}"])
        all_pred += pred
        all_meas += meas
    tw.writerow(["mean", len(all_pred), f"{100 * geo_mean_rel_error(all_pred, all_meas):.4g}"])
    files["error_table.csv"] = table.getvalue()
    rank = io.StringIO()
    rw = csv.writer(rank, lineterminator="\n")
    rw.writerow(["size", "measured_order", "predicted_order", "correct"])
    sizes: dict[str, list] = {}
    for p in predictions:
        sizes.setdefault(p.get("size", ""), []).append(p)
    for size in sorted(sizes):
        rows = sizes[size]
        if len({r.get("variant") or r["kernel_id"] for r in rows}) < 2:
            continue
        label = lambda r: r.get("variant") or r["kernel_id"]
        true_order = [label(r) for r in sorted(rows, key=lambda r: (measured[r["kernel_id"]], label(r)))]
        pred_order = [label(r) for r in sorted(rows, key=lambda r: (float(r["predicted_seconds"]), label(r)))]
        rw.writerow([size, " < ".join(true_order), " < ".join(pred_order),
                     str(true_order == pred_order).lower()])
    files["ranking.csv"] = rank.getvalue()
    return files


@cli.command("report")
@click.option("--measurements", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--predictions", required=True, type=click.Path(exists=True, dir_okay=False))
@common
@click.pass_context
def cmd_report(ctx, measurements, predictions, seed, sub_group_size, out):
    """Measured-vs-predicted series, error table and variant ranking."""
    _, _, out = _opts(ctx, seed, sub_group_size, out)
    if not out:
        raise click.UsageError("report needs --out DIR")
    measured = {r.kernel_id: r.mean_seconds for r in read_measurements(Path(measurements).read_text())}
    files = build_report(measured, _read_predictions(Path(predictions).read_text()))
    root = Path(out)
    root.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (root / name).write_text(text)
    _write_json(root / "manifest.json", manifest("report", {"measurements": measurements,
                                                            "predictions": predictions}, seed))
    click.echo(files["error_table.csv"], nl=False)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="perfseer", standalone_mode=False)
    except PerfseerError as exc:
        click.echo(f"error: {exc}", err=True)
        return exc.exit_code
    except click.exceptions.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return exc.exit_code
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
