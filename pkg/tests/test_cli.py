import csv
import io
import json
from pathlib import Path

import pytest

from perfseer.cli import build_report
from perfseer.errors import ExecutorError
from perfseer.features import FeatureTable
from perfseer.kernel_lang import print_kernel
from perfseer.model import CalibratedModel
from perfseer.uipick import matmul_sq, overlap_knl
from pipeline import run, run_pipeline
from scenarios import CG, CO, WALL, overlap_device


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("pipe")
    run_pipeline(root)
    return root


def _knl(tmp_path: Path, name="mm.knl") -> Path:
    path = tmp_path / name
    path.write_text(print_kernel(matmul_sq(False, "float32", 64, 16, 16)[0]))
    return path


def test_count_text_and_json(tmp_path, capsys):
    path = _knl(tmp_path)
    assert run("count", path, "-b", "n=64") == 0
    text = capsys.readouterr().out
    assert "op_float32_madd [sub_group]: { n^3 : n >= 0 } = 262144" in text
    assert run("count", path, "--format", "json", "--out", tmp_path / "c.json") == 0
    doc = json.loads((tmp_path / "c.json").read_text())
    assert doc["kernel"] == "matmul_noPF" and doc["bindings"] == {}
    assert {"key", "granularity", "count"} <= set(doc["counts"][0])


def test_unmet_assumption_exit_code(tmp_path, capsys, pipeline_dir):
    path = _knl(tmp_path)
    assert run("count", path, "-b", "n=1000") == 4
    assert "requires assumption n mod 16 == 0" in capsys.readouterr().err
    code = run("predict", "--calibrated", pipeline_dir / "cal.json", "--kernel", path, "-b", "n=1000")
    assert code == 4
    assert "requires assumption" in capsys.readouterr().err


def test_predict_single_kernel(tmp_path, capsys, pipeline_dir):
    path = _knl(tmp_path)
    assert run("predict", "--calibrated", pipeline_dir / "cal.json", "--kernel", path, "-b", "n=1024") == 0
    seconds = float(capsys.readouterr().out)
    assert 0 < seconds < 10


def test_predict_needs_one_target(pipeline_dir):
    assert run("predict", "--calibrated", pipeline_dir / "cal.json") == 2


def test_pipeline_outputs_round_trip(pipeline_dir):
    table = FeatureTable.from_csv((pipeline_dir / "feats.csv").read_text())
    assert len(table.kernel_ids) == 62
    assert FeatureTable.from_csv(table.to_csv()) == table
    cm = CalibratedModel.from_json(json.loads((pipeline_dir / "cal.json").read_text()))
    assert json.loads(json.dumps(cm.to_json())) == {k: v for k, v in json.loads(
        (pipeline_dir / "cal.json").read_text()).items() if k != "manifest"}
    man = json.loads((pipeline_dir / "meas.csv.manifest.json").read_text())
    assert man["command"] == "measure" and man["failures"] == [] and man["seed"] == 7
    assert man["timestamp"] is None


def test_report_ranking(pipeline_dir):
    ranking = list(csv.DictReader(io.StringIO((pipeline_dir / "report" / "ranking.csv").read_text())))
    assert ranking == []  # one variant per size in the matmul test set
    table = list(csv.reader(io.StringIO((pipeline_dir / "report" / "error_table.csv").read_text())))
    assert table[0] == ["variant", "kernels", "geo_mean_rel_error_pct"]
    assert table[-1][0] == "mean" and table[-1][1] == "4"
    assert float(table[-1][2]) < 5


def test_report_flags_winner():
    measured = {"a1": 2.0, "b1": 1.0, "a2": 4.0, "b2": 5.0}
    preds = [{"kernel_id": k, "variant": k[0], "size": "n=" + k[1], "predicted_seconds": str(v)}
             for k, v in (("a1", 2.1), ("b1", 0.9), ("a2", 4.4), ("b2", 3.9))]
    files = build_report(measured, preds)
    rows = list(csv.DictReader(io.StringIO(files["ranking.csv"])))
    assert [(r["size"], r["measured_order"], r["correct"]) for r in rows] == \
        [("n=1", "b < a", "true"), ("n=2", "a < b", "false")]
    assert set(files) == {"series_a.csv", "series_b.csv", "error_table.csv", "ranking.csv"}
    with pytest.raises(ExecutorError):
        build_report({"a1": 1.0}, preds)


def test_overlap_sweep_series_has_regime_change():
    dev = overlap_device(0.0)
    measured, preds = {}, []
    for m in range(17):
        k, b = overlap_knl("float32", m, 1048576, 16, 16)
        kid = f"overlap_m{m}"
        measured[kid] = dev.base_time(k, b)
        preds.append({"kernel_id": kid, "variant": "overlap", "size": f"m={m}",
                      "predicted_seconds": repr(measured[kid])})
    series = list(csv.DictReader(io.StringIO(build_report(measured, preds)["series_overlap.csv"])))
    times = [float(r["measured"]) for r in series]
    steps = [b - a for a, b in zip(times, times[1:])]
    # flat while global traffic dominates, then a constant slope per local pair
    assert min(steps) < 1e-3 * max(steps)
    assert steps[-1] == pytest.approx(max(steps))
    assert all(s >= 0 for s in steps)


def test_calibrate_rank_deficient(tmp_path, capsys):
    model = tmp_path / "m.txt"
    model.write_text(f"{WALL}\np_a * f_thread_groups + p_b\n")
    (tmp_path / "f.csv").write_text("kernel_id,f_thread_groups\nk1,4\n")
    (tmp_path / "t.csv").write_text("kernel_id,bindings,mean_seconds,trials\nk1,n=4,0.5,60\n")
    code = run("calibrate", "--model", model, "--measurements", tmp_path / "t.csv",
               "--features", tmp_path / "f.csv")
    assert code == 8
    assert "rank-deficient" in capsys.readouterr().err


def test_partial_failure_lists_kernels(tmp_path, capsys):
    out = tmp_path / "k"
    assert run("generate", "-t", "finite_diff", "-t", "dtype:float32", "-t", "n:1120", "--out", out) == 0
    model = tmp_path / "m.txt"
    model.write_text(f"{WALL}\np_a * f_op_float32_add + p_b * f_thread_groups\n")
    code = run("features", "--model", model, "--kernels", out, "--out", tmp_path / "f.csv")
    assert code == 1
    man = json.loads((tmp_path / "f.csv.manifest.json").read_text())
    assert len(man["failures"]) == 1 and "18x18" in man["failures"][0]
    good = FeatureTable.from_csv((tmp_path / "f.csv").read_text())
    assert len(good.kernel_ids) == 1 and "16x16" in good.kernel_ids[0]
    assert "sub-group" in capsys.readouterr().err


def test_generate_requires_out():
    assert run("generate", "-t", "empty") == 2


def test_generate_append_and_comma_tags(tmp_path):
    out = tmp_path / "k"
    assert run("generate", "-t", "empty,ngroups:16,256", "--out", out) == 0
    assert run("generate", "-t", "empty", "-t", "ngroups:16,4096", "--append", "--out", out) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert [e["bindings"]["ngroups"] for e in man["kernels"]] == [16, 256, 4096]
    assert len(man["runs"]) == 2


def test_missing_kernel_dir_manifest(tmp_path, capsys):
    model = tmp_path / "m.txt"
    model.write_text(f"{WALL}\n{CG} + {CO}\n")
    assert run("features", "--model", model, "--kernels", tmp_path) == 1
    assert "manifest.json" in capsys.readouterr().err


def test_bad_model_file(tmp_path):
    model = tmp_path / "m.txt"
    model.write_text(f"{WALL}\np_a * \n")
    (tmp_path / "k").mkdir()
    assert run("features", "--model", model, "--kernels", tmp_path / "k") == 2
