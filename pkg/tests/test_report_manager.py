import json
import math

import numpy as np
import pytest

from lfi_node.core.exceptions import FormatError
from lfi_node.managers.report_manager import ReportManager, json_safe


def make_rm(tmp_path) -> ReportManager:
    return ReportManager(tmp_path / "reports")


def make_report(mode, seed, rmse=0.1, mae=0.5, loss=1.0, wall=100.0):
    return {
        "mode": mode,
        "seed": seed,
        "summary": {"rmse_normalized": rmse, "eig_mae": mae},
        "train": {"final_L_total": loss, "wall_ms": wall},
    }


def test_save_and_load_eval(tmp_path):
    rm = make_rm(tmp_path)

    path = rm.save_eval(make_report("lfi", 3, rmse=float("nan")))

    assert path == tmp_path / "reports" / "eval_lfi_seed3.json"
    loaded = rm.load_eval(path)
    assert loaded["mode"] == "lfi"
    # non-finite values are stored as null
    assert loaded["summary"]["rmse_normalized"] is None
    assert rm.artifact_dir("lfi", 3) == tmp_path / "reports" / "eval_lfi_seed3"


def test_list_evals_filters_by_mode(tmp_path):
    rm = make_rm(tmp_path)
    rm.save_eval(make_report("lfi", 0))
    rm.save_eval(make_report("lfi", 1))
    rm.save_eval(make_report("vanilla", 0))
    (tmp_path / "reports" / "comparison.json").write_text("{}")

    assert len(rm.list_evals()) == 3
    assert [r["seed"] for r in rm.list_evals("lfi")] == [0, 1]
    assert rm.list_evals("narx") == []


def test_missing_directory_is_empty(tmp_path):
    assert make_rm(tmp_path).list_evals() == []
    assert make_rm(tmp_path).comparison() == []


def test_malformed_report(tmp_path):
    rm = make_rm(tmp_path)
    path = tmp_path / "eval_lfi_seed0.json"
    path.write_text("{not json")

    with pytest.raises(FormatError):
        rm.load_eval(path)


def test_comparison_medians_and_order(tmp_path):
    rm = make_rm(tmp_path)
    rm.save_eval(make_report("vanilla", 0, rmse=0.4, mae=2.0))
    rm.save_eval(make_report("lfi", 0, rmse=0.1, mae=0.2, loss=3.0))
    rm.save_eval(make_report("lfi", 1, rmse=0.3, mae=None, loss=1.0))
    rm.save_eval(make_report("lfi", 2, rmse=0.2, mae=0.4, loss=2.0))
    rm.save_eval(make_report("narx", 0, mae=float("inf")))

    rows = rm.comparison()

    assert [r["mode"] for r in rows] == ["lfi", "vanilla", "narx"]
    lfi = rows[0]
    assert lfi["seeds"] == 3
    assert lfi["trajectory_rmse"] == pytest.approx(0.2)
    assert lfi["eigenvalue_mae"] == pytest.approx(0.3)
    assert lfi["final_train_loss"] == pytest.approx(2.0)
    assert rows[2]["eigenvalue_mae"] is None


def test_write_comparison(tmp_path):
    rm = make_rm(tmp_path)
    rm.save_eval(make_report("lfi", 0, mae=None))

    paths = rm.write_comparison(rm.comparison())

    lines = paths["csv"].read_text("utf-8").splitlines()
    assert lines[0] == (
        "mode,seeds,trajectory_rmse,eigenvalue_mae,final_train_loss,train_wall_ms"
    )
    assert lines[1] == "lfi,1,0.1,,1.0,100.0"
    rows = json.loads(paths["json"].read_text("utf-8"))["rows"]
    assert rows[0]["eigenvalue_mae"] is None


def test_json_safe():
    value = {
        "a": [np.float64(1.5), math.inf],
        "b": np.array([1, 2]),
        "c": (np.int64(3), np.bool_(True)),
    }

    assert json_safe(value) == {"a": [1.5, None], "b": [1, 2], "c": [3, True]}
