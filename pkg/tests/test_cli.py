import io
import json

import pytest

from smoothquant.cli import run
from smoothquant.container import load_container


def _config(tmp_path, **extra):
    cfg = {
        "seed": 3,
        "model": {"width": 32, "heads": 2, "n_blocks": 2},
        "calibration": {"samples": 8, "seq_len": 16},
        "evaluation": {"samples": 2, "seq_len": 16},
        "outputs": {
            "calib": str(tmp_path / "calib.sqtc"),
            "plan": str(tmp_path / "plan.sqtc"),
            "quantized": str(tmp_path / "quantized.sqtc"),
        },
    }
    cfg.update(extra)
    path = tmp_path / "run.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def _run(*argv):
    out = io.StringIO()
    code = run(list(argv), stdout=out)
    return code, out.getvalue()


def test_full_pipeline(tmp_path):
    cfg = _config(tmp_path)
    assert _run("calibrate", "--config", cfg)[0] == 0
    code, text = _run("smooth", "--config", cfg, "--alpha", "0.5")
    assert code == 0 and "blocks.0.qkv" in text
    assert _run("quantize", "--config", cfg, "--level", "O3")[0] == 0
    q = load_container(tmp_path / "quantized.sqtc")
    assert q["blocks.0.fc1.codes"].dtype.name == "int8"
    code, text = _run("eval", "--config", cfg, "--level", "O3", "--report", "json")
    assert code == 0
    rows = {r["name"]: r for r in json.loads(text)["rows"]}
    assert rows["SmoothQuant-O3"]["rel_error"] < rows["naive-O3"]["rel_error"]


def test_eval_fp_reports_zero_error(tmp_path):
    code, text = _run("eval", "--config", _config(tmp_path), "--level", "FP", "--report", "json")
    assert code == 0
    (row,) = json.loads(text)["rows"]
    assert row["mse"] == 0.0 and row["max_rel_error"] == 0.0


def test_missing_artifact_names_the_step(tmp_path, capsys):
    code, _ = _run("smooth", "--config", _config(tmp_path))
    assert code == 30
    assert "smoothquant calibrate" in capsys.readouterr().err
    assert _run("quantize", "--config", _config(tmp_path))[0] == 30


def test_unknown_config_key(tmp_path):
    assert _run("calibrate", "--config", _config(tmp_path, colour="blue"))[0] == 13
    bad_nested = _config(tmp_path, model={"width": 32, "hieght": 2})
    assert _run("calibrate", "--config", bad_nested)[0] == 13


def test_invalid_values(tmp_path):
    cfg = _config(tmp_path)
    assert _run("smooth", "--config", cfg, "--alpha", "1.5")[0] == 13
    assert _run("search-alpha", "--config", cfg, "--grid", "0.9:0.1:0.1")[0] == 13
    assert _run("calibrate", "--config", cfg, "--clip", "0.7")[0] == 13
    assert _run("calibrate", "--config", str(tmp_path / "nope.json"))[0] == 13
    with pytest.raises(SystemExit) as exc:
        run(["calibrate", "--level", "O9"])
    assert exc.value.code == 2


def test_corrupt_container(tmp_path):
    cfg = _config(tmp_path)
    (tmp_path / "calib.sqtc").write_bytes(b"SQTC\x01\x00\x00\x00\x05")
    assert _run("smooth", "--config", cfg)[0] == 20
    (tmp_path / "calib.sqtc").write_bytes(b"SQTC\x02\x00\x00\x00\x00\x00\x00\x00")
    assert _run("smooth", "--config", cfg)[0] == 21


def test_reports_are_byte_identical(tmp_path):
    cfg = _config(tmp_path, grid="0.3:0.7:0.2")
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert _run("search-alpha", "--config", cfg, "--out", str(a))[0] == 0
    assert _run("search-alpha", "--config", cfg, "--out", str(b))[0] == 0
    assert a.read_bytes() == b.read_bytes()
    report = json.loads(a.read_text())
    assert [r["alpha"] for r in report["curve"]] == [0.3, 0.5, 0.7]


def test_compare_text_table(tmp_path):
    code, text = _run("compare", "--config", _config(tmp_path))
    assert code == 0
    for name in ("act per_tensor", "W8A8", "ZeroQuant", "LLM.int8()", "SmoothQuant-O3"):
        assert name in text


def test_seed_flag_overrides_config(tmp_path):
    cfg = _config(tmp_path)
    assert _run("calibrate", "--config", cfg)[0] == 0
    base = (tmp_path / "calib.sqtc").read_bytes()
    assert _run("calibrate", "--config", cfg, "--seed", "4")[0] == 0
    assert (tmp_path / "calib.sqtc").read_bytes() != base
    assert _run("calibrate", "--config", cfg, "--seed", "3")[0] == 0
    assert (tmp_path / "calib.sqtc").read_bytes() == base
