"""Command-line behavior: flags, precedence, exit codes, stdout contracts."""

import json
import os
import re
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from camgate.cli import ENV_OUTPUT_DIR, RunConfig, main
from camgate.gradcam import gradcam_for, read_value_grid
from camgate.harness import _prepare_input
from camgate.imaging import decode
from camgate.model import forward, load_model


def _run(capsys, argv):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def _model_args(fx):
    return ["--model", fx["manifest"], "--weights", fx["weights"]]


def _s01_png(suite12_fx):
    return os.path.join(suite12_fx["root"], "images", "s01.png")


def _s10_only_dataset(suite12_fx, tmp_path):
    """One-sample dataset whose only verdict is INCONCLUSIVE (black image)."""
    line = json.dumps({
        "sample_id": "only", "image": os.path.join(suite12_fx["root"], "images", "s10.png"),
        "true_label": "object", "odd_tag": "synthetic:black", "boxes": [[16, 16, 48, 48]],
    })
    path = tmp_path / "only.jsonl"
    path.write_text(line + "\n", encoding="utf-8")
    return str(path)


# ---------------------------------------------------------------------------
# explain
# ---------------------------------------------------------------------------

def test_explain_writes_overlay_and_tab_separated_line(capsys, suite12_fx, suite12_model, tmp_path):
    out = str(tmp_path / "out")
    code, stdout, _ = _run(capsys, ["explain", _s01_png(suite12_fx),
                                    *_model_args(suite12_fx), "--output-dir", out])
    assert code == 0
    line = stdout.strip().splitlines()[0]
    label, conf, overlay = line.split("\t")
    assert label == "object"
    assert re.fullmatch(r"0\.\d{6}", conf)
    assert float(conf) > 0.9
    assert overlay == os.path.join(out, "s01.object.heatmap.png")
    assert os.path.isfile(overlay)

    # value sidecar must equal an in-process recomputation exactly
    sidecar = os.path.join(out, "s01.object.heatmap.csv")
    base = decode(_s01_png(suite12_fx))
    record = forward(suite12_model, _prepare_input(base, suite12_model))
    expected = gradcam_for(suite12_model, record, None,
                           out_size=(base.width, base.height), sample_id="s01")
    assert np.array_equal(read_value_grid(sidecar), expected.values)


def test_explain_explicit_class_warns_when_degenerate(capsys, suite12_fx, tmp_path):
    # the background head row carries no activation weights, so its map is zero
    code, stdout, stderr = _run(capsys, ["explain", _s01_png(suite12_fx),
                                         *_model_args(suite12_fx),
                                         "--class", "empty",
                                         "--output-dir", str(tmp_path)])
    assert code == 0
    assert "\t" in stdout
    assert "degenerate" in stderr
    assert os.path.isfile(tmp_path / "s01.empty.heatmap.png")


def test_explain_class_index_out_of_range(capsys, suite12_fx, tmp_path):
    code, _, stderr = _run(capsys, ["explain", _s01_png(suite12_fx), *_model_args(suite12_fx),
                                    "--class", "9", "--output-dir", str(tmp_path)])
    assert code == 2
    assert "error: class index 9 out of range [0, 2)" in stderr


def test_explain_unknown_class_label(capsys, suite12_fx, tmp_path):
    code, _, stderr = _run(capsys, ["explain", _s01_png(suite12_fx), *_model_args(suite12_fx),
                                    "--class", "giraffe", "--output-dir", str(tmp_path)])
    assert code == 2
    assert "unknown class label 'giraffe'" in stderr


def test_explain_missing_image_names_path(capsys, suite12_fx, tmp_path):
    ghost = str(tmp_path / "nope.png")
    code, _, stderr = _run(capsys, ["explain", ghost, *_model_args(suite12_fx),
                                    "--output-dir", str(tmp_path)])
    assert code == 2
    assert stderr.startswith("error:")
    assert "nope.png" in stderr


def test_explain_target_layer_override_and_bad_name(capsys, suite12_fx, tmp_path):
    code, _, _ = _run(capsys, ["explain", _s01_png(suite12_fx), *_model_args(suite12_fx),
                               "--target-layer", "pool_conv", "--output-dir", str(tmp_path)])
    assert code == 0
    code, _, stderr = _run(capsys, ["explain", _s01_png(suite12_fx), *_model_args(suite12_fx),
                                    "--target-layer", "ghost", "--output-dir", str(tmp_path)])
    assert code == 2
    assert "no layer named 'ghost'" in stderr


# ---------------------------------------------------------------------------
# combined
# ---------------------------------------------------------------------------

def test_combined_single_sample_equals_its_own_map(capsys, suite12_fx, suite12_model, tmp_path):
    line = json.dumps({
        "sample_id": "solo", "image": _s01_png(suite12_fx),
        "true_label": "object", "odd_tag": "synthetic", "boxes": [[0, 0, 32, 32]],
    })
    dataset = tmp_path / "solo.jsonl"
    dataset.write_text(line + "\n", encoding="utf-8")
    out = str(tmp_path / "out")
    code, stdout, _ = _run(capsys, ["combined", *_model_args(suite12_fx),
                                    "--dataset", str(dataset), "--output-dir", out])
    assert code == 0
    assert "samples: 1  degenerate (excluded): 0" in stdout
    assert f"combined map over 1 samples: {os.path.join(out, 'combined.heatmap.png')}" in stdout

    base = decode(_s01_png(suite12_fx))
    record = forward(suite12_model, _prepare_input(base, suite12_model))
    solo = gradcam_for(suite12_model, record, None,
                       out_size=(base.width, base.height), sample_id="solo")
    got = read_value_grid(os.path.join(out, "combined.heatmap.csv"))
    assert np.array_equal(got, solo.values)


def test_combined_empty_dataset_is_config_error(capsys, suite12_fx, tmp_path):
    dataset = tmp_path / "empty.jsonl"
    dataset.write_text("", encoding="utf-8")
    code, _, stderr = _run(capsys, ["combined", *_model_args(suite12_fx),
                                    "--dataset", str(dataset), "--output-dir", str(tmp_path)])
    assert code == 2
    assert "contains no samples" in stderr


def test_combined_all_degenerate_exits_one(capsys, suite12_fx, tmp_path):
    dataset = _s10_only_dataset(suite12_fx, tmp_path)
    code, stdout, stderr = _run(capsys, ["combined", *_model_args(suite12_fx),
                                         "--dataset", dataset,
                                         "--output-dir", str(tmp_path / "out")])
    assert code == 1
    assert "samples: 1  degenerate (excluded): 1" in stdout
    assert "no valid heatmaps to combine" in stderr
    assert not os.path.exists(tmp_path / "out" / "combined.heatmap.png")


def test_combined_requires_dataset(capsys, suite12_fx):
    code, _, stderr = _run(capsys, ["combined", *_model_args(suite12_fx)])
    assert code == 2
    assert "missing required option --dataset" in stderr


# ---------------------------------------------------------------------------
# test (the gate)
# ---------------------------------------------------------------------------

def test_gate_all_pass_exits_zero(capsys, allpass_fx, tmp_path):
    code, stdout, _ = _run(capsys, ["test", *_model_args(allpass_fx),
                                    "--dataset", allpass_fx["annotations"],
                                    "--output-dir", str(tmp_path)])
    assert code == 0
    assert "PASS 4  FAIL 0  INCONCLUSIVE 0  total 4" in stdout
    assert os.path.isfile(tmp_path / "report.json")


def test_gate_mixed_suite_exits_one_with_table(capsys, suite12_fx, tmp_path):
    code, stdout, _ = _run(capsys, ["test", *_model_args(suite12_fx),
                                    "--dataset", suite12_fx["annotations"],
                                    "--output-dir", str(tmp_path)])
    assert code == 1
    assert "PASS 8  FAIL 3  INCONCLUSIVE 1  total 12" in stdout
    lines = stdout.splitlines()
    assert lines[0].startswith("sample")
    assert "status" in lines[0] and "predicted" in lines[0] and "overlap" in lines[0]
    s10_row = next(l for l in lines if l.startswith("s10"))
    assert "INCONCLUSIVE" in s10_row
    assert s10_row.rstrip().endswith("-")  # unscored samples show no overlap number
    assert "classification accuracy: 83.3%" in stdout
    assert f"report: {os.path.join(str(tmp_path), 'report.json')}" in stdout


def test_gate_threshold_flag_beats_config_file(capsys, suite12_fx, tmp_path):
    cfg = tmp_path / "gate.json"
    cfg.write_text(json.dumps({"threshold": 0.9, "dilation": 1.5}), encoding="utf-8")
    out = str(tmp_path / "out")
    code, _, _ = _run(capsys, ["test", *_model_args(suite12_fx),
                               "--dataset", suite12_fx["annotations"],
                               "--config", str(cfg), "--threshold", "0.05",
                               "--output-dir", out])
    assert code == 1
    doc = json.load(open(os.path.join(out, "report.json"), encoding="utf-8"))
    assert doc["suite"]["config"]["threshold"] == 0.05  # flag wins
    assert doc["suite"]["config"]["dilation"] == 1.5    # file fills the gap


def test_gate_config_file_alone_is_honored(capsys, suite12_fx, tmp_path):
    cfg = tmp_path / "gate.json"
    cfg.write_text(json.dumps({
        "model": suite12_fx["manifest"], "weights": suite12_fx["weights"],
        "dataset": suite12_fx["annotations"], "threshold": 0.25,
        "output_dir": str(tmp_path / "out"),
    }), encoding="utf-8")
    code, _, _ = _run(capsys, ["test", "--config", str(cfg)])
    assert code == 1
    doc = json.load(open(tmp_path / "out" / "report.json", encoding="utf-8"))
    assert doc["suite"]["config"]["threshold"] == 0.25


def test_gate_env_output_dir_overrides_flag(capsys, monkeypatch, suite12_fx, tmp_path):
    env_dir = str(tmp_path / "from-env")
    flag_dir = str(tmp_path / "from-flag")
    monkeypatch.setenv(ENV_OUTPUT_DIR, env_dir)
    code, _, _ = _run(capsys, ["test", *_model_args(suite12_fx),
                               "--dataset", suite12_fx["annotations"],
                               "--output-dir", flag_dir])
    assert code == 1
    assert os.path.isfile(os.path.join(env_dir, "report.json"))
    assert not os.path.exists(flag_dir)


def test_gate_config_echo_omits_machine_local_fields(capsys, suite12_fx, tmp_path):
    code, _, _ = _run(capsys, ["test", *_model_args(suite12_fx),
                               "--dataset", suite12_fx["annotations"],
                               "--threads", "3", "--output-dir", str(tmp_path)])
    assert code == 1
    doc = json.load(open(tmp_path / "report.json", encoding="utf-8"))
    echoed = set(doc["suite"]["config"])
    assert "output_dir" not in echoed
    assert "threads" not in echoed
    expected = {f for f in RunConfig.__dataclass_fields__} - {"output_dir", "threads"}
    assert echoed == expected


def test_gate_unknown_config_field(capsys, suite12_fx, tmp_path):
    cfg = tmp_path / "gate.json"
    cfg.write_text(json.dumps({"thresold": 0.5}), encoding="utf-8")
    code, _, stderr = _run(capsys, ["test", *_model_args(suite12_fx),
                                    "--dataset", suite12_fx["annotations"],
                                    "--config", str(cfg), "--output-dir", str(tmp_path)])
    assert code == 2
    assert "unknown field 'thresold'" in stderr


def test_gate_malformed_config_file(capsys, suite12_fx, tmp_path):
    cfg = tmp_path / "gate.json"
    cfg.write_text("{not json", encoding="utf-8")
    code, _, stderr = _run(capsys, ["test", *_model_args(suite12_fx),
                                    "--dataset", suite12_fx["annotations"],
                                    "--config", str(cfg)])
    assert code == 2
    assert "not valid JSON" in stderr


def test_gate_junit_inconclusive_flag(capsys, suite12_fx, tmp_path):
    code, _, _ = _run(capsys, ["test", *_model_args(suite12_fx),
                               "--dataset", suite12_fx["annotations"],
                               "--junit-inconclusive", "failure",
                               "--output-dir", str(tmp_path)])
    assert code == 1
    suite = ET.parse(tmp_path / "report.xml").getroot().find("testsuite")
    assert suite.get("failures") == "4"
    assert suite.get("skipped") == "0"


def test_gate_inconclusive_tolerate_vs_break(capsys, suite12_fx, tmp_path):
    dataset = _s10_only_dataset(suite12_fx, tmp_path)
    code, _, _ = _run(capsys, ["test", *_model_args(suite12_fx), "--dataset", dataset,
                               "--output-dir", str(tmp_path / "a")])
    assert code == 1  # default: INCONCLUSIVE breaks the build
    code, _, _ = _run(capsys, ["test", *_model_args(suite12_fx), "--dataset", dataset,
                               "--inconclusive", "tolerate",
                               "--output-dir", str(tmp_path / "b")])
    assert code == 0


def test_gate_no_require_correct_class_flag(capsys, suite12_fx, tmp_path):
    # a dim image is misclassified as background, but its true-class heatmap
    # covers the annotated region; only the class check decides the verdict
    line = json.dumps({
        "sample_id": "dim", "image": os.path.join(suite12_fx["root"], "images", "s06.png"),
        "true_label": "object", "odd_tag": "synthetic:dim", "boxes": [[0, 0, 64, 64]],
    })
    dataset = tmp_path / "dim.jsonl"
    dataset.write_text(line + "\n", encoding="utf-8")
    base = ["test", *_model_args(suite12_fx), "--dataset", str(dataset),
            "--class-mode", "true"]
    code, stdout, _ = _run(capsys, base + ["--output-dir", str(tmp_path / "a")])
    assert code == 1
    assert "FAIL 1" in stdout
    code, stdout, _ = _run(capsys, base + ["--no-require-correct-class",
                                           "--output-dir", str(tmp_path / "b")])
    assert code == 0
    assert "PASS 1  FAIL 0" in stdout
    doc = json.load(open(tmp_path / "b" / "report.json", encoding="utf-8"))
    assert doc["suite"]["config"]["require_correct_class"] is False


def test_gate_background_samples_ignore_class_relaxation(capsys, suite12_fx, tmp_path):
    # background scenes are judged on classification alone, so relaxing the
    # class requirement must not rescue a misclassified background sample
    code, stdout, _ = _run(capsys, ["test", *_model_args(suite12_fx),
                                    "--dataset", suite12_fx["annotations"],
                                    "--no-require-correct-class",
                                    "--output-dir", str(tmp_path)])
    assert code == 1
    assert "PASS 8  FAIL 3  INCONCLUSIVE 1  total 12" in stdout
    s11_row = next(l for l in stdout.splitlines() if l.startswith("s11"))
    assert "FAIL" in s11_row


def test_gate_broken_weights_is_config_error(capsys, broken_fx, suite12_fx, tmp_path):
    code, _, stderr = _run(capsys, ["test", "--model", broken_fx["manifest"],
                                    "--weights", broken_fx["weights"],
                                    "--dataset", suite12_fx["annotations"],
                                    "--output-dir", str(tmp_path)])
    assert code == 2
    assert "weights file size mismatch" in stderr


def test_gate_missing_model_flag(capsys, suite12_fx):
    code, _, stderr = _run(capsys, ["test", "--weights", suite12_fx["weights"],
                                    "--dataset", suite12_fx["annotations"]])
    assert code == 2
    assert "missing required option --model" in stderr


def test_gate_nonexistent_model_path(capsys, suite12_fx, tmp_path):
    code, _, stderr = _run(capsys, ["test", "--model", str(tmp_path / "ghost.json"),
                                    "--weights", suite12_fx["weights"],
                                    "--dataset", suite12_fx["annotations"]])
    assert code == 2
    assert "model manifest not found" in stderr


def test_gate_bad_flag_values(capsys, suite12_fx, tmp_path):
    base = ["test", *_model_args(suite12_fx), "--dataset", suite12_fx["annotations"],
            "--output-dir", str(tmp_path)]
    code, _, stderr = _run(capsys, base + ["--threshold", "1.5"])
    assert code == 2 and "threshold must be in [0, 1]" in stderr
    code, _, stderr = _run(capsys, base + ["--dilation", "0.5"])
    assert code == 2 and "dilation must be >= 1" in stderr
    code, _, stderr = _run(capsys, base + ["--alpha", "-0.1"])
    assert code == 2 and "alpha must be in [0, 1]" in stderr
    code, _, stderr = _run(capsys, base + ["--threads", "-2"])
    assert code == 2 and "thread count" in stderr


def test_explicit_class_flag_implies_explicit_mode(capsys, suite12_fx, tmp_path):
    out = str(tmp_path / "out")
    code, _, _ = _run(capsys, ["test", *_model_args(suite12_fx),
                               "--dataset", suite12_fx["annotations"],
                               "--class", "object", "--output-dir", out])
    assert code == 1
    doc = json.load(open(os.path.join(out, "report.json"), encoding="utf-8"))
    assert doc["suite"]["config"]["class_mode"] == "explicit"
    assert doc["suite"]["config"]["explicit_class"] == "object"


def test_help_text_lists_subcommands_and_flags(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for word in ("explain", "combined", "test"):
        assert word in out
    with pytest.raises(SystemExit) as exc:
        main(["test", "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for flag in ("--threshold", "--dilation", "--junit-inconclusive", "--inconclusive",
                 "--class-mode", "--background-label", "--output-dir", "--colormap"):
        assert flag in out
