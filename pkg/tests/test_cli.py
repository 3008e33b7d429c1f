import json

from rcmcalib.cli import cli_main
from rcmcalib.io import read_json, sequence_from_dict
from rcmcalib.simdata import biased_noise_model, default_config


def write_scenario(path, n=10, seed=0, noise=None):
    cfg = default_config(n_frames=n, seed=seed, noise=noise)
    path.write_text(json.dumps({"scenario": cfg.to_json_dict()}))
    return cfg


def test_simulate_then_calibrate_smoke(tmp_path):
    cfg_path = tmp_path / "c.json"
    write_scenario(cfg_path, n=10, seed=0)
    seq_path = tmp_path / "seq.json"
    assert cli_main(["simulate", "--config", str(cfg_path), "--output", str(seq_path)]) == 0
    seq = sequence_from_dict(read_json(seq_path))
    assert len(seq.frames) == 10

    assert cli_main([
        "calibrate", "--input", str(seq_path), "--output-dir", str(tmp_path),
    ]) == 0
    result = read_json(tmp_path / "result.json")
    assert result["schema_version"] == 1
    assert set(result["hand_eye"]) == {"quat", "trans"}
    assert len(result["frames"]) == 10


def test_evaluate_writes_metrics(tmp_path):
    cfg_path = tmp_path / "c.json"
    write_scenario(cfg_path, n=10, seed=1)
    assert cli_main(["simulate", "--config", str(cfg_path),
                     "--output", str(tmp_path / "seq.json")]) == 0
    assert cli_main(["calibrate", "--input", str(tmp_path / "seq.json"),
                     "--output-dir", str(tmp_path)]) == 0
    assert cli_main([
        "evaluate", "--input", str(tmp_path / "seq.json"),
        "--result", str(tmp_path / "result.json"),
        "--output-dir", str(tmp_path), "--format", "csv",
    ]) == 0
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines[0] == "frame,err2d_px,err2d_mm,err3d_mm,included_flag"
    assert lines[-2].startswith("avg,")
    assert lines[-1].startswith("median,")

    assert cli_main([
        "evaluate", "--input", str(tmp_path / "seq.json"),
        "--result", str(tmp_path / "result.json"),
        "--output-dir", str(tmp_path), "--format", "json",
    ]) == 0
    doc = read_json(tmp_path / "metrics.json")
    assert "summary" in doc and "frames" in doc


def test_pipeline_prints_hand_eye_errors(tmp_path, capsys):
    cfg_path = tmp_path / "c.json"
    write_scenario(cfg_path, n=12, seed=2)
    assert cli_main(["pipeline", "--config", str(cfg_path),
                     "--output-dir", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    line = next(l for l in out.splitlines() if "rotation_error_rad=" in l)
    rot_err = float(line.split("rotation_error_rad=")[1].split()[0])
    assert rot_err < 1e-3
    assert (tmp_path / "sequence.json").exists()
    assert (tmp_path / "result.json").exists()
    assert (tmp_path / "metrics.csv").exists()


def test_missing_input_is_usage_error(tmp_path, capsys):
    code = cli_main(["calibrate", "--input", str(tmp_path / "nope.json"),
                     "--output-dir", str(tmp_path)])
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error_class"] == "ConfigError"


def test_invalid_config_is_usage_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"scenario": {"n_frames": 2}}))
    code = cli_main(["pipeline", "--config", str(bad), "--output-dir", str(tmp_path)])
    assert code == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error_class"] == "ConfigError"


def test_runtime_failure_exit_code_distinct(tmp_path, capsys):
    cfg_path = tmp_path / "c.json"
    write_scenario(cfg_path, n=10, seed=3)
    assert cli_main(["simulate", "--config", str(cfg_path),
                     "--output", str(tmp_path / "seq.json")]) == 0
    doc = read_json(tmp_path / "seq.json")
    doc["frames"] = doc["frames"][:2]
    (tmp_path / "short.json").write_text(json.dumps(doc))
    code = cli_main(["calibrate", "--input", str(tmp_path / "short.json"),
                     "--output-dir", str(tmp_path)])
    assert code == 1
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error_class"] == "TooFewInliersError"


def test_seed_override_changes_sequence(tmp_path):
    cfg_path = tmp_path / "c.json"
    write_scenario(cfg_path, n=8, seed=4, noise=biased_noise_model())
    for seed, name in ((None, "a.json"), (99, "b.json")):
        argv = ["simulate", "--config", str(cfg_path), "--output", str(tmp_path / name)]
        if seed is not None:
            argv += ["--seed", str(seed)]
        assert cli_main(argv) == 0
    a = (tmp_path / "a.json").read_bytes()
    b = (tmp_path / "b.json").read_bytes()
    assert a != b


def test_repeat_runs_byte_identical(tmp_path):
    cfg_path = tmp_path / "c.json"
    write_scenario(cfg_path, n=10, seed=5, noise=biased_noise_model())
    outs = []
    for d in ("run1", "run2"):
        out = tmp_path / d
        assert cli_main(["pipeline", "--config", str(cfg_path),
                         "--output-dir", str(out)]) == 0
        outs.append(out)
    for name in ("sequence.json", "result.json", "metrics.csv"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()
