"""Command-line interface.

Subcommands:
  simulate   ScenarioConfig JSON -> sequence JSON
  calibrate  sequence JSON -> result JSON (+ diagnostics)
  evaluate   result + sequence -> metrics CSV/JSON
  pipeline   all three from a single config document

Exit codes: 0 success, 2 usage/config error, 1 runtime failure. Failures
print one machine-readable JSON line on stderr:
  {"error_class": "...", "message": "..."}
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .errors import CalibrationError, ConfigError
from .io import read_json, sequence_from_dict, sequence_from_synthetic, sequence_to_dict, write_json
from .pipeline import CalibConfig, CalibrationResult, calibrate, evaluate
from .simdata import ScenarioConfig, default_config, generate_sequence

USAGE_EXIT = 2
RUNTIME_EXIT = 1


def _emit_error(exc: Exception) -> None:
    cls = exc.error_class if isinstance(exc, CalibrationError) else type(exc).__name__
    sys.stderr.write(json.dumps({"error_class": cls, "message": str(exc)}) + "\n")


def _load_scenario(path, seed_override) -> ScenarioConfig:
    doc = read_json(path)
    scenario_doc = doc.get("scenario", doc)
    cfg = ScenarioConfig.from_json_dict(scenario_doc)
    if seed_override is not None:
        cfg = ScenarioConfig.from_json_dict({**cfg.to_json_dict(), "seed": seed_override})
    return cfg


def _load_calib_config(path) -> CalibConfig:
    if path is None:
        return CalibConfig()
    doc = read_json(path)
    return CalibConfig.from_json_dict(doc.get("calibration", doc))


def _out_path(args, name: str) -> str:
    os.makedirs(args.output_dir, exist_ok=True)
    return os.path.join(args.output_dir, name)


def _write_metrics(metrics, path, fmt: str) -> None:
    if fmt == "csv":
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(metrics.to_csv())
    else:
        write_json(path, metrics.to_json_dict())


def _print_summary(metrics) -> None:
    s = metrics.summary()
    print(
        "tip_error avg2d={:.4g}px ({:.4g}mm) median2d={:.4g}px ({:.4g}mm) "
        "avg3d={:.4g}mm median3d={:.4g}mm frames={} skipped={}".format(
            s["avg_err2d_px"], s["avg_err2d_mm"],
            s["median_err2d_px"], s["median_err2d_mm"],
            s["avg_err3d_mm"], s["median_err3d_mm"],
            s["n_included"], s["n_skipped"],
        )
    )


def _print_hand_eye_errors(hand_eye, gt_hand_eye) -> None:
    from .geom import compose, invert

    delta = compose(invert(gt_hand_eye), hand_eye)
    rot_err = delta.rotation_angle()
    trans_err = float(np.linalg.norm(hand_eye.trans - gt_hand_eye.trans))
    print(
        f"hand_eye rotation_error_rad={rot_err:.6g} "
        f"({np.degrees(rot_err):.4g} deg) translation_error_mm={trans_err:.6g}"
    )


def cmd_simulate(args) -> int:
    cfg = default_config(seed=args.seed or 0) if args.config is None \
        else _load_scenario(args.config, args.seed)
    frames = generate_sequence(cfg)
    seq = sequence_from_synthetic(cfg, frames)
    out = args.output or _out_path(args, "sequence.json")
    write_json(out, sequence_to_dict(seq))
    print(f"wrote {len(frames)} frames to {out}")
    return 0


def cmd_calibrate(args) -> int:
    seq = sequence_from_dict(read_json(args.input))
    cfg = _load_calib_config(args.config)
    result = calibrate(seq.frames, seq.model, seq.camera, cfg)
    out = args.output or _out_path(args, "result.json")
    write_json(out, result.to_json_dict())
    d = result.diagnostics
    print(
        f"calibrated on {result.frames_used}/{len(seq.frames)} frames, "
        f"alignment_rmsd_mm={result.alignment_rmsd:.6g}"
    )
    print(
        "rcm_distance_mean_mm phase1={:.6g} phase2={:.6g}".format(
            d["rcm_distance_phase1_mean_mm"], d["rcm_distance_phase2_mean_mm"]
        )
    )
    if seq.gt_hand_eye is not None:
        _print_hand_eye_errors(result.hand_eye, seq.gt_hand_eye)
    print(f"wrote {out}")
    return 0


def cmd_evaluate(args) -> int:
    seq = sequence_from_dict(read_json(args.input))
    result = CalibrationResult.from_json_dict(read_json(args.result))
    metrics = evaluate(
        result, seq.frames, seq.model, seq.camera, seq.rig, args.gt_source
    )
    out = args.output or _out_path(args, f"metrics.{args.format}")
    _write_metrics(metrics, out, args.format)
    _print_summary(metrics)
    print(f"wrote {out}")
    return 0


def cmd_pipeline(args) -> int:
    doc = read_json(args.config)
    scenario = ScenarioConfig.from_json_dict(doc.get("scenario", doc))
    if args.seed is not None:
        scenario = ScenarioConfig.from_json_dict(
            {**scenario.to_json_dict(), "seed": args.seed}
        )
    calib_cfg = CalibConfig.from_json_dict(doc.get("calibration", {}))
    gt_source = doc.get("evaluation", {}).get("gt_source", "auto")

    frames = generate_sequence(scenario)
    seq = sequence_from_synthetic(scenario, frames)
    write_json(_out_path(args, "sequence.json"), sequence_to_dict(seq))

    result = calibrate(seq.frames, seq.model, seq.camera, calib_cfg)
    write_json(_out_path(args, "result.json"), result.to_json_dict())
    d = result.diagnostics
    print(
        f"calibrated on {result.frames_used}/{len(seq.frames)} frames, "
        f"alignment_rmsd_mm={result.alignment_rmsd:.6g}"
    )
    print(
        "rcm_distance_mean_mm phase1={:.6g} phase2={:.6g}".format(
            d["rcm_distance_phase1_mean_mm"], d["rcm_distance_phase2_mean_mm"]
        )
    )
    _print_hand_eye_errors(result.hand_eye, scenario.hand_eye)

    metrics = evaluate(result, seq.frames, seq.model, seq.camera, seq.rig, gt_source)
    _write_metrics(metrics, _out_path(args, f"metrics.{args.format}"), args.format)
    _print_summary(metrics)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rcmcalib",
        description="Markerless RCM-constrained hand-eye calibration toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="override the config RNG seed")
        p.add_argument("--output-dir", default=".", help="directory for output files")
        p.add_argument("--format", choices=("json", "csv"), default="csv",
                       help="metrics output format")

    p = sub.add_parser("simulate", help="generate a synthetic sequence")
    common(p)
    p.add_argument("--config", help="scenario config JSON (default: built-in scenario)")
    p.add_argument("--output", help="sequence output path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="run calibration on a sequence file")
    common(p)
    p.add_argument("--input", required=True, help="sequence JSON")
    p.add_argument("--config", help="calibration config JSON")
    p.add_argument("--output", help="result output path")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="compute tip-error metrics")
    common(p)
    p.add_argument("--input", required=True, help="sequence JSON")
    p.add_argument("--result", required=True, help="calibration result JSON")
    p.add_argument("--output", help="metrics output path")
    p.add_argument("--gt-source", choices=("auto", "true", "stereo"), default="auto")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("pipeline", help="simulate, calibrate, and evaluate")
    common(p)
    p.add_argument("--config", required=True, help="combined config JSON")
    p.set_defaults(func=cmd_pipeline)

    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        _emit_error(e)
        return USAGE_EXIT
    except CalibrationError as e:
        _emit_error(e)
        return RUNTIME_EXIT


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
