"""Command line pipeline: calibrate -> smooth -> quantize -> eval.

Exit codes
----------
0   success
1   internal error
2   usage error (bad flags)
10  dimension error          11  parameter error        12  data error
13  configuration error      14  unsupported granularity
15  not fusable              20  container format error
21  container version error  30  missing pipeline artifact
40  I/O error
"""

import argparse
import os
import sys

import numpy as np

from . import serialize
from .calib import CalibConfig, build_plan, run_calibration, search_alpha
from .config import RunConfig, load_config
from .container import load_container, save_container
from .exceptions import ConfigurationError, PipelineError, SmoothQuantError
from .graph import PrecisionMap, attach_smoothing, make_synthetic_model, synthetic_inputs
from .igemm import quantize_weight
from .quant import SettingLevel
from .report import (
    ErrorConfig,
    format_table,
    granularity_configs,
    output_error_report,
    settings_configs,
    to_json,
)
from .tensor import OutlierSpec

EXIT_IO = 40


def build_model(cfg):
    if cfg.model_path is not None:
        return serialize.model_from_entries(load_container(cfg.model_path))
    spec = cfg.model_spec()
    outlier = None
    if spec.outlier is not None:
        oseed = cfg.model_seed() if spec.outlier.seed is None else spec.outlier.seed
        outlier = OutlierSpec(spec.outlier.fraction, spec.outlier.scale, oseed)
    return make_synthetic_model(
        seed=cfg.model_seed(),
        n_blocks=spec.n_blocks,
        width=spec.width,
        heads=spec.heads,
        ffn_mult=spec.ffn_mult,
        outlier=outlier,
        weight_std=spec.weight_std,
    )


def samples(cfg, model, which):
    sc = getattr(cfg, which)
    return synthetic_inputs(cfg.sample_seed(which), sc.samples, sc.seq_len, model.width)


def calib_config(cfg):
    return CalibConfig(cfg.calibration.samples, cfg.calibration.seq_len, cfg.clip_fraction, cfg.seed)


def _require(path, step):
    if not os.path.isfile(path):
        raise PipelineError(step, path)
    return path


def _check_writable(path):
    directory = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(directory):
        raise ConfigurationError(f"output directory {directory} does not exist")


def cmd_calibrate(cfg, args):
    model = build_model(cfg)
    out = args.out or cfg.outputs.calib
    _check_writable(out)
    calib = run_calibration(model, samples(cfg, model, "calibration"), calib_config(cfg))
    save_container(out, serialize.calib_to_entries(calib))
    rows = [
        {"name": name, "tensor_absmax": calib.tensor_absmax(name), "static_step": calib.tensor_step(name)}
        for name in calib.stats
    ]
    return {
        "command": "calibrate",
        "artifact": out,
        "sample_count": cfg.calibration.samples,
        "clip_fraction": cfg.clip_fraction,
        "inputs": rows,
    }, rows, ("name", "tensor_absmax", "static_step")


def cmd_smooth(cfg, args):
    calib = serialize.calib_from_entries(load_container(_require(cfg.outputs.calib, "calibrate")))
    model = build_model(cfg)
    out = args.out or cfg.outputs.plan
    _check_writable(out)
    plan = build_plan(calib, model, cfg.alpha)
    save_container(out, serialize.plan_to_entries(plan))
    rows = [
        {"name": k, "s_min": float(s.min()), "s_max": float(s.max()), "s_mean": float(s.mean())}
        for k, s in plan.factors.items()
    ]
    return {"command": "smooth", "artifact": out, "alpha": cfg.alpha, "points": rows}, rows, (
        "name",
        "s_min",
        "s_max",
        "s_mean",
    )


def cmd_quantize(cfg, args):
    plan = serialize.plan_from_entries(load_container(_require(cfg.outputs.plan, "smooth")))
    model = build_model(cfg)
    out = args.out or cfg.outputs.quantized
    _check_writable(out)
    smoothed = attach_smoothing(model, plan)
    calib = run_calibration(smoothed, samples(cfg, model, "calibration"), calib_config(cfg))
    setting = SettingLevel(cfg.level).setting
    entries = {"quantized.level": np.frombuffer(cfg.level.encode(), dtype=np.int8)}
    rows = []
    for i, blk in enumerate(smoothed.blocks):
        p = f"blocks.{i}."
        for ln in ("ln1", "ln2"):
            entries[p + ln + ".gamma"] = getattr(blk, ln).gamma
            entries[p + ln + ".beta"] = getattr(blk, ln).beta
        for name, lin in blk.linears().items():
            wq = quantize_weight(lin.weight, setting.weight)
            entries[p + name + ".codes"] = wq.values
            entries[p + name + ".scale"] = np.asarray(wq.scales, dtype=np.float32)
            if lin.bias is not None:
                entries[p + name + ".bias"] = lin.bias
            rows.append({"name": p + name, "weight_step": float(np.max(wq.scales))})
    for name in calib.stats:
        entries["act_step." + name] = np.array(calib.tensor_step(name), dtype=np.float32)
    save_container(out, entries)
    return {"command": "quantize", "artifact": out, "level": cfg.level, "weights": rows}, rows, (
        "name",
        "weight_step",
    )


def cmd_eval(cfg, args):
    model = build_model(cfg)
    evals = samples(cfg, model, "evaluation")
    if args.level == "FP":
        configs = [ErrorConfig("FP", PrecisionMap.full_precision())]
        rows = output_error_report(model, evals, configs)
    else:
        plan = serialize.plan_from_entries(load_container(_require(cfg.outputs.plan, "smooth")))
        calib_samples = samples(cfg, model, "calibration")
        pmap = PrecisionMap.uniform(cfg.level)
        configs = [
            ErrorConfig(f"naive-{cfg.level}", pmap),
            ErrorConfig(f"SmoothQuant-{cfg.level}", pmap, plan),
        ]
        rows = output_error_report(model, evals, configs, calib_samples, calib_config(cfg))
    level = args.level or cfg.level
    return {"command": "eval", "level": level, "rows": rows}, rows, None


def cmd_search_alpha(cfg, args):
    model = build_model(cfg)
    best, curve = search_alpha(
        model,
        samples(cfg, model, "calibration"),
        samples(cfg, model, "evaluation"),
        cfg.grid_values(),
        SettingLevel(cfg.level),
        calib_config(cfg),
    )
    rows = [{"name": f"alpha={a:g}", "alpha": a, "mse": e} for a, e in curve]
    return {"command": "search-alpha", "level": cfg.level, "best_alpha": best, "curve": rows}, rows, (
        "name",
        "mse",
    )


def cmd_compare(cfg, args):
    model = build_model(cfg)
    calib_samples = samples(cfg, model, "calibration")
    evals = samples(cfg, model, "evaluation")
    ccfg = calib_config(cfg)
    granularity = output_error_report(model, evals, granularity_configs(), calib_samples, ccfg)
    settings = output_error_report(
        model, evals, settings_configs(model, calib_samples, cfg.alpha, ccfg), calib_samples, ccfg
    )
    report = {"command": "compare", "alpha": cfg.alpha, "granularity": granularity, "settings": settings}
    text = format_table(granularity, title="Activation granularity (linear layers, W8 per-tensor)")
    text += "\n" + format_table(settings, title=f"Quantization settings (alpha={cfg.alpha:g})")
    return report, text, None


COMMANDS = {
    "calibrate": cmd_calibrate,
    "smooth": cmd_smooth,
    "quantize": cmd_quantize,
    "eval": cmd_eval,
    "search-alpha": cmd_search_alpha,
    "compare": cmd_compare,
}


def _level(value):
    value = value.upper()
    if value not in ("O1", "O2", "O3", "FP"):
        raise argparse.ArgumentTypeError("level must be O1, O2, O3 or FP")
    return value


def make_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--level", type=_level, help="O1, O2, O3 (eval also accepts FP)")
    common.add_argument("--alpha", type=float, help="migration strength in [0, 1]")
    common.add_argument("--grid", help="alpha grid as a:b:step")
    common.add_argument("--clip", type=float, help="fraction of top token rows clipped in calibration")
    common.add_argument("--seed", type=int, help="base seed")
    common.add_argument("--out", help="artifact (or report) output path")
    common.add_argument("--report", choices=("text", "json"), default="text")
    parser = argparse.ArgumentParser(prog="smoothquant", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def _resolve_config(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    level = None if args.level in (None, "FP") else args.level
    return cfg.override(level=level, alpha=args.alpha, grid=args.grid, clip_fraction=args.clip, seed=args.seed)


def run(argv=None, stdout=None):
    stdout = stdout or sys.stdout
    args = make_parser().parse_args(argv)
    try:
        cfg = _resolve_config(args)
        if args.command == "eval" and args.level is None:
            args.level = cfg.level
        report, rows, columns = COMMANDS[args.command](cfg, args)
        text = rows if isinstance(rows, str) else format_table(rows, columns or ("name", "mse", "rel_error", "max_rel_error"))
        rendered = to_json(report) if args.report == "json" else text
        stdout.write(rendered)
        report_path = cfg.outputs.report
        if args.command in ("eval", "search-alpha", "compare"):
            report_path = args.out or report_path
        if report_path:
            with open(report_path, "w", encoding="utf-8") as fh:
                fh.write(to_json(report))
    except SmoothQuantError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
