"""Command line entry point.

    pidnn identify      --plant isothermal --out runs/iso
    pidnn run           --plant isothermal --mode variable --out runs/iso --plot
    pidnn compare       --config my.ini --out runs/cmp --plot
    pidnn margin-report --plant nonisothermal --out runs/noniso
    pidnn show-config   --plant nonisothermal > noniso.ini
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import neural_model
from .config import PLANTS, default_config, dump_config, load_config
from .controller import ControllerState
from .harness import MODES, IntegrationBlowUp, compare_modes, get_model, initial_operating_point, run_experiment
from .margin import linearize_narx, margin_report, pid_tf, stability_margin


def _config_from_args(args):
    cfg = load_config(args.config) if args.config else default_config(args.plant or "isothermal")
    if args.plant and args.config and args.plant != cfg.plant:
        raise SystemExit(f"--plant {args.plant} conflicts with plant = {cfg.plant} in {args.config}")
    if getattr(args, "mode", None):
        cfg = cfg.with_mode(args.mode)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, identification=dataclasses.replace(cfg.identification, seed=args.seed))
    if args.out:
        cfg = dataclasses.replace(cfg, output_dir=args.out)
    return cfg


def _cache_dir(args, cfg) -> Path:
    return Path(args.cache) if args.cache else Path(cfg.output_dir) / "model_cache"


def cmd_identify(args) -> int:
    cfg = _config_from_args(args)
    model = get_model(cfg, _cache_dir(args, cfg))
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"model-{cfg.plant}.txt"
    neural_model.save(model, path)
    print(path)
    return 0


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    _, summary = run_experiment(cfg, out_dir=cfg.output_dir, cache_dir=_cache_dir(args, cfg), plot=args.plot)
    print(f"mode={summary.mode} mse={summary.mse:.6g} mean_b={summary.mean_margin:.6g} "
          f"final_gains={tuple(round(g, 6) for g in summary.final_gains)}")
    return 0


def cmd_compare(args) -> int:
    cfg = _config_from_args(args)
    comp = compare_modes(cfg, out_dir=cfg.output_dir, cache_dir=_cache_dir(args, cfg), plot=args.plot)
    sys.stdout.write(comp.table())
    return 0


def cmd_margin_report(args) -> int:
    cfg = _config_from_args(args)
    model = get_model(cfg, _cache_dir(args, cfg))
    plant = cfg.build_plant()
    x0, u0 = initial_operating_point(cfg, plant)
    cs = ControllerState.at_rest(cfg.T, plant.output(x0), u0, model.spec.output_lags, model.spec.input_lags, plant.aux(x0))
    P = linearize_narx(model, cs.regressor(model), cfg.T)
    C = pid_tf(cfg.initial_gains(), cfg.T)
    est = stability_margin(P, C, cfg.grid(), cfg.margin.refine)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "margin_report.tsv"
    path.write_text(margin_report(P, C, cfg.grid()))
    print(f"b={est.b:.6g} peak_sigma={est.peak_sigma:.6g} peak_omega={est.peak_omega:.6g} "
          f"plant_stable={est.plant_stable} -> {path}")
    return 0


def cmd_show_config(args) -> int:
    sys.stdout.write(dump_config(_config_from_args(args)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pidnn", description="Adaptive PID neural network CSTR simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "identify": cmd_identify,
        "run": cmd_run,
        "compare": cmd_compare,
        "margin-report": cmd_margin_report,
        "show-config": cmd_show_config,
    }
    for name, func in commands.items():
        p = sub.add_parser(name)
        p.set_defaults(func=func)
        p.add_argument("--config", help="INI config file")
        p.add_argument("--plant", choices=PLANTS)
        p.add_argument("--seed", type=int, help="identification seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--cache", help="model cache directory (default <out>/model_cache)")
        if name == "run":
            p.add_argument("--mode", choices=MODES)
        if name in ("run", "compare"):
            p.add_argument("--plot", action="store_true", help="write SVG charts")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except IntegrationBlowUp as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (ValueError, OSError, neural_model.TrainingDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
