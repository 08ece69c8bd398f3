"""Experiment runner: `mfclab run <config.ini>` and `mfclab list`.

The config is flat INI with three sections::

    [experiment]
    name = consumption       ; one of the catalogue names
    out_dir = out            ; overridden by $MFCLAB_OUT when set

    [knobs]
    seed = 2024
    n_particles = 10000
    n_steps = 200
    quad_n = 64
    lambdas = 0.05, 0.1, 0.2, -0.05, -0.1, -0.2
    delay = 0.0

    [model]                  ; consumption only
    x0 = 1.0
    horizon = 1.0
    sigma = 0.2
    jump_size = 0.1
    jump_rate = 0.5
    theta = 1.0
    v_lo = 0.25
    v_hi = inf

Unknown sections or keys are rejected.  Exit codes: 0 all checks passed,
1 some check failed, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import configparser
import os
import sys

from .experiments import DESCRIPTIONS, EXPERIMENTS, ExperimentConfig, run_experiment

_KNOB_KEYS = {"seed", "n_particles", "n_steps", "quad_n", "lambdas", "delay"}
_MODEL_KEYS = {"x0", "horizon", "sigma", "jump_size", "jump_rate", "theta", "v_lo", "v_hi"}
_EXPERIMENT_KEYS = {"name", "out_dir"}


class ConfigError(ValueError):
    pass


def load_config(path: str) -> ExperimentConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc

    unknown_sections = set(parser.sections()) - {"experiment", "knobs", "model"}
    if unknown_sections:
        raise ConfigError(f"unknown config sections: {sorted(unknown_sections)}")
    if not parser.has_section("experiment") or not parser.has_option("experiment", "name"):
        raise ConfigError("config needs [experiment] with a name key")

    exp = dict(parser.items("experiment"))
    if set(exp) - _EXPERIMENT_KEYS:
        raise ConfigError(f"unknown [experiment] keys: {sorted(set(exp) - _EXPERIMENT_KEYS)}")
    name = exp["name"]
    if name not in EXPERIMENTS:
        raise ConfigError(
            f"unknown experiment {name!r}; run `mfclab list` for the catalogue"
        )
    cfg = ExperimentConfig(name=name, out_dir=exp.get("out_dir", "out"))

    if parser.has_section("knobs"):
        knobs = dict(parser.items("knobs"))
        if set(knobs) - _KNOB_KEYS:
            raise ConfigError(f"unknown [knobs] keys: {sorted(set(knobs) - _KNOB_KEYS)}")
        try:
            if "seed" in knobs:
                cfg.seed = int(knobs["seed"])
            if "n_particles" in knobs:
                cfg.n_particles = int(knobs["n_particles"])
            if "n_steps" in knobs:
                cfg.n_steps = int(knobs["n_steps"])
            if "quad_n" in knobs:
                cfg.quad_n = int(knobs["quad_n"])
            if "delay" in knobs:
                cfg.delay = float(knobs["delay"])
            if "lambdas" in knobs:
                cfg.lambdas = tuple(
                    float(v) for v in knobs["lambdas"].replace(",", " ").split()
                )
        except ValueError as exc:
            raise ConfigError(f"bad [knobs] value: {exc}") from exc

    if parser.has_section("model"):
        model = dict(parser.items("model"))
        if set(model) - _MODEL_KEYS:
            raise ConfigError(f"unknown [model] keys: {sorted(set(model) - _MODEL_KEYS)}")
        try:
            cfg.model = {k: float(v) for k, v in model.items()}
        except ValueError as exc:
            raise ConfigError(f"bad [model] value: {exc}") from exc

    env_out = os.environ.get("MFCLAB_OUT")
    if env_out:
        cfg.out_dir = env_out
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return cfg


def list_experiments() -> str:
    lines = [f"{name}: {DESCRIPTIONS[name]}" for name in EXPERIMENTS]
    return "\n".join(lines)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mfclab",
        description="Experiment runner for the mean-field control laboratory.",
    )
    sub = parser.add_subparsers(dest="command")
    run_p = sub.add_parser("run", help="run an experiment from an INI config")
    run_p.add_argument("config", help="path to the INI config file")
    sub.add_parser("list", help="print the experiment catalogue")

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help and 2 for usage errors
        return int(exc.code or 0)

    if args.command == "list":
        print(list_experiments())
        return 0
    if args.command != "run":
        parser.print_usage(sys.stderr)
        return 2

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    checks = run_experiment(cfg)
    for check in checks:
        print(check.line())
    n_failed = sum(not c.passed for c in checks)
    print(f"{cfg.name}: {len(checks) - n_failed}/{len(checks)} checks passed -> {cfg.out_dir}")
    return 0 if n_failed == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
