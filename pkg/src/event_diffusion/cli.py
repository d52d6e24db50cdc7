"""Command line interface.

    event-diffusion <stage> --config run.yaml [flags] [--section.key=value ...]

Stages: simulate, augment, stack, reconstruct, sample, eval, plot. Any config
key can be overridden with a dotted flag (e.g. --guidance.eta=0.5); the common
ones have first-class spellings. Exit codes: 0 success, 2 bad input or
configuration, 3 runtime failure while sampling.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import yaml

from .config import apply_override, build_run_config
from .errors import (
    EventDiffusionError,
    GuidanceDivergenceError,
    InvalidInputError,
    InvalidParameterError,
    UnsupportedCodecError,
)
from .pipeline import (
    run_augment,
    run_eval,
    run_plot,
    run_reconstruct,
    run_sample,
    run_simulate,
    run_stack,
)

_STAGES = ("simulate", "augment", "stack", "reconstruct", "sample", "eval", "plot")

# first-class flag -> config key it overrides
_FLAG_KEYS = {
    "seed": "seed",
    "theta": "simulator.theta",
    "eta": "guidance.eta",
    "steps": "guidance.inner_steps",
    "ddim_steps": "guidance.ddim_steps",
    "frames": "guidance.n_frames",
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="event-diffusion",
        description="Event-based video simulation and diffusion reconstruction.",
    )
    sub = parser.add_subparsers(dest="stage", required=True)
    for stage in _STAGES:
        p = sub.add_parser(stage)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--theta", type=float, default=None, help="event threshold")
        p.add_argument("--eta", type=float, default=None, help="anchor weight")
        p.add_argument(
            "--steps", type=int, default=None, help="inner optimizer iterations"
        )
        p.add_argument("--ddim-steps", type=int, default=None)
        p.add_argument("--frames", type=int, default=None, help="number of output frames")
        if stage == "sample":
            p.add_argument(
                "--unguided",
                action="store_true",
                help="skip the per-frame optimization",
            )
    return parser


def _split_overrides(argv: list[str]) -> tuple[list[str], list[tuple[str, str]]]:
    """Pull out --a.b=value overrides, leaving everything else for argparse."""
    rest: list[str] = []
    overrides: list[tuple[str, str]] = []
    for arg in argv:
        if arg.startswith("--") and "." in arg.split("=", 1)[0]:
            body = arg[2:]
            if "=" not in body:
                raise InvalidInputError(f"override {arg} must use --key.path=value")
            key, value = body.split("=", 1)
            overrides.append((key, value))
        else:
            rest.append(arg)
    return rest, overrides


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        rest, overrides = _split_overrides(argv)
        args = _build_parser().parse_args(rest)
        config_path = Path(args.config)
        try:
            text = config_path.read_text()
        except OSError as exc:
            raise InvalidInputError(f"cannot read config {config_path}: {exc}")
        try:
            doc = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise InvalidInputError(f"{config_path}: invalid YAML: {exc}")
        if doc is None:
            doc = {}
        if not isinstance(doc, dict):
            raise InvalidInputError(f"{config_path}: top level must be a mapping")
        for key, value in overrides:
            apply_override(doc, key, value)
        for flag, key in _FLAG_KEYS.items():
            value = getattr(args, flag, None)
            if value is not None:
                apply_override(doc, key, repr(value))
        cfg = build_run_config(doc)
        base = config_path.resolve().parent
        stage = args.stage
        if stage == "simulate":
            summary = run_simulate(cfg, base)
        elif stage == "augment":
            summary = run_augment(cfg, base)
        elif stage == "stack":
            summary = run_stack(cfg, base)
        elif stage == "reconstruct":
            summary = run_reconstruct(cfg, base)
        elif stage == "sample":
            summary = run_sample(cfg, base, unguided=args.unguided)
        elif stage == "eval":
            summary = run_eval(cfg, base)
        else:
            summary = run_plot(cfg, base)
    except (InvalidInputError, InvalidParameterError, UnsupportedCodecError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except GuidanceDivergenceError as exc:
        print(f"error: sampling diverged: {exc}", file=sys.stderr)
        return 3
    except EventDiffusionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
