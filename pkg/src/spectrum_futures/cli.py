"""Command-line entry point.

    spectrum-futures validate-config --config cfg.json
    spectrum-futures negotiate --config cfg.json --out runs/neg
    spectrum-futures experiment --experiment failure_curve --out runs/fig2 --seed 7

Exit codes: 0 success, 2 usage error, 3 configuration error, 4 negotiation
infeasible, 5 I/O error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path

from . import experiments
from .model import (
    ConfigError,
    MarketConfig,
    config_from_dict,
    fmt,
    load_config,
    paper_default_path,
)
from .negotiation import negotiate
from .onsite import OnsiteParams

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_INFEASIBLE = 4
EXIT_IO = 5

COMMANDS = ("negotiate", "experiment", "validate-config")


@dataclass(frozen=True)
class RunManifest:
    command: str
    config_path: Path
    experiment_id: str | None = None
    seed: int | None = None
    episodes: int | None = None
    out_dir: Path | None = None
    workers: int = 1

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}")
        if (self.command == "experiment") != (self.experiment_id is not None):
            raise ValueError("--experiment is required for, and only for, the experiment command")
        if self.command != "validate-config" and self.out_dir is None:
            raise ValueError("--out is required")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: usage error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spectrum-futures",
                     description="Futures-based spectrum trading: negotiation and comparison experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out_required: bool):
        p.add_argument("--config", type=Path, default=None,
                       help="MarketConfig JSON file (default: bundled paper_default.json)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed (unsigned 64-bit)")
        if out_required:
            p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("validate-config", help="check a configuration file field by field")
    common(p, out_required=False)

    p = sub.add_parser("negotiate", help="run the forward-contract negotiation")
    common(p, out_required=True)

    p = sub.add_parser("experiment", help="run a futures vs on-site comparison sweep")
    common(p, out_required=True)
    p.add_argument("--experiment", required=True, choices=experiments.EXPERIMENTS + ("all",),
                   help="experiment id, or 'all'")
    p.add_argument("--episodes", type=int, default=None, help="episodes per sweep point")
    p.add_argument("--workers", type=int, default=1, help="worker processes for sweep points")
    return parser


def manifest_from_args(args: argparse.Namespace) -> RunManifest:
    return RunManifest(
        command=args.command,
        config_path=args.config if args.config is not None else paper_default_path(),
        experiment_id=getattr(args, "experiment", None),
        seed=args.seed,
        episodes=getattr(args, "episodes", None),
        out_dir=getattr(args, "out", None),
        workers=getattr(args, "workers", 1),
    )


def field_verdicts(data: dict) -> list[tuple[str, str | None]]:
    """(dotted field, error or None) for each field present in ``data``."""
    from .model import _SECTIONS

    verdicts = []
    for key, value in data.items():
        if key in _SECTIONS and isinstance(value, dict):
            verdicts.extend(_section_verdicts(key, _SECTIONS[key], value))
        else:
            try:
                config_from_dict({key: value})
            except ConfigError as exc:
                verdicts.append((exc.field, str(exc).split(": ", 1)[1]))
            else:
                verdicts.append((key, None))
    return verdicts


def _section_verdicts(key: str, cls, values: dict) -> list[tuple[str, str | None]]:
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = {n: "unknown field" for n in values if n not in names}
    known = {n: v for n, v in values.items() if n in names}
    errors: dict[str, str] = {}
    try:
        cls(**known)
    except (ConfigError, TypeError) as exc:
        # isolate single-field violations; anything left is a cross-field one
        for name, v in known.items():
            try:
                cls(**{name: v})
            except ConfigError as sub:
                errors[name] = str(sub).split(": ", 1)[1]
            except TypeError as sub:
                errors[name] = str(sub)
        if not errors:
            field = exc.field if isinstance(exc, ConfigError) else "<section>"
            errors[field] = str(exc).split(": ", 1)[-1]
    out = []
    for name in values:
        out.append((f"{key}.{name}", unknown.get(name) or errors.pop(name, None)))
    out += [(f"{key}.{name}", err) for name, err in errors.items()]
    return out


def _load(manifest: RunManifest) -> MarketConfig:
    config = load_config(manifest.config_path)
    if manifest.seed is not None:
        config = config.replace(seed=manifest.seed)
    return config


def _echo_config(config: MarketConfig, out: Path) -> None:
    text = json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n"
    (out / "effective_config.json").write_text(text, encoding="utf-8", newline="\n")


def _validate(manifest: RunManifest) -> int:
    with open(manifest.config_path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            print(f"ERROR <file>: invalid JSON ({exc})")
            return EXIT_CONFIG
    if not isinstance(data, dict):
        print("ERROR <root>: configuration must be a JSON object")
        return EXIT_CONFIG
    bad = False
    for name, err in field_verdicts(data):
        print(f"OK    {name}" if err is None else f"ERROR {name}: {err}")
        bad |= err is not None
    try:
        config = config_from_dict(data)
    except (ConfigError, TypeError) as exc:
        if not bad:
            print(f"ERROR {exc}")
        return EXIT_CONFIG
    if bad:
        return EXIT_CONFIG
    print(f"config valid (digest {config.digest()})")
    return EXIT_OK


def _negotiate(manifest: RunManifest) -> int:
    config = _load(manifest)
    out = manifest.out_dir
    out.mkdir(parents=True, exist_ok=True)
    contract, trace = negotiate(config)
    _echo_config(config, out)
    (out / "trace.csv").write_text(trace.to_csv(), encoding="utf-8", newline="\n")
    lines = [f"termination: {trace.termination}", f"iterations: {len(trace.iterations)}"]
    if contract is None:
        lines.append("contract: none (negotiation infeasible)")
    else:
        lines += [
            f"price: {fmt(contract.price)}",
            f"amount: {fmt(contract.amount)}",
            f"owner_risk: {fmt(contract.owner_risk.value)} (T_b={fmt(config.owner.t_b)})",
            f"requester_risk: {fmt(contract.requester_risk.value)} (T_d={fmt(config.requester.t_d)})",
            f"owner_expected_utility: {fmt(contract.owner_expected_utility)}",
            f"requester_expected_utility: {fmt(contract.requester_expected_utility)}",
        ]
    text = "\n".join(lines) + "\n"
    (out / "contract.txt").write_text(text, encoding="utf-8", newline="\n")
    print(text, end="")
    return EXIT_OK if contract is not None else EXIT_INFEASIBLE


def _experiment(manifest: RunManifest) -> int:
    config = _load(manifest)
    if manifest.episodes is not None and manifest.episodes < 1:
        raise ConfigError("episodes", "must be >= 1")
    out = manifest.out_dir
    out.mkdir(parents=True, exist_ok=True)
    ids = experiments.EXPERIMENTS if manifest.experiment_id == "all" else (manifest.experiment_id,)
    summary = []
    for eid in ids:
        res = experiments.run_experiment(eid, config, OnsiteParams(), episodes=manifest.episodes,
                                         workers=max(1, manifest.workers))
        res.write(out)
        summary.append(res.summary())
    _echo_config(config, out)
    text = "".join(summary)
    (out / "summary.txt").write_text(text, encoding="utf-8", newline="\n")
    print(text, end="")
    return EXIT_OK


def run(manifest: RunManifest) -> int:
    handlers = {"validate-config": _validate, "negotiate": _negotiate, "experiment": _experiment}
    try:
        return handlers[manifest.command](manifest)
    except ConfigError as exc:
        print(f"config error in {manifest.config_path}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error during {manifest.command}: {exc}", file=sys.stderr)
        return EXIT_IO


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        manifest = manifest_from_args(args)
    except ValueError as exc:
        print(f"spectrum-futures: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    if not manifest.config_path.is_file():
        print(f"I/O error: config file not found: {manifest.config_path}", file=sys.stderr)
        return EXIT_IO
    return run(manifest)


if __name__ == "__main__":
    sys.exit(main())
