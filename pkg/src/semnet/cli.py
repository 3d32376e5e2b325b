"""Command-line entry point: ``semnet <stage|run> [options]``."""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from pathlib import Path

from .pipeline import STAGES, ConfigError, PipelineConfig, StageError, run, stage

# config-file key -> (PipelineConfig field, converter)
_KEYS = {
    "input": ("input", str),
    "format": ("format", str),
    "merge_threshold": ("merge_threshold", int),
    "fdr_t": ("fdr_t", float),
    "models": ("models", lambda s: tuple(x.strip() for x in s.replace(",", " ").split() if x.strip())),
    "polarization_threshold": ("polarization_threshold", float),
    "bipcm_layer": ("bipcm_layer", str),
    "min_community_size": ("min_community_size", int),
    "seed": ("seed", int),
    "out": ("out", str),
    "workers": ("workers", int),
    "strict": ("strict", lambda s: s.strip().lower() in ("1", "true", "yes", "on")),
}


def read_config_file(path: str | Path) -> dict:
    """Read ``key = value`` lines; an optional ``[section]`` header is ignored."""
    text = Path(path).read_text(encoding="utf-8")
    if not text.lstrip().startswith("["):
        text = "[semnet]\n" + text
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    out = {}
    for section in cp.sections():
        for key, raw in cp.items(section):
            key = key.replace("-", "_")
            if key not in _KEYS:
                raise ConfigError(f"unknown config key {key!r} in {path}")
            name, conv = _KEYS[key]
            raw = raw.strip().strip('"').strip("'")
            if key == "models":
                raw = raw.strip("[]").replace('"', "").replace("'", "")
            try:
                out[name] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file; flags override it")
    common.add_argument("--input", help="record file (JSONL or CSV)")
    common.add_argument("--format", choices=("jsonl", "csv"))
    common.add_argument("--model", action="append", dest="models", choices=("birgm", "bipcm", "bicm"),
                        help="null model for the semantic projections (repeatable; default all)")
    common.add_argument("--fdr-t", type=float, dest="fdr_t")
    common.add_argument("--merge-threshold", type=int, dest="merge_threshold")
    common.add_argument("--polarization-threshold", type=float, dest="polarization_threshold")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, help="threads per stage (default 1)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="semnet", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in STAGES + ("run",):
        sub.add_parser(name, parents=[common], help="run all stages" if name == "run" else f"run the {name} stage")
    return p


def config_from_args(args: argparse.Namespace) -> PipelineConfig:
    values = read_config_file(args.config) if args.config else {}
    for name in ("input", "format", "models", "fdr_t", "merge_threshold",
                 "polarization_threshold", "seed", "out", "workers"):
        v = getattr(args, name)
        if v is not None:
            values[name] = tuple(v) if name == "models" else v
    required = ("seed", "input") if args.command in ("ingest", "run") else ("seed",)
    for name in required:
        if values.get(name) is None:
            raise ConfigError(f"--{name} is required (flag or config file)")
    values.setdefault("input", None)
    try:
        return PipelineConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
    except (ConfigError, OSError) as exc:
        print(f"semnet: config error: {exc}", file=sys.stderr)
        return 2
    try:
        written = run(cfg) if args.command == "run" else stage(args.command, cfg)
    except StageError as exc:
        print(f"semnet: {exc}", file=sys.stderr)
        return 1
    for rel in written:
        print(rel)
    return 0


if __name__ == "__main__":
    sys.exit(main())
