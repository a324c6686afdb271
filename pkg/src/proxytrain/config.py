"""INI run configuration mapped onto the experiment dataclasses."""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
import os
import types
import typing
from pathlib import Path

from .retrieval import TOGGLES, RetrievalConfig
from .selftrain import SelfTrainConfig

OUTPUT_ENV = "PROXYTRAIN_OUTPUT_DIR"

# section -> fields it may set; anything else in the file is an error
RETRIEVAL_SECTIONS = {
    "data": ("n_classes", "per_class", "dim", "latent_dim", "spread", "positions",
             "object_positions", "background_spread", "dev_fraction"),
    "model": ("hidden", "embedding", "embedding_init", "proxy_init", "layer_norm", "k_max"),
    "loss": ("loss", "beta"),
    "sampler": ("cbs", "batch_size", "classes_per_batch"),
    "optimizer": ("base_lr", "proxy_lr_multiplier", "momentum", "weight_decay", "schedule",
                  "patience", "factor", "poly_power", "gamma", "epochs", "eval_every",
                  "retrain_combined"),
}
SELFTRAIN_SECTIONS = {
    "data": ("grid", "n_images", "labeled_fraction", "n_dev", "n_test", "noise", "threshold"),
    "model": ("hidden", "radius"),
    "optimizer": ("lr", "momentum", "weight_decay", "batch_labeled", "batch_unlabeled",
                  "stage0_iters", "k_iters"),
    "selftrain": ("phi", "beta_ts", "cl", "cl_weight", "cl_dropout", "ema_beta", "strategy",
                  "stages", "alpha", "beam", "n_trials", "degenerate_filter", "workers"),
}
ABLATE_KEYS = ("toggles", "seeds", "mode")


class ConfigError(ValueError):
    """Every problem found in a config file, reported together."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("\n".join(self.problems))


@dataclasses.dataclass
class RunConfig:
    command: str
    seed: int
    output_dir: Path
    experiment: object
    ablate: dict = dataclasses.field(default_factory=dict)

    def canonical(self) -> dict:
        return dict(command=self.command, seed=self.seed,
                    experiment=dataclasses.asdict(self.experiment), ablate=self.ablate)

    def hash(self) -> str:
        return config_hash(self.canonical())

    def to_ini(self) -> str:
        lines = ["[run]", f"command = {self.command}", f"seed = {self.seed}", ""]
        values = dataclasses.asdict(self.experiment)
        sections = RETRIEVAL_SECTIONS if isinstance(self.experiment, RetrievalConfig) \
            else SELFTRAIN_SECTIONS
        for section, keys in sections.items():
            lines.append(f"[{section}]")
            lines += [f"{k} = {_format(values[k])}" for k in keys]
            lines.append("")
        if self.ablate:
            lines.append("[ablate]")
            lines.append(f"toggles = {','.join(self.ablate['toggles'])}")
            lines.append(f"seeds = {','.join(str(s) for s in self.ablate['seeds'])}")
            lines.append(f"mode = {self.ablate['mode']}")
            lines.append("")
        return "\n".join(lines)


def config_hash(obj) -> str:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(text.encode()).hexdigest()


def _format(value) -> str:
    return "none" if value is None else str(value)


def _coerce(raw: str, hint):
    """Parse ``raw`` according to a type hint such as ``float | None``."""
    text = raw.strip()
    args = typing.get_args(hint)
    if typing.get_origin(hint) in (typing.Union, types.UnionType) and type(None) in args:
        if text.lower() == "none":
            return None
        hint = next(a for a in args if a is not type(None))
    if hint is bool:
        lowered = text.lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if hint is int:
        return int(text)
    if hint is float:
        return float(text)
    return text


def _fill(cls, sections: dict, parser: configparser.ConfigParser, problems: list[str]):
    hints = typing.get_type_hints(cls)
    values = {}
    for section, allowed in sections.items():
        if not parser.has_section(section):
            continue
        for key, raw in parser.items(section):
            if key not in allowed:
                problems.append(f"[{section}] {key}: unknown option")
                continue
            try:
                values[key] = _coerce(raw, hints[key])
            except ValueError as exc:
                problems.append(f"[{section}] {key}: {exc}")
    return cls(**values)


def _parse_ablate(parser, problems) -> dict:
    section = parser["ablate"] if parser.has_section("ablate") else {}
    for key in section:
        if key not in ABLATE_KEYS:
            problems.append(f"[ablate] {key}: unknown option")
    toggles = [t.strip() for t in section.get("toggles", ",".join(TOGGLES)).split(",") if t.strip()]
    for t in toggles:
        if t not in TOGGLES:
            problems.append(f"[ablate] toggles: unknown toggle {t!r}")
    try:
        seeds = [int(s) for s in section.get("seeds", "0,1,2,3,4").split(",") if s.strip()]
    except ValueError:
        problems.append("[ablate] seeds: expected comma-separated integers")
        seeds = []
    if not seeds:
        problems.append("[ablate] seeds: need at least one seed")
    mode = section.get("mode", "factorial").strip()
    if mode not in ("factorial", "leave_one_out"):
        problems.append(f"[ablate] mode: unknown {mode!r}")
    return dict(toggles=toggles, seeds=seeds, mode=mode)


def parse_config(text: str, command: str, source: str = "<config>") -> RunConfig:
    """Validate everything up front and raise one ``ConfigError`` listing all problems."""
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError([f"{source}: {exc}"]) from None
    problems = []
    sections = SELFTRAIN_SECTIONS if command == "selftrain" else RETRIEVAL_SECTIONS
    known = {"run"} | set(sections) | ({"ablate"} if command == "ablate" else set())
    for section in parser.sections():
        if section not in known:
            problems.append(f"[{section}]: not a section of a {command} config")
    seed = None
    if not parser.has_option("run", "seed"):
        problems.append("[run] seed: required")
    else:
        try:
            seed = int(parser.get("run", "seed"))
        except ValueError:
            problems.append(f"[run] seed: expected an integer, got {parser.get('run', 'seed')!r}")
    for key in parser.options("run") if parser.has_section("run") else []:
        if key not in ("seed", "output_dir", "command"):
            problems.append(f"[run] {key}: unknown option")
    out = parser.get("run", "output_dir", fallback=f"runs/{command}")
    out = os.environ.get(OUTPUT_ENV) or out

    exp = _fill(SelfTrainConfig if command == "selftrain" else RetrievalConfig, sections,
                parser, problems)
    if seed is not None:
        exp = dataclasses.replace(exp, seed=seed)
    problems += [f"config {p}" for p in exp.validate()]
    ablate = _parse_ablate(parser, problems) if command == "ablate" else {}
    if problems:
        raise ConfigError(problems)
    return RunConfig(command, seed, Path(out), exp, ablate)


def load_config(path, command: str) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError([f"{path}: no such config file"])
    return parse_config(path.read_text(), command, str(path))
