"""TOML run configuration: defaults, dotted-path overrides, deterministic
resolved snapshots, and the run manifest."""

from __future__ import annotations

import dataclasses
import hashlib
import os

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .agent import PpoConfig
from .envs import EnvConfig
from .errors import ConfigError
from .serialize import write_json
from .trainer import NetConfig, TrainConfig

SECTION_ORDER = ("run", "train", "ppo", "net", "env")

_RUN_FIELDS = ("seed", "total_steps", "eval_interval", "eval_episodes", "record_wall_time")
_TRAIN_FIELDS = ("mode", "hops", "aggregation", "normalization", "alpha_consensus",
                 "rollout_threads")


def default_sections() -> dict:
    """Section/field defaults; DGMARL_SEED supplies the default seed."""
    cfg = TrainConfig()
    env_seed = os.environ.get("DGMARL_SEED")
    try:
        seed = int(env_seed) if env_seed else cfg.seed
    except ValueError as e:
        raise ConfigError(f"DGMARL_SEED must be an integer, got {env_seed!r}") from e
    return {
        "run": {"seed": seed, "total_steps": cfg.total_steps,
                "eval_interval": cfg.eval_interval, "eval_episodes": cfg.eval_episodes,
                "record_wall_time": cfg.record_wall_time},
        "train": {f: getattr(cfg, f) for f in _TRAIN_FIELDS},
        "ppo": dataclasses.asdict(PpoConfig()),
        "net": dataclasses.asdict(NetConfig()),
        "env": dataclasses.asdict(EnvConfig()),
    }


def load_config_file(path: str) -> dict:
    """Parse a TOML config and merge it over the defaults."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    sections = default_sections()
    for sec, fields in raw.items():
        if sec not in sections:
            raise ConfigError(f"{path}: unknown section [{sec}] "
                              f"(expected one of {', '.join(SECTION_ORDER)})")
        if not isinstance(fields, dict):
            raise ConfigError(f"{path}: section [{sec}] must be a table")
        for key, value in fields.items():
            if key not in sections[sec]:
                raise ConfigError(f"{path}: unknown field {key!r} in [{sec}]")
            sections[sec][key] = value
    return sections


def _parse_literal(text: str):
    low = text.strip()
    if low.lower() in ("true", "false"):
        return low.lower() == "true"
    try:
        return int(low)
    except ValueError:
        pass
    try:
        return float(low)
    except ValueError:
        pass
    return low.strip("\"'")


def apply_override(sections: dict, spec: str) -> None:
    """Apply `key=value` with a dotted path (`ppo.lr=1e-3`) or a bare field
    name that is unique across sections (`total_steps=0`)."""
    if "=" not in spec:
        raise ConfigError(f"override {spec!r} must look like key=value")
    key, _, value = spec.partition("=")
    key = key.strip()
    if "." in key:
        sec, _, name = key.partition(".")
        if sec not in sections or name not in sections[sec]:
            raise ConfigError(f"override targets unknown field {key!r}")
        sections[sec][name] = _parse_literal(value)
        return
    hits = [sec for sec in sections if key in sections[sec]]
    if not hits:
        raise ConfigError(f"override targets unknown field {key!r}")
    if len(hits) > 1:
        raise ConfigError(f"override field {key!r} is ambiguous across sections "
                          f"{hits}; use a dotted path")
    sections[hits[0]][key] = _parse_literal(value)


def to_train_config(sections: dict) -> TrainConfig:
    run, train = sections["run"], sections["train"]
    try:
        cfg = TrainConfig(
            mode=train["mode"], hops=int(train["hops"]),
            aggregation=train["aggregation"], normalization=train["normalization"],
            alpha_consensus=float(train["alpha_consensus"]),
            rollout_threads=int(train["rollout_threads"]),
            total_steps=int(run["total_steps"]), eval_interval=int(run["eval_interval"]),
            eval_episodes=int(run["eval_episodes"]), seed=int(run["seed"]),
            record_wall_time=bool(run["record_wall_time"]),
            ppo=PpoConfig(**sections["ppo"]),
            env=EnvConfig(**sections["env"]),
            net=NetConfig(**sections["net"]),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad config value: {e}") from e
    return cfg.resolve()


def snapshot_toml(sections: dict) -> str:
    """Deterministic TOML rendering of the resolved config."""
    lines = []
    for sec in SECTION_ORDER:
        lines.append(f"[{sec}]")
        for key in sorted(sections[sec]):
            lines.append(f"{key} = {_toml_value(sections[sec][key])}")
        lines.append("")
    return "\n".join(lines)


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    return '"' + str(v).replace("\\", "\\\\").replace('"', '\\"') + '"'


def config_hash(snapshot: str) -> str:
    """Git-blob-style SHA-1 of the snapshot text."""
    data = snapshot.encode("utf-8")
    return hashlib.sha1(b"blob %d\x00" % len(data) + data).hexdigest()


def write_manifest(out_dir: str, config_path: str, sections: dict) -> dict:
    """Write the resolved snapshot and manifest into the run directory."""
    os.makedirs(out_dir, exist_ok=True)
    snapshot = snapshot_toml(sections)
    with open(os.path.join(out_dir, "config.resolved.toml"), "w", encoding="utf-8") as f:
        f.write(snapshot)
    manifest = {
        "schema": "dgmarl.manifest/1",
        "config_path": os.path.abspath(config_path) if config_path else "",
        "seed": sections["run"]["seed"],
        "out_dir": os.path.abspath(out_dir),
        "config_sha1": config_hash(snapshot),
    }
    write_json(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest
