"""Experiment configuration files and run manifests.

A config is a TOML file. Top-level keys are ``seed`` and ``out``; every
other key is a table named after a section below. Unknown sections or keys
are rejected. Relative paths are resolved against the config file's
directory so a resolved config is location independent. Example::

    seed = 3
    out = "runs/curve-normal"

    [model]
    weights = "runs/train-normal/weights.ares"

    [dataset]
    path = "runs/data"

    [curve]
    steps = 10
    samples = 200

A manifest written by a previous run (``manifest.json``) is also accepted as
a config; its resolved config is reused verbatim.
"""

from __future__ import annotations

import copy
import hashlib
import json
import os
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .attacks import METHODS, PRESETS
from .data import CORRUPTIONS
from .errors import ConfigError

OUT_ENV = "ARES_OUT"

DEFAULTS = {
    "dataset": {"path": None, "class_count": 8, "image_shape": [3, 32, 32],
                "train_size": 2000, "test_size": 500, "png_preview": 0},
    "model": {"family": "SmallCNN", "width": 1, "weights": None, "baseline": None},
    "train": {"epochs": 20, "batch_size": 32, "lr": 0.01, "momentum": 0.9, "weight_decay": 0.0,
              "label_smoothing": 0.0, "mixup_alpha": 0.0, "ema_beta": None, "augment": False,
              "adversarial": False, "at_epsilon": 4 / 255, "at_steps": 3, "eval_samples": 200},
    "attack": {"preset": "whitebox-linf", "methods": ["FGSM", "PGD"], "samples": 500,
               "epsilon": None, "steps": None, "step_size": None},
    "curve": {"method": "PGD", "norm": "Linf", "steps": 10, "eps_max": 32 / 255, "tol": 1 / 510,
              "grid": None, "samples": 200},
    "corrupt": {"kinds": list(CORRUPTIONS), "samples": 500},
    "mce": {"kinds": list(CORRUPTIONS), "samples": 500},
    "transfer": {"models": [], "labels": [], "preset": "blackbox-linf", "method": "MIM", "samples": 200},
    "freq": {"samples": 500, "grid": None},
    "report": {"bundle": None},
}
PATH_KEYS = {("dataset", "path"), ("model", "weights"), ("model", "baseline"), ("report", "bundle")}
PATH_LIST_KEYS = {("transfer", "models")}


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _resolve_path(value, base: Path):
    if value is None:
        return None
    p = Path(os.path.expanduser(str(value)))
    return str(p if p.is_absolute() else (base / p).resolve())


def resolve(raw: dict, base: Path) -> dict:
    """Fill defaults, validate keys and make paths absolute."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a table of sections")
    out = {"seed": 0, "out": None}
    unknown = set(raw) - set(DEFAULTS) - {"seed", "out"}
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}; known: {sorted(DEFAULTS)}")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2 ** 63:
        raise ConfigError(f"seed must be a non-negative 64-bit integer, got {seed!r}")
    out["seed"] = seed
    out["out"] = _resolve_path(raw.get("out"), base)
    for section, defaults in DEFAULTS.items():
        given = raw.get(section, {})
        if not isinstance(given, dict):
            raise ConfigError(f"[{section}] must be a table")
        bad = set(given) - set(defaults)
        if bad:
            raise ConfigError(f"unknown key(s) in [{section}]: {sorted(bad)}; known: {sorted(defaults)}")
        merged = copy.deepcopy(defaults)
        merged.update(copy.deepcopy(given))
        for (sec, key) in PATH_KEYS:
            if sec == section:
                merged[key] = _resolve_path(merged[key], base)
        for (sec, key) in PATH_LIST_KEYS:
            if sec == section:
                merged[key] = [_resolve_path(v, base) for v in merged[key]]
        out[section] = merged
    _check(out)
    return out


def _check(cfg):
    if cfg["attack"]["preset"] not in PRESETS:
        raise ConfigError(f"unknown attack preset {cfg['attack']['preset']!r}; known: {sorted(PRESETS)}")
    if cfg["transfer"]["preset"] not in PRESETS:
        raise ConfigError(f"unknown transfer preset {cfg['transfer']['preset']!r}")
    for m in list(cfg["attack"]["methods"]) + [cfg["transfer"]["method"], cfg["curve"]["method"]]:
        if m not in METHODS:
            raise ConfigError(f"unknown attack method {m!r}; known: {list(METHODS)}")
    for sec in ("corrupt", "mce"):
        for k in cfg[sec]["kinds"]:
            if k not in CORRUPTIONS:
                raise ConfigError(f"unknown corruption kind {k!r} in [{sec}]")


def load(path) -> tuple[dict, dict | None]:
    """Read a TOML config or a manifest.

    Returns ``(resolved_config, manifest_or_None)``.
    """
    path = Path(path)
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    if path.suffix == ".json":
        try:
            manifest = json.loads(text)
        except ValueError as exc:
            raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
        if not isinstance(manifest, dict) or "config" not in manifest or "command" not in manifest:
            raise ConfigError(f"{path} is not a run manifest (needs 'command' and 'config')")
        return resolve(manifest["config"], path.parent), manifest
    try:
        raw = tomllib.loads(text.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path} is not valid TOML: {exc}") from exc
    return resolve(raw, path.parent.resolve()), None


def apply_overrides(cfg: dict, seed=None, out=None, env=None) -> dict:
    """``--seed`` replaces the config seed; the output directory comes from
    ``--out``, then the ``ARES_OUT`` environment variable, then the config."""
    cfg = copy.deepcopy(cfg)
    env = os.environ if env is None else env
    if seed is not None:
        if seed < 0 or seed >= 2 ** 63:
            raise ConfigError("--seed must be a non-negative 64-bit integer")
        cfg["seed"] = int(seed)
    if out is not None:
        cfg["out"] = str(Path(out).resolve())
    elif env.get(OUT_ENV):
        cfg["out"] = str(Path(env[OUT_ENV]).resolve())
    return cfg
