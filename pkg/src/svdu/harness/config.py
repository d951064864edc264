"""Flat key-value experiment configuration.

The on-disk format is deliberately boring: one `key = value` pair per
line, `#` comments, and a mandatory `config_version` key. CLI flags
override file values; a single seed drives every random choice downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from svdu.errors import InputError

CONFIG_VERSION = 1


def load_config(path) -> dict[str, str]:
    """Parse a flat key-value config file into a string dict."""
    values: dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InputError(f"{path}:{lineno}: expected `key = value`")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if not key:
                raise InputError(f"{path}:{lineno}: empty key")
            if key in values:
                raise InputError(f"{path}:{lineno}: duplicate key {key!r}")
            values[key] = value
    version = values.pop("config_version", None)
    if version is None:
        raise InputError(f"{path}: missing config_version")
    if version != str(CONFIG_VERSION):
        raise InputError(f"{path}: unsupported config_version {version}")
    return values


def get_int(cfg: dict[str, str], key: str, default: int) -> int:
    try:
        return int(cfg.get(key, default))
    except ValueError as exc:
        raise InputError(f"config key {key!r}: {exc}") from exc


def get_float(cfg: dict[str, str], key: str, default: float) -> float:
    try:
        return float(cfg.get(key, default))
    except ValueError as exc:
        raise InputError(f"config key {key!r}: {exc}") from exc


def get_bool(cfg: dict[str, str], key: str, default: bool) -> bool:
    raw = cfg.get(key)
    if raw is None:
        return default
    lowered = raw.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise InputError(f"config key {key!r}: not a boolean: {raw!r}")


def get_int_list(cfg: dict[str, str], key: str, default: list[int]) -> list[int]:
    raw = cfg.get(key)
    if raw is None:
        return list(default)
    try:
        return [int(x) for x in raw.split(",") if x.strip()]
    except ValueError as exc:
        raise InputError(f"config key {key!r}: {exc}") from exc


def get_float_list(cfg: dict[str, str], key: str,
                   default: list[float]) -> list[float]:
    raw = cfg.get(key)
    if raw is None:
        return list(default)
    try:
        return [float(x) for x in raw.split(",") if x.strip()]
    except ValueError as exc:
        raise InputError(f"config key {key!r}: {exc}") from exc


@dataclass
class ExperimentConfig:
    """Resolved settings for an end-to-end comparison or sweep run."""

    dataset: str = "blobs"
    blobs_d: int = 64
    blobs_k: int = 10
    blobs_n: int = 7200
    blobs_separation: float = 6.0
    idx_images: str = ""
    idx_labels: str = ""
    model_path: str = ""
    hidden_dims: list[int] = field(default_factory=lambda: [128, 128])
    epochs: int = 40
    batch_size: int = 32
    learning_rate: float = 0.1
    l2_weight_decay: float = 0.0
    sample_size: int = 64
    eval_size: int = 2000
    norm_pcts: list[float] = field(default_factory=lambda: [2.0, 4.0, 7.1, 14.2, 20.0])
    fgsm_eps: float = 0.1
    deepfool_max_iter: int = 50
    overshoot: float = 0.02
    mdfff_target: float = 0.8
    mdfff_max_passes: int = 10
    clip_mode: str = "none"
    include_construction_samples: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.dataset not in ("blobs", "idx"):
            raise InputError(f"unknown dataset kind {self.dataset!r}")
        if any(b <= a for a, b in zip(self.norm_pcts, self.norm_pcts[1:])):
            raise InputError("norm_pcts must be strictly increasing")
        if any(p < 0 for p in self.norm_pcts):
            raise InputError("norm_pcts must be nonnegative")
        if self.sample_size < 1:
            raise InputError("sample_size must be >= 1")


def experiment_from_mapping(cfg: dict[str, str], seed: int) -> ExperimentConfig:
    return ExperimentConfig(
        dataset=cfg.get("dataset", "blobs"),
        blobs_d=get_int(cfg, "blobs_d", 64),
        blobs_k=get_int(cfg, "blobs_k", 10),
        blobs_n=get_int(cfg, "blobs_n", 7200),
        blobs_separation=get_float(cfg, "blobs_separation", 6.0),
        idx_images=cfg.get("idx_images", ""),
        idx_labels=cfg.get("idx_labels", ""),
        model_path=cfg.get("model_path", ""),
        hidden_dims=get_int_list(cfg, "hidden_dims", [128, 128]),
        epochs=get_int(cfg, "epochs", 40),
        batch_size=get_int(cfg, "batch_size", 32),
        learning_rate=get_float(cfg, "learning_rate", 0.1),
        l2_weight_decay=get_float(cfg, "l2_weight_decay", 0.0),
        sample_size=get_int(cfg, "sample_size", 64),
        eval_size=get_int(cfg, "eval_size", 2000),
        norm_pcts=get_float_list(cfg, "norm_pcts", [2.0, 4.0, 7.1, 14.2, 20.0]),
        fgsm_eps=get_float(cfg, "fgsm_eps", 0.1),
        deepfool_max_iter=get_int(cfg, "deepfool_max_iter", 50),
        overshoot=get_float(cfg, "overshoot", 0.02),
        mdfff_target=get_float(cfg, "mdfff_target", 0.8),
        mdfff_max_passes=get_int(cfg, "mdfff_max_passes", 10),
        clip_mode=cfg.get("clip_mode", "none"),
        include_construction_samples=get_bool(
            cfg, "include_construction_samples", False),
        seed=seed,
    )
