"""Flat `key = value` run configuration.

One file drives model shape, training, and eval splits. Lines are
`key = value`, `#` starts a comment, unknown keys are an error (listed, so a
typo cannot silently fall back to a default). vocab_size is intentionally
absent: it always comes from the corpus vocabulary.
"""

from __future__ import annotations

from .errors import ConfigError
from .model import ModelConfig
from .rolling import RollingConfig
from .training import TrainConfig

# key: (default, help)
DEFAULTS = {
    # model
    "dim": (64, "embedding width"),
    "layers": (4, "transformer blocks"),
    "heads": (4, "attention heads"),
    "patch": (8, "patch edge in pixels"),
    "frames": (3, "frames per clip"),
    "max_text": (16, "caption length incl. [CLS]"),
    "height": (32, "frame height"),
    "width": (32, "frame width"),
    "channels": (3, "frame channels"),
    "mlp_ratio": (4, "mlp hidden multiplier"),
    "roll_ratio": (0.25, "fraction of patch slots rolled per layer"),
    "roll_selection": ("block", "block | varying | random"),
    "roll_start_layer": (1, "first layer (1-based) that rolls"),
    "roll_block_offset": (0, "first rolled slot index"),
    "use_pos_embed": (True, "add position embeddings"),
    "use_type_embed": (True, "add modality type embeddings"),
    "share_pos_across_frames": (False, "one spatial table for every frame"),
    "sequence_mode": ("perframe", "perframe | flatten"),
    "dropout": (0.0, "residual dropout probability"),
    # training
    "steps": (2000, "optimizer steps"),
    "batch_size": (32, "clips per step"),
    "lr": (1e-4, "peak learning rate"),
    "weight_decay": (0.01, "decoupled weight decay"),
    "warmup_frac": (0.1, "fraction of steps spent warming up"),
    "clip_norm": (1.0, "global gradient norm cap, 0 disables"),
    "vtm_weight": (1.0, "match loss weight"),
    "mlm_weight": (1.0, "cloze loss weight"),
    "vtc_weight": (1.0, "contrastive loss weight"),
    "mlm_prob": (0.15, "caption masking probability"),
    "p_neg": (0.5, "probability of a mismatched training pair"),
    "schedule": ("warmup_linear", "warmup_linear | constant"),
    "dtype": ("float64", "float64 | float32"),
    "log_every": (50, "steps between log records"),
    "checkpoint_every": (0, "steps between mid-run checkpoints, 0 for final only"),
    # splits
    "eval_holdout": (100, "records reserved from the corpus tail for eval"),
    "finetune_pairs": (1000, "head records used for retrieval finetuning"),
}


def config_help() -> str:
    width = max(len(k) for k in DEFAULTS)
    lines = []
    for key, (default, doc) in DEFAULTS.items():
        shown = str(default).lower() if isinstance(default, bool) else default
        lines.append(f"{key:<{width}}  {shown!s:<14} {doc}")
    return "\n".join(lines) + "\n"


def _coerce(key: str, text: str):
    default = DEFAULTS[key][0]
    if isinstance(default, bool):
        low = text.lower()
        if low not in ("true", "false"):
            raise ConfigError(f"{key} wants true/false, got {text!r}")
        return low == "true"
    if isinstance(default, int):
        try:
            return int(text)
        except ValueError:
            raise ConfigError(f"{key} wants an integer, got {text!r}")
    if isinstance(default, float):
        try:
            return float(text)
        except ValueError:
            raise ConfigError(f"{key} wants a number, got {text!r}")
    return text


def parse_pairs(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value, got {line.strip()!r}")
        key, val = (p.strip() for p in stripped.split("=", 1))
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = val
    return out


def run_config(text: str | None = None, overrides: list[str] | None = None) -> dict:
    """Typed config dict from file text plus `key=value` override strings."""
    raw = parse_pairs(text) if text else {}
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, val = (p.strip() for p in item.split("=", 1))
        raw[key] = val
    unknown = sorted(set(raw) - set(DEFAULTS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = {k: v for k, (v, _) in DEFAULTS.items()}
    for key, val in raw.items():
        cfg[key] = _coerce(key, val)
    return cfg


def model_config_from(cfg: dict, vocab_size: int) -> ModelConfig:
    rolling = RollingConfig(
        ratio=cfg["roll_ratio"],
        selection=cfg["roll_selection"],
        start_layer=cfg["roll_start_layer"],
        block_offset=cfg["roll_block_offset"],
    )
    return ModelConfig(
        dim=cfg["dim"],
        layers=cfg["layers"],
        heads=cfg["heads"],
        patch=cfg["patch"],
        frames=cfg["frames"],
        max_text=cfg["max_text"],
        height=cfg["height"],
        width=cfg["width"],
        channels=cfg["channels"],
        vocab_size=vocab_size,
        mlp_ratio=cfg["mlp_ratio"],
        rolling=rolling,
        use_pos_embed=cfg["use_pos_embed"],
        use_type_embed=cfg["use_type_embed"],
        share_pos_across_frames=cfg["share_pos_across_frames"],
        sequence_mode=cfg["sequence_mode"],
        dropout=cfg["dropout"],
    )


def train_config_from(cfg: dict) -> TrainConfig:
    return TrainConfig(
        steps=cfg["steps"],
        batch_size=cfg["batch_size"],
        lr=cfg["lr"],
        weight_decay=cfg["weight_decay"],
        warmup_frac=cfg["warmup_frac"],
        clip_norm=cfg["clip_norm"],
        vtm_weight=cfg["vtm_weight"],
        mlm_weight=cfg["mlm_weight"],
        vtc_weight=cfg["vtc_weight"],
        mlm_prob=cfg["mlm_prob"],
        p_neg=cfg["p_neg"],
        schedule=cfg["schedule"],
        dtype=cfg["dtype"],
        log_every=cfg["log_every"],
        checkpoint_every=cfg["checkpoint_every"],
    )
