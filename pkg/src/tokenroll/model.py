"""Unified video-language transformer backbone.

Per-frame joint sequences [t_class; text words; v_class; patches] share one
weight stack; the text block is the same tensor replicated across frames, so
its gradients accumulate from every frame. Rolling happens between blocks on
the patch rows only. Consensus pooling averages the per-frame t_class
outputs. A "flatten" sequence mode concatenates all frames into one long
sequence instead (no rolling); at S = 1 both modes are the same computation.

Checkpoint format (little-endian):
  magic "AIOK" | u32 version | u32 config byte length | config key=value text
  | u32 param count | per param: u16 name length, name bytes, u8 rank,
  u32 dims..., float32 values | u32 crc32 of all preceding bytes
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import PAD
from .errors import CheckpointError, ContractViolation, NumericDomainError
from .rng import SplitMix64
from .rolling import RollingConfig, ttr

CHECKPOINT_MAGIC = b"AIOK"
CHECKPOINT_VERSION = 1
INIT_SCALE = 0.02

SEQUENCE_MODES = ("perframe", "flatten")

# rows pushed through forward_unimodal; retrieval asserts each item is
# embedded exactly once (2N for an N-pair eval set)
_unimodal_calls = 0


def unimodal_call_count() -> int:
    return _unimodal_calls


def reset_unimodal_call_count() -> None:
    global _unimodal_calls
    _unimodal_calls = 0


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 64
    layers: int = 4
    heads: int = 4
    patch: int = 8
    frames: int = 3
    max_text: int = 16
    height: int = 32
    width: int = 32
    channels: int = 3
    vocab_size: int = 19
    mlp_ratio: int = 4
    rolling: RollingConfig = field(default_factory=RollingConfig)
    use_pos_embed: bool = True
    use_type_embed: bool = True
    share_pos_across_frames: bool = False
    sequence_mode: str = "perframe"
    dropout: float = 0.0

    def __post_init__(self):
        if self.dim % self.heads:
            raise ContractViolation(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.height % self.patch or self.width % self.patch:
            raise ContractViolation(
                f"frame {self.height}x{self.width} not divisible by patch {self.patch}"
            )
        if self.sequence_mode not in SEQUENCE_MODES:
            raise ContractViolation(f"sequence_mode must be one of {SEQUENCE_MODES}")
        if not 0.0 <= self.dropout < 1.0:
            raise ContractViolation(f"dropout must be in [0, 1), got {self.dropout}")
        if self.frames < 1 or self.layers < 1 or self.max_text < 1:
            raise ContractViolation("frames, layers and max_text must be >= 1")

    @property
    def n_patches(self) -> int:
        return (self.height // self.patch) * (self.width // self.patch)

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * self.channels

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


def preset(name: str, **overrides) -> ModelConfig:
    """Published model sizes at 224x224, patch 16 (196 patches per frame)."""
    table = {
        "Ti": dict(dim=192, heads=3, layers=12),
        "S": dict(dim=384, heads=6, layers=12),
        "B": dict(dim=768, heads=12, layers=12),
    }
    if name not in table:
        raise ContractViolation(f"unknown preset {name!r}, have {sorted(table)}")
    base = dict(patch=16, height=224, width=224, **table[name])
    base.update(overrides)
    return ModelConfig(**base)


# ------------------------------------------------------------- parameters


def expected_param_names(config: ModelConfig) -> list[str]:
    names = [
        "word_embed",
        "t_class",
        "v_class",
        "t_pos",
        "v_pos",
        "t_type",
        "v_type",
        "patch_proj_w",
        "patch_proj_b",
    ]
    for i in range(config.layers):
        for suffix in (
            "ln1_g",
            "ln1_b",
            "attn_q_w",
            "attn_q_b",
            "attn_k_w",
            "attn_k_b",
            "attn_v_w",
            "attn_v_b",
            "attn_o_w",
            "attn_o_b",
            "ln2_g",
            "ln2_b",
            "mlp_fc1_w",
            "mlp_fc1_b",
            "mlp_fc2_w",
            "mlp_fc2_b",
        ):
            names.append(f"block{i}.{suffix}")
    names += [
        "ln_final_g",
        "ln_final_b",
        "vtm_w",
        "vtm_b",
        "mlm_w",
        "mlm_b",
        "qa_w1",
        "qa_b1",
        "qa_w2",
        "qa_b2",
        "vtc_text_w",
        "vtc_text_b",
        "vtc_video_w",
        "vtc_video_b",
    ]
    return names


def param_shape(name: str, config: ModelConfig) -> tuple:
    d, v, r = config.dim, config.vocab_size, config.mlp_ratio
    pos_rows = config.n_patches if config.share_pos_across_frames else config.frames * config.n_patches
    fixed = {
        "word_embed": (v, d),
        "t_class": (1, d),
        "v_class": (1, d),
        "t_pos": (config.max_text + 1, d),
        "v_pos": (pos_rows, d),
        "t_type": (d,),
        "v_type": (d,),
        "patch_proj_w": (config.patch_dim, d),
        "patch_proj_b": (d,),
        "ln_final_g": (d,),
        "ln_final_b": (d,),
        "vtm_w": (d, 2),
        "vtm_b": (2,),
        "mlm_w": (d, v),
        "mlm_b": (v,),
        "qa_w1": (d, d),
        "qa_b1": (d,),
        "qa_w2": (d, v),
        "qa_b2": (v,),
        "vtc_text_w": (d, d),
        "vtc_text_b": (d,),
        "vtc_video_w": (d, d),
        "vtc_video_b": (d,),
    }
    if name in fixed:
        return fixed[name]
    _, suffix = name.split(".", 1)
    return {
        "ln1_g": (d,),
        "ln1_b": (d,),
        "attn_q_w": (d, d),
        "attn_q_b": (d,),
        "attn_k_w": (d, d),
        "attn_k_b": (d,),
        "attn_v_w": (d, d),
        "attn_v_b": (d,),
        "attn_o_w": (d, d),
        "attn_o_b": (d,),
        "ln2_g": (d,),
        "ln2_b": (d,),
        "mlp_fc1_w": (d, r * d),
        "mlp_fc1_b": (r * d,),
        "mlp_fc2_w": (r * d, d),
        "mlp_fc2_b": (d,),
    }[suffix]


def init_params(config: ModelConfig, seed: int, dtype=np.float64) -> dict[str, T.Tensor]:
    """Gaussian(0, 0.02) weights, zero biases, unit layer-norm gains.

    Each parameter draws from its own name-derived stream, so values do not
    depend on initialization order.
    """
    root = SplitMix64(seed).stream("model-init")
    params = {}
    for name in expected_param_names(config):
        shape = param_shape(name, config)
        if name.endswith(("_b", ".ln1_b", ".ln2_b")):
            values = np.zeros(shape)
        elif name.endswith("_g"):
            values = np.ones(shape)
        else:
            values = root.stream(name).normal(shape, scale=INIT_SCALE)
        params[name] = T.Tensor(values.astype(dtype), requires_grad=True)
    return params


# -------------------------------------------------------------- embeddings


def patchify(frames: np.ndarray, config: ModelConfig) -> np.ndarray:
    """(B, S, C, H, W) -> (B, S, n, patch*patch*C); row-major patch grid."""
    B, S, C, H, W = frames.shape
    p = config.patch
    if (S, C, H, W) != (config.frames, config.channels, config.height, config.width):
        raise ContractViolation(
            f"frames {(S, C, H, W)} do not match config {(config.frames, config.channels, config.height, config.width)}"
        )
    hp, wp = H // p, W // p
    x = frames.reshape(B, S, C, hp, p, wp, p)
    x = x.transpose(0, 1, 3, 5, 2, 4, 6)  # (B, S, hp, wp, C, p, p)
    return np.ascontiguousarray(x).reshape(B, S, hp * wp, C * p * p)


def embed_text(ids: np.ndarray, params: dict, config: ModelConfig):
    """(B, m) int ids -> ((B, m+1, D) tokens, (B, m+1) pad mask).

    Row 0 is the learned t_class vector; it is never a pad slot.
    """
    ids = np.asarray(ids)
    if ids.ndim != 2 or ids.shape[1] != config.max_text:
        raise ContractViolation(f"ids must be (B, {config.max_text}), got {ids.shape}")
    B = ids.shape[0]
    words = T.gather_rows(params["word_embed"], ids)
    tcls = T.gather_rows(params["t_class"], np.zeros((B, 1), dtype=np.int64))
    block = T.concat_axis([tcls, words], axis=1)
    if config.use_pos_embed:
        block = T.add(block, params["t_pos"])
    if config.use_type_embed:
        block = T.add(block, params["t_type"])
    pad_mask = np.concatenate([np.zeros((B, 1), dtype=bool), ids == PAD], axis=1)
    return block, pad_mask


def embed_video(frames: np.ndarray, params: dict, config: ModelConfig) -> T.Tensor:
    """(B, S, C, H, W) pixels -> (B, S, n, D) patch tokens."""
    patches = T.Tensor(patchify(frames, config))
    tok = T.add(T.matmul(patches, params["patch_proj_w"]), params["patch_proj_b"])
    if config.use_pos_embed:
        S, n = config.frames, config.n_patches
        if config.share_pos_across_frames:
            tok = T.add(tok, params["v_pos"])  # (n, D) broadcasts over frames
        else:
            tok = T.add(tok, T.reshape(params["v_pos"], (S, n, config.dim)))
    if config.use_type_embed:
        tok = T.add(tok, params["v_type"])
    return tok


# ----------------------------------------------------------------- encoder


def _dropout(x: T.Tensor, config: ModelConfig, rng: SplitMix64 | None) -> T.Tensor:
    if config.dropout == 0.0 or rng is None:
        return x
    keep = 1.0 - config.dropout
    drop = rng.uniform(x.shape) < config.dropout
    return T.scale(T.masked_fill(x, drop, 0.0), 1.0 / keep)


def _attention(x: T.Tensor, params: dict, prefix: str, config: ModelConfig, key_pad, capture):
    """Multi-head self-attention over the last-two (T, D) axes."""
    *lead, t, d = x.shape
    h, dh = config.heads, config.head_dim

    def heads_of(name):
        proj = T.add(T.matmul(x, params[f"{prefix}{name}_w"]), params[f"{prefix}{name}_b"])
        return T.transpose(T.reshape(proj, (*lead, t, h, dh)), -3, -2)  # (..., h, t, dh)

    q, k, v = heads_of("attn_q"), heads_of("attn_k"), heads_of("attn_v")
    scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / np.sqrt(dh))
    if key_pad is not None and key_pad.any():
        scores = T.masked_fill(scores, key_pad[..., None, None, :])
    weights = T.softmax_lastdim(scores)
    if capture is not None:
        capture.append(weights.values)
    mixed = T.transpose(T.matmul(weights, v), -3, -2)  # (..., t, h, dh)
    joined = T.reshape(mixed, (*lead, t, d))
    return T.add(T.matmul(joined, params[f"{prefix}attn_o_w"]), params[f"{prefix}attn_o_b"])


def _mlp(x: T.Tensor, params: dict, prefix: str):
    hidden = T.gelu(T.add(T.matmul(x, params[f"{prefix}mlp_fc1_w"]), params[f"{prefix}mlp_fc1_b"]))
    return T.add(T.matmul(hidden, params[f"{prefix}mlp_fc2_w"]), params[f"{prefix}mlp_fc2_b"])


def _roll_state(x: T.Tensor, patch_start: int, config: ModelConfig, layer: int, rng):
    """Permute the patch rows of (B, S, T, D) across frames."""
    t = x.shape[2]
    head = T.slice_axis(x, 2, 0, patch_start)
    rolled = ttr(T.slice_axis(x, 2, patch_start, t), config.rolling, layer, rng)
    return T.concat_axis([head, rolled], axis=2)


def _block(x, params, i, config, key_pad, rng, capture):
    prefix = f"block{i}."
    normed = T.layer_norm(x, params[f"{prefix}ln1_g"], params[f"{prefix}ln1_b"])
    x = T.add(x, _dropout(_attention(normed, params, prefix, config, key_pad, capture), config, rng))
    normed = T.layer_norm(x, params[f"{prefix}ln2_g"], params[f"{prefix}ln2_b"])
    x = T.add(x, _dropout(_mlp(normed, params, prefix), config, rng))
    if not np.all(np.isfinite(x.values)):
        raise NumericDomainError(f"block {i} produced non-finite activations")
    return x


def _rolling_active(config: ModelConfig, layer: int) -> bool:
    return (
        config.sequence_mode == "perframe"
        and config.rolling.ratio > 0.0
        and config.frames > 1
        and layer >= config.rolling.start_layer
    )


def encoder_forward(
    text_block: T.Tensor | None,
    pad_mask: np.ndarray | None,
    visual: T.Tensor | None,
    params: dict,
    config: ModelConfig,
    rng: SplitMix64 | None = None,
    capture: list | None = None,
    apply_rolling: bool = True,
):
    """Run the block stack; returns (hidden, layout dict).

    Layout gives row offsets into the joint sequence: cls_row, text_rows
    (start, stop), patch_start. Shapes: perframe hidden (B, S, T, D) with
    T = m+n+2; flatten and text-only hidden (B, T, D).
    """
    if text_block is None and visual is None:
        raise ContractViolation("encoder needs at least one modality")
    d = config.dim

    if visual is None:  # text-only: no temporal axis, no rolling
        B = text_block.shape[0]
        x = text_block
        key_pad = pad_mask
        layout = {"cls_row": 0, "text_rows": (1, config.max_text + 1), "patch_start": None}
        for i in range(config.layers):
            x = _block(x, params, i, config, key_pad, rng, capture)
        return _final_norm(x, params), layout

    B, S, n = visual.shape[0], config.frames, config.n_patches
    vcls_ids = np.zeros((B, S, 1) if config.sequence_mode == "perframe" else (B, 1), dtype=np.int64)
    vcls = T.gather_rows(params["v_class"], vcls_ids)

    if config.sequence_mode == "flatten":
        parts, text_len = [], 0
        if text_block is not None:
            parts.append(text_block)
            text_len = config.max_text + 1
        parts += [vcls, T.reshape(visual, (B, S * n, d))]
        x = T.concat_axis(parts, axis=1)
        key_pad = None
        if pad_mask is not None:
            key_pad = np.concatenate(
                [pad_mask, np.zeros((B, 1 + S * n), dtype=bool)], axis=1
            )
        layout = {
            "cls_row": 0 if text_block is not None else text_len,
            "text_rows": (1, text_len) if text_block is not None else None,
            "patch_start": text_len + 1,
        }
        for i in range(config.layers):
            x = _block(x, params, i, config, key_pad, rng, capture)
        return _final_norm(x, params), layout

    # per-frame joint sequences
    parts, text_len = [], 0
    if text_block is not None:
        text_len = config.max_text + 1
        rep = T.reshape(text_block, (B, 1, text_len, d))
        parts.append(T.concat_axis([rep] * S, axis=1))
    parts += [vcls, visual]
    x = T.concat_axis(parts, axis=2)  # (B, S, T, D)
    patch_start = text_len + 1
    key_pad = None
    if pad_mask is not None:
        full = np.concatenate([pad_mask, np.zeros((B, 1 + n), dtype=bool)], axis=1)
        key_pad = full[:, None, :]  # broadcast over frames
    layout = {
        "cls_row": 0 if text_block is not None else text_len,
        "text_rows": (1, text_len) if text_block is not None else None,
        "patch_start": patch_start,
    }
    for i in range(config.layers):
        if apply_rolling and _rolling_active(config, i + 1):
            x = _roll_state(x, patch_start, config, i + 1, rng)
        x = _block(x, params, i, config, key_pad, rng, capture)
    return _final_norm(x, params), layout


def _final_norm(x, params):
    return T.layer_norm(x, params["ln_final_g"], params["ln_final_b"])


# -------------------------------------------------------------------- heads


@dataclass
class ModelOutputs:
    vtm_logits: T.Tensor  # (B, 2)
    mlm_logits: T.Tensor  # (B, m, V)
    pooled: T.Tensor  # (B, D) consensus over frames
    hidden: T.Tensor
    layout: dict
    attention: list | None = None


def consensus_pool(hidden: T.Tensor, layout: dict, config: ModelConfig) -> T.Tensor:
    """Average the cls-row output over frames (identity over one sequence)."""
    row = layout["cls_row"]
    if hidden.values.ndim == 4:
        B, S, t, d = hidden.shape
        cls = T.reshape(T.slice_axis(hidden, 2, row, row + 1), (B, S, d))
        return T.mean_axis(cls, axis=1)
    B, t, d = hidden.shape
    return T.reshape(T.slice_axis(hidden, 1, row, row + 1), (B, d))


def _text_rows_avg(hidden: T.Tensor, layout: dict, config: ModelConfig) -> T.Tensor:
    lo, hi = layout["text_rows"]
    if hidden.values.ndim == 4:
        return T.mean_axis(T.slice_axis(hidden, 2, lo, hi), axis=1)  # (B, m, D)
    return T.slice_axis(hidden, 1, lo, hi)


def forward_multimodal(
    frames: np.ndarray,
    ids: np.ndarray,
    params: dict,
    config: ModelConfig,
    rng: SplitMix64 | None = None,
    capture_attention: bool = False,
) -> ModelOutputs:
    """Joint encoding of clips and captions; VTM and MLM heads."""
    capture = [] if capture_attention else None
    text_block, pad_mask = embed_text(ids, params, config)
    visual = embed_video(frames, params, config)
    hidden, layout = encoder_forward(text_block, pad_mask, visual, params, config, rng, capture)
    pooled = consensus_pool(hidden, layout, config)
    vtm_logits = T.add(T.matmul(pooled, params["vtm_w"]), params["vtm_b"])
    text_out = _text_rows_avg(hidden, layout, config)
    mlm_logits = T.add(T.matmul(text_out, params["mlm_w"]), params["mlm_b"])
    return ModelOutputs(
        vtm_logits=vtm_logits,
        mlm_logits=mlm_logits,
        pooled=pooled,
        hidden=hidden,
        layout=layout,
        attention=capture,
    )


def forward_unimodal(
    params: dict,
    config: ModelConfig,
    frames: np.ndarray | None = None,
    ids: np.ndarray | None = None,
    rng: SplitMix64 | None = None,
) -> T.Tensor:
    """One-modality embedding for contrastive use; (B, D), unit rows."""
    global _unimodal_calls
    if (frames is None) == (ids is None):
        raise ContractViolation("forward_unimodal takes exactly one of frames/ids")
    _unimodal_calls += len(frames) if frames is not None else len(ids)
    if ids is not None:
        text_block, pad_mask = embed_text(ids, params, config)
        hidden, layout = encoder_forward(text_block, pad_mask, None, params, config, rng)
        pooled = consensus_pool(hidden, layout, config)
        proj = T.add(T.matmul(pooled, params["vtc_text_w"]), params["vtc_text_b"])
    else:
        visual = embed_video(frames, params, config)
        hidden, layout = encoder_forward(None, None, visual, params, config, rng)
        pooled = consensus_pool(hidden, layout, config)
        proj = T.add(T.matmul(pooled, params["vtc_video_w"]), params["vtc_video_b"])
    return T.l2_normalize_rows(proj)


# -------------------------------------------------------------- checkpoints


def config_to_text(config: ModelConfig) -> str:
    r = config.rolling
    pairs = [
        ("dim", config.dim),
        ("layers", config.layers),
        ("heads", config.heads),
        ("patch", config.patch),
        ("frames", config.frames),
        ("max_text", config.max_text),
        ("height", config.height),
        ("width", config.width),
        ("channels", config.channels),
        ("vocab_size", config.vocab_size),
        ("mlp_ratio", config.mlp_ratio),
        ("roll_ratio", r.ratio),
        ("roll_selection", r.selection),
        ("roll_start_layer", r.start_layer),
        ("roll_block_offset", r.block_offset),
        ("use_pos_embed", str(config.use_pos_embed).lower()),
        ("use_type_embed", str(config.use_type_embed).lower()),
        ("share_pos_across_frames", str(config.share_pos_across_frames).lower()),
        ("sequence_mode", config.sequence_mode),
        ("dropout", config.dropout),
    ]
    return "".join(f"{k} = {v}\n" for k, v in pairs)


def config_from_text(text: str) -> ModelConfig:
    raw = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CheckpointError(f"bad config line {line!r}")
        key, val = (p.strip() for p in line.split("=", 1))
        raw[key] = val
    as_bool = lambda v: {"true": True, "false": False}[v]
    try:
        rolling = RollingConfig(
            ratio=float(raw["roll_ratio"]),
            selection=raw["roll_selection"],
            start_layer=int(raw["roll_start_layer"]),
            block_offset=int(raw["roll_block_offset"]),
        )
        return ModelConfig(
            dim=int(raw["dim"]),
            layers=int(raw["layers"]),
            heads=int(raw["heads"]),
            patch=int(raw["patch"]),
            frames=int(raw["frames"]),
            max_text=int(raw["max_text"]),
            height=int(raw["height"]),
            width=int(raw["width"]),
            channels=int(raw["channels"]),
            vocab_size=int(raw["vocab_size"]),
            mlp_ratio=int(raw["mlp_ratio"]),
            rolling=rolling,
            use_pos_embed=as_bool(raw["use_pos_embed"]),
            use_type_embed=as_bool(raw["use_type_embed"]),
            share_pos_across_frames=as_bool(raw["share_pos_across_frames"]),
            sequence_mode=raw["sequence_mode"],
            dropout=float(raw["dropout"]),
        )
    except KeyError as missing:
        raise CheckpointError(f"config block is missing key {missing}")


def save_checkpoint(path, params: dict, config: ModelConfig) -> None:
    names = expected_param_names(config)
    if set(names) != set(params):
        raise CheckpointError("parameter names do not match the config's expected set")
    blob = bytearray()
    blob += CHECKPOINT_MAGIC
    blob += struct.pack("<I", CHECKPOINT_VERSION)
    cfg = config_to_text(config).encode("utf-8")
    blob += struct.pack("<I", len(cfg))
    blob += cfg
    blob += struct.pack("<I", len(names))
    for name in names:
        values = params[name].values.astype("<f4")
        encoded = name.encode("utf-8")
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("<B", values.ndim)
        blob += struct.pack(f"<{values.ndim}I", *values.shape)
        blob += values.tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)))
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path, dtype=np.float64) -> tuple[dict, ModelConfig]:
    blob = Path(path).read_bytes()
    if len(blob) < 16 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) != stored_crc:
        raise CheckpointError(f"{path}: crc32 mismatch, file is corrupt")
    off = 4
    (version,) = struct.unpack_from("<I", blob, off)
    off += 4
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, reader supports {CHECKPOINT_VERSION}")
    (cfg_len,) = struct.unpack_from("<I", blob, off)
    off += 4
    config = config_from_text(blob[off : off + cfg_len].decode("utf-8"))
    off += cfg_len
    (count,) = struct.unpack_from("<I", blob, off)
    off += 4
    params = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off : off + name_len].decode("utf-8")
            off += name_len
            (rank,) = struct.unpack_from("<B", blob, off)
            off += 1
            shape = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            size = int(np.prod(shape)) if shape else 1
            values = np.frombuffer(blob, dtype="<f4", count=size, offset=off).reshape(shape)
            off += 4 * size
            params[name] = T.Tensor(values.astype(dtype), requires_grad=True)
    except (struct.error, ValueError):
        raise CheckpointError(f"{path}: truncated parameter table")
    expected = expected_param_names(config)
    if set(params) != set(expected):
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        raise CheckpointError(f"{path}: parameter set mismatch, missing {missing}, extra {extra}")
    for name in expected:
        want = param_shape(name, config)
        if params[name].shape != want:
            raise CheckpointError(f"{path}: {name} has shape {params[name].shape}, config implies {want}")
    return params, config
