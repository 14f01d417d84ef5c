"""Temporal token rolling and the baseline temporal mixers.

All three mechanisms are parameter-free rearrangements of the visual token
grid (S frames, n spatial slots, D channels):

  rolling        frame i receives the selected spatial slots from frame
                 (i-1) mod S; everything else stays put. A pure permutation
                 over the S*n slots, so the backward pass is the inverse
                 permutation.
  flatten_join   no per-frame structure: one long sequence [text; frame 0;
                 ...; frame S-1], quadratic attention over m + S*n tokens.
  channel_shift  the first floor(ratio*D) channels roll forward by one
                 frame; spatial layout untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractViolation
from .rng import SplitMix64

SELECTIONS = ("block", "random", "varying")
MODES = ("rolling", "flatten", "channel_shift")


@dataclass(frozen=True)
class RollingConfig:
    ratio: float = 0.25
    selection: str = "block"
    start_layer: int = 1  # 1-based layer index at which rolling begins
    block_offset: int = 0

    def __post_init__(self):
        if not 0.0 <= self.ratio <= 1.0:
            raise ContractViolation(f"rolling ratio must be in [0, 1], got {self.ratio}")
        if self.selection not in SELECTIONS:
            raise ContractViolation(f"selection must be one of {SELECTIONS}, got {self.selection!r}")
        if self.start_layer < 1:
            raise ContractViolation(f"start_layer is 1-based, got {self.start_layer}")
        if self.block_offset < 0:
            raise ContractViolation(f"block_offset must be >= 0, got {self.block_offset}")

    def rolled_count(self, n: int) -> int:
        return int(self.ratio * n)


def selected_slots(n: int, config: RollingConfig, layer: int, rng: SplitMix64 | None = None) -> np.ndarray:
    """Spatial indices whose tokens roll at this layer. Sorted, distinct."""
    k = config.rolled_count(n)
    if k == 0:
        return np.empty(0, dtype=np.int64)
    if config.selection == "block":
        start = config.block_offset
    elif config.selection == "varying":
        # the block advances by k slots per layer past the first rolled one
        start = config.block_offset + k * (layer - config.start_layer)
    else:
        if rng is None:
            raise ContractViolation("selection='random' needs an rng stream")
        return np.sort(rng.choice(n, k))
    return np.sort((start + np.arange(k)) % n)


def roll_index_map(
    S: int, n: int, config: RollingConfig, layer: int, rng: SplitMix64 | None = None
) -> np.ndarray:
    """Permutation over the S*n visual slots (slot = frame*n + spatial index).

    out[frame*n + j] = (frame-1 mod S)*n + j for selected j, identity else.
    """
    if S < 1 or n < 1:
        raise ContractViolation(f"need S >= 1 and n >= 1, got S={S}, n={n}")
    if layer < 1:
        raise ContractViolation(f"layer is 1-based, got {layer}")
    perm = np.arange(S * n, dtype=np.int64)
    sel = selected_slots(n, config, layer, rng)
    if sel.size == 0 or S == 1:
        return perm
    frames = np.arange(S, dtype=np.int64)[:, None]
    perm[(frames * n + sel[None, :]).reshape(-1)] = (((frames - 1) % S) * n + sel[None, :]).reshape(-1)
    return perm


def ttr(
    visual_tokens: T.Tensor,
    config: RollingConfig,
    layer: int,
    rng: SplitMix64 | None = None,
) -> T.Tensor:
    """Roll the selected slots of a (..., S, n, D) visual token grid."""
    if visual_tokens.values.ndim < 3:
        raise ContractViolation(f"ttr expects (..., S, n, D), got {visual_tokens.shape}")
    *lead, S, n, d = visual_tokens.shape
    perm = roll_index_map(S, n, config, layer, rng)
    flat = T.reshape(visual_tokens, (*lead, S * n, d))
    rolled = T.permute_tokens(flat, perm, axis=-2)
    return T.reshape(rolled, (*lead, S, n, d))


def flatten_join(text_tokens: T.Tensor, visual_tokens: T.Tensor) -> T.Tensor:
    """[text; frame 0; ...; frame S-1] -> (..., m + S*n, D)."""
    if text_tokens.values.ndim < 2 or visual_tokens.values.ndim < 3:
        raise ContractViolation(
            f"flatten_join expects text (..., m, D) and visual (..., S, n, D), "
            f"got {text_tokens.shape} and {visual_tokens.shape}"
        )
    *lead, S, n, d = visual_tokens.shape
    if text_tokens.shape[-1] != d:
        raise ContractViolation(
            f"channel dims disagree: text {text_tokens.shape[-1]}, visual {d}"
        )
    flat_visual = T.reshape(visual_tokens, (*lead, S * n, d))
    return T.concat_axis([text_tokens, flat_visual], axis=-2)


def channel_shift(visual_tokens: T.Tensor, ratio: float) -> T.Tensor:
    """Roll the first floor(ratio*D) channels forward by one frame."""
    if not 0.0 <= ratio <= 1.0:
        raise ContractViolation(f"channel_shift ratio must be in [0, 1], got {ratio}")
    if visual_tokens.values.ndim < 3:
        raise ContractViolation(f"channel_shift expects (..., S, n, D), got {visual_tokens.shape}")
    *lead, S, n, d = visual_tokens.shape
    c = int(ratio * d)
    if c == 0 or S == 1:
        return visual_tokens
    frame_perm = (np.arange(S, dtype=np.int64) - 1) % S
    shifted = T.permute_tokens(T.slice_axis(visual_tokens, -1, 0, c), frame_perm, axis=-3)
    if c == d:
        return shifted
    rest = T.slice_axis(visual_tokens, -1, c, d)
    return T.concat_axis([shifted, rest], axis=-1)


def attention_flops(S: int, m: int, n: int, mode: str) -> int:
    """Attention score-matrix entries per head per layer."""
    if mode not in MODES:
        raise ContractViolation(f"mode must be one of {MODES}, got {mode!r}")
    if S < 1 or m < 0 or n < 1:
        raise ContractViolation(f"bad dims S={S}, m={m}, n={n}")
    if mode == "flatten":
        return (m + S * n) ** 2
    return S * (m + n) ** 2
