"""Attention-cost benchmark: analytic score counts vs an instrumented run.

The benchmark times a bare attention stack (text + patch rows only, no class
tokens) so the counts line up with the closed-form expressions: per-frame
modes score S*(m+n)^2 query-key pairs per head per layer, the flattened
joint sequence scores (m+S*n)^2. Every run also counts the entries of the
score matrices it actually materialized and refuses to report if the two
disagree.
"""

from __future__ import annotations

import csv
import io
import time
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .rng import SplitMix64
from .rolling import attention_flops

MODES = ("rolling", "flatten", "channel_shift")


@dataclass(frozen=True)
class BenchResult:
    mode: str
    frames: int
    text_len: int
    patches: int
    analytic_entries: int
    instrumented_entries: int
    median_seconds: float
    reps: int


def _attention_layer(x: np.ndarray, w: dict, heads: int) -> tuple[np.ndarray, int]:
    """Self-attention over the last two axes; returns (output, score entries per head)."""
    *lead, t, d = x.shape
    dh = d // heads
    q = (x @ w["q"]).reshape(*lead, t, heads, dh).swapaxes(-3, -2)
    k = (x @ w["k"]).reshape(*lead, t, heads, dh).swapaxes(-3, -2)
    v = (x @ w["v"]).reshape(*lead, t, heads, dh).swapaxes(-3, -2)
    scores = (q @ k.swapaxes(-2, -1)) / np.sqrt(dh)
    entries = scores.size // heads
    scores -= scores.max(axis=-1, keepdims=True)
    weights = np.exp(scores)
    weights /= weights.sum(axis=-1, keepdims=True)
    out = (weights @ v).swapaxes(-3, -2).reshape(*lead, t, d)
    return out @ w["o"], entries


def _roll_patches(x: np.ndarray, m: int, n: int, k: int) -> np.ndarray:
    """Move the first k patch slots of each frame to the next frame."""
    if k == 0:
        return x
    out = x.copy()
    out[:, m : m + k] = np.roll(x[:, m : m + k], 1, axis=0)
    return out


def _shift_channels(x: np.ndarray, c: int) -> np.ndarray:
    if c == 0:
        return x
    out = x.copy()
    out[..., :c] = np.roll(x[..., :c], 1, axis=0)
    return out


def bench_attention(
    mode: str,
    S: int,
    m: int = 16,
    n: int = 196,
    dim: int = 64,
    heads: int = 4,
    layers: int = 4,
    reps: int = 20,
    roll_ratio: float = 0.25,
    seed: int = 0,
) -> BenchResult:
    """Median wall clock and score-entry counts for one sequence mode."""
    if mode not in MODES:
        raise ContractViolation(f"mode must be one of {MODES}, got {mode!r}")
    if reps < 1:
        raise ContractViolation(f"reps must be >= 1, got {reps}")
    if dim % heads:
        raise ContractViolation(f"dim {dim} not divisible by heads {heads}")
    rng = SplitMix64(seed).stream(f"bench-{mode}-{S}")
    if mode == "flatten":
        x0 = rng.stream("tokens").normal((m + S * n, dim))
    else:
        x0 = rng.stream("tokens").normal((S, m + n, dim))
    weights = []
    for i in range(layers):
        wrng = rng.stream(f"layer{i}")
        weights.append(
            {name: wrng.stream(name).normal((dim, dim), scale=0.02) for name in ("q", "k", "v", "o")}
        )
    k_roll = int(roll_ratio * n)
    c_shift = int(roll_ratio * dim)
    analytic = layers * attention_flops(S, m, n, "flatten" if mode == "flatten" else "rolling")

    times = []
    instrumented = 0
    for rep in range(reps):
        x = x0
        counted = 0
        t0 = time.perf_counter()
        for w in weights:
            if mode == "rolling":
                x = _roll_patches(x, m, n, k_roll)
            elif mode == "channel_shift":
                x = _shift_channels(x, c_shift)
            x, entries = _attention_layer(x, w, heads)
            counted += entries
        times.append(time.perf_counter() - t0)
        if rep == 0:
            instrumented = counted
        elif counted != instrumented:
            raise ContractViolation("instrumented count changed between reps")
    if instrumented != analytic:
        raise ContractViolation(
            f"instrumented score entries {instrumented} != analytic {analytic} for mode {mode}"
        )
    return BenchResult(
        mode=mode,
        frames=S,
        text_len=m,
        patches=n,
        analytic_entries=analytic,
        instrumented_entries=instrumented,
        median_seconds=float(np.median(times)),
        reps=reps,
    )


def run_bench(
    S_values=(2, 3, 4),
    m: int = 16,
    n: int = 196,
    dim: int = 64,
    heads: int = 4,
    layers: int = 4,
    reps: int = 20,
    seed: int = 0,
) -> list[BenchResult]:
    results = []
    for S in S_values:
        for mode in MODES:
            results.append(
                bench_attention(
                    mode, S, m=m, n=n, dim=dim, heads=heads, layers=layers, reps=reps, seed=seed
                )
            )
    return results


def bench_csv(results: list[BenchResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(
        [
            "mode",
            "frames",
            "text_len",
            "patches",
            "analytic_entries",
            "instrumented_entries",
            "median_seconds",
            "reps",
        ]
    )
    for r in results:
        writer.writerow(
            [
                r.mode,
                r.frames,
                r.text_len,
                r.patches,
                r.analytic_entries,
                r.instrumented_entries,
                f"{r.median_seconds:.6f}",
                r.reps,
            ]
        )
    return buf.getvalue()
