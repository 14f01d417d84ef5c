"""Evaluation protocols: multiple choice, cloze, retrieval, attention mass.

Every protocol produces an EvalReport whose report text is a deterministic
function of (checkpoint, eval set, seed); wall-clock numbers go to a separate
timing file so the report itself can be compared byte for byte across runs.
"""

from __future__ import annotations

import time
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import (
    CLS,
    COLORS,
    DIRECTIONS,
    MASK,
    SHAPES,
    ClipRecord,
    Vocabulary,
    tokenize,
)
from .errors import ContractViolation, EvalSetError
from .model import (
    ModelConfig,
    _rolling_active,
    config_to_text,
    expected_param_names,
    forward_multimodal,
    forward_unimodal,
    reset_unimodal_call_count,
    unimodal_call_count,
)
from .rolling import selected_slots

SLOT_VALUES = {"color": COLORS, "shape": SHAPES, "direction": DIRECTIONS}


def checkpoint_fingerprint(params: dict, config: ModelConfig) -> str:
    """crc32 over the config text and all float32 parameter bytes, name order."""
    crc = zlib.crc32(config_to_text(config).encode("utf-8"))
    for name in expected_param_names(config):
        crc = zlib.crc32(params[name].values.astype("<f4").tobytes(), crc)
    return f"{crc:08x}"


def split_eval(records: list[ClipRecord], holdout: int) -> tuple[list, list]:
    """(train, eval): the eval set is the last `holdout` records."""
    if not 0 < holdout < len(records):
        raise EvalSetError(f"holdout {holdout} must be in (0, {len(records)})")
    return records[:-holdout], records[-holdout:]


@dataclass
class EvalReport:
    kind: str
    fingerprint: str
    seed: int
    metrics: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def report_text(self) -> str:
        lines = [
            f"kind = {self.kind}",
            f"fingerprint = {self.fingerprint}",
            f"seed = {self.seed}",
        ]
        for key in sorted(self.metrics):
            val = self.metrics[key]
            if isinstance(val, float):
                lines.append(f"{key} = {val:.6f}")
            else:
                lines.append(f"{key} = {val}")
        for note in self.notes:
            lines.append(f"note = {note}")
        return "\n".join(lines) + "\n"

    def timing_text(self) -> str:
        lines = [f"{key} = {self.timing[key]:.6f}" for key in sorted(self.timing)]
        return "\n".join(lines) + "\n" if lines else ""

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(self.report_text(), encoding="utf-8")
        (out / "timing.txt").write_text(self.timing_text(), encoding="utf-8")


# ----------------------------------------------------------- multiple choice


def _swap_word(text: str, old: str, new: str) -> str:
    words = text.split()
    return " ".join(new if w == old else w for w in words)


def mc_candidates(record: ClipRecord) -> list[str]:
    """True caption plus 4 one-slot edits: color, shape, two directions.

    Distractor values are the lowest-index alternatives in each slot table,
    so the candidate list is a pure function of the record.
    """
    if record.speed <= 0:
        raise EvalSetError("multiple choice needs a moving clip (speed > 0)")
    cands = [record.text]
    color = next(c for c in COLORS if c != record.color)
    cands.append(_swap_word(record.text, record.color, color))
    shape = next(s for s in SHAPES if s != record.shape)
    cands.append(_swap_word(record.text, record.shape, shape))
    dirs = [d for d in DIRECTIONS if d != record.direction][:2]
    for d in dirs:
        cands.append(_swap_word(record.text, record.direction, d))
    return cands


def eval_multiple_choice(
    params: dict,
    config: ModelConfig,
    records: list[ClipRecord],
    vocab: Vocabulary,
    seed: int = 0,
    batch_size: int = 50,
) -> EvalReport:
    """Pick the caption the match head scores highest; 5 candidates per clip."""
    usable = [r for r in records if r.speed > 0]
    if not usable:
        raise EvalSetError("no moving clips in the eval set")
    t0 = time.perf_counter()
    dtype = params["word_embed"].values.dtype
    hits = 0
    per_clip = []
    for start in range(0, len(usable), batch_size):
        chunk = usable[start : start + batch_size]
        frames = np.repeat(
            np.stack([r.frames for r in chunk]).astype(dtype), 5, axis=0
        )
        ids = np.stack(
            [tokenize(c, vocab, config.max_text) for r in chunk for c in mc_candidates(r)]
        )
        out = forward_multimodal(frames, ids, params, config)
        logits = out.vtm_logits.values.reshape(len(chunk), 5, 2)
        match_score = logits[:, :, 1] - logits[:, :, 0]
        # ties resolve to the lowest candidate index
        picks = np.argmax(match_score, axis=1)
        hits += int((picks == 0).sum())
        per_clip.extend(int(p) for p in picks)
    elapsed = time.perf_counter() - t0
    n = len(usable)
    report = EvalReport(
        kind="multiple_choice",
        fingerprint=checkpoint_fingerprint(params, config),
        seed=seed,
        metrics={
            "n": n,
            "candidates": 5,
            "accuracy": hits / n,
            "chance": 1.0 / 5.0,
        },
        timing={"eval_seconds": elapsed},
    )
    return report


# -------------------------------------------------------------------- cloze


def eval_cloze(
    params: dict,
    config: ModelConfig,
    records: list[ClipRecord],
    vocab: Vocabulary,
    slot: str = "direction",
    seed: int = 0,
    batch_size: int = 50,
) -> EvalReport:
    """Mask one caption slot; restricted argmax over that slot's word ids."""
    if slot not in SLOT_VALUES:
        raise EvalSetError(f"unknown cloze slot {slot!r}, have {sorted(SLOT_VALUES)}")
    usable = records if slot != "direction" else [r for r in records if r.speed > 0]
    if not usable:
        raise EvalSetError("no usable clips in the eval set")
    values = SLOT_VALUES[slot]
    cand_ids = np.array([vocab.id_of(w) for w in values])
    t0 = time.perf_counter()
    dtype = params["word_embed"].values.dtype
    hits = 0
    for start in range(0, len(usable), batch_size):
        chunk = usable[start : start + batch_size]
        frames = np.stack([r.frames for r in chunk]).astype(dtype)
        ids = np.stack([tokenize(r.text, vocab, config.max_text) for r in chunk])
        pos = np.empty(len(chunk), dtype=np.int64)
        truth = np.empty(len(chunk), dtype=np.int64)
        for j, r in enumerate(chunk):
            target = vocab.id_of(getattr(r, slot))
            where = np.where(ids[j] == target)[0]
            if where.size != 1:
                raise EvalSetError(
                    f"clip {r.id}: caption does not contain the {slot} word exactly once"
                )
            pos[j] = where[0]
            truth[j] = target
            ids[j, pos[j]] = MASK
        out = forward_multimodal(frames, ids, params, config)
        # mlm_logits row j scores caption slot j (t_class occupies its own row)
        rows = out.mlm_logits.values[np.arange(len(chunk)), pos]
        picks = cand_ids[np.argmax(rows[:, cand_ids], axis=1)]
        hits += int((picks == truth).sum())
    elapsed = time.perf_counter() - t0
    n = len(usable)
    return EvalReport(
        kind=f"cloze_{slot}",
        fingerprint=checkpoint_fingerprint(params, config),
        seed=seed,
        metrics={
            "n": n,
            "candidates": len(values),
            "accuracy": hits / n,
            "chance": 1.0 / len(values),
        },
        timing={"eval_seconds": elapsed},
    )


# ---------------------------------------------------------------- retrieval


def _ranks(sim: np.ndarray) -> np.ndarray:
    """Rank of the paired item per row; ties resolve optimistically."""
    n = sim.shape[0]
    paired = sim[np.arange(n), np.arange(n)][:, None]
    return 1 + (sim > paired).sum(axis=1)


def eval_retrieval(
    params: dict,
    config: ModelConfig,
    records: list[ClipRecord],
    vocab: Vocabulary,
    seed: int = 0,
    batch_size: int = 50,
) -> EvalReport:
    """Embed each item once, rank by cosine similarity both directions."""
    n = len(records)
    if n < 2:
        raise EvalSetError("retrieval needs at least 2 records")
    dtype = params["word_embed"].values.dtype
    reset_unimodal_call_count()
    t0 = time.perf_counter()
    v_parts, t_parts = [], []
    for start in range(0, n, batch_size):
        chunk = records[start : start + batch_size]
        frames = np.stack([r.frames for r in chunk]).astype(dtype)
        ids = np.stack([tokenize(r.text, vocab, config.max_text) for r in chunk])
        v_parts.append(forward_unimodal(params, config, frames=frames).values)
        t_parts.append(forward_unimodal(params, config, ids=ids).values)
    embed_seconds = time.perf_counter() - t0
    forwards = unimodal_call_count()
    if forwards != 2 * n:
        raise ContractViolation(f"retrieval embedded {forwards} items, expected {2 * n}")

    t1 = time.perf_counter()
    v = np.concatenate(v_parts)
    t = np.concatenate(t_parts)
    sim = v @ t.T  # rows: video queries over text candidates
    metrics: dict = {"n": n, "forwards": forwards}
    both = {}
    for name, ranks in (("v2t", _ranks(sim)), ("t2v", _ranks(sim.T))):
        for k in (1, 5, 10):
            both[f"{name}_r{k}"] = float((ranks <= k).mean())
        both[f"{name}_median_rank"] = float(np.median(ranks))
    for k in (1, 5, 10):
        both[f"r{k}"] = 0.5 * (both[f"v2t_r{k}"] + both[f"t2v_r{k}"])
    metrics.update(both)
    rank_seconds = time.perf_counter() - t1
    return EvalReport(
        kind="retrieval",
        fingerprint=checkpoint_fingerprint(params, config),
        seed=seed,
        metrics=metrics,
        timing={"embed_seconds": embed_seconds, "rank_seconds": rank_seconds},
    )


# ----------------------------------------------------- attention on rolled


def eval_attention_distribution(
    params: dict,
    config: ModelConfig,
    records: list[ClipRecord],
    vocab: Vocabulary,
    seed: int = 0,
    batch_size: int = 32,
) -> EvalReport:
    """Share of patch-column attention landing on rolled slots, per layer.

    Only meaningful for deterministic slot selection; a zero-ratio model gets
    a vacuous report (no rolled slots) rather than an error, so paired
    comparisons against a rolling model stay easy to script.
    """
    if config.rolling.selection == "random":
        raise EvalSetError("attention distribution needs a deterministic slot selection")
    if config.sequence_mode != "perframe":
        raise EvalSetError("attention distribution is defined for per-frame sequences")
    if not records:
        raise EvalSetError("empty eval set")
    chunk = records[:batch_size]
    dtype = params["word_embed"].values.dtype
    frames = np.stack([r.frames for r in chunk]).astype(dtype)
    ids = np.stack([tokenize(r.text, vocab, config.max_text) for r in chunk])
    t0 = time.perf_counter()
    out = forward_multimodal(frames, ids, params, config, capture_attention=True)
    elapsed = time.perf_counter() - t0
    ps = out.layout["patch_start"]
    n = config.n_patches
    metrics: dict = {"n": len(chunk), "layers": config.layers}
    notes = []
    vacuous = config.rolling.ratio == 0.0 or config.frames == 1
    total_rolled, total_share = 0.0, 0.0
    active_layers = 0
    for i, weights in enumerate(out.attention):
        layer = i + 1
        patch_mass = weights[..., ps:].sum(axis=-1).mean()
        if _rolling_active(config, layer):
            sel = selected_slots(n, config.rolling, layer)
            cols = ps + sel
            rolled_mass = weights[..., cols].sum(axis=-1).mean()
            share = float(rolled_mass / patch_mass) if patch_mass > 0 else 0.0
            expected = sel.size / n
            metrics[f"layer{layer}_rolled_share"] = share
            metrics[f"layer{layer}_expected_share"] = expected
            total_rolled += share
            total_share += expected
            active_layers += 1
        else:
            metrics[f"layer{layer}_rolled_share"] = 0.0
            metrics[f"layer{layer}_expected_share"] = 0.0
        metrics[f"layer{layer}_patch_mass"] = float(patch_mass)
    if vacuous:
        notes.append("no rolled slots at ratio 0; shares are vacuously zero")
    elif active_layers:
        metrics["mean_rolled_share"] = total_rolled / active_layers
        metrics["mean_expected_share"] = total_share / active_layers
    return EvalReport(
        kind="attention_distribution",
        fingerprint=checkpoint_fingerprint(params, config),
        seed=seed,
        metrics=metrics,
        timing={"eval_seconds": elapsed},
        notes=notes,
    )
