"""Objectives, optimizer, schedule, and the pretraining/finetuning loops.

One pretraining step runs a single joint forward on (clip, caption) batches
where half the captions are swapped to a different clip: the match head reads
the consensus output, the cloze head reads the text rows. Cloze targets are
scored only on matched rows, so the model never has to reconstruct a caption
that contradicts the pixels. Pretraining combines only these two objectives;
the contrastive term belongs to retrieval finetuning, where it runs the two
unimodal towers on the true pairs next to the same swapped-pair match loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import ClipRecord, Vocabulary, make_vtm_pair, mask_tokens, tokenize
from .errors import ContractViolation
from .model import (
    ModelConfig,
    forward_multimodal,
    forward_unimodal,
    init_params,
    save_checkpoint,
)
from .rng import SplitMix64

VTC_TEMPERATURE = 0.07
UNIT_ROW_TOL = 1e-6


# ------------------------------------------------------------------- losses


def vtm_loss(logits: T.Tensor, labels: np.ndarray) -> T.Tensor:
    """Mean match/mismatch cross-entropy. logits (B, 2), labels (B,) in {0, 1}."""
    labels = np.asarray(labels)
    if logits.values.ndim != 2 or logits.shape[-1] != 2:
        raise ContractViolation(f"vtm_loss wants (B, 2) logits, got {logits.shape}")
    per = T.cross_entropy_with_logits(logits, labels)
    return T.mean_axis(per, axis=0)


def mlm_loss(logits: T.Tensor, labels: np.ndarray, mask: np.ndarray) -> T.Tensor:
    """Mean cloze cross-entropy over masked positions only.

    logits (B, m, V); labels (B, m) with the original id at masked positions
    (anything non-negative elsewhere, conventionally -1); mask (B, m) bool.
    """
    labels = np.asarray(labels)
    mask = np.asarray(mask)
    if mask.dtype != np.bool_:
        raise ContractViolation("mlm_loss: mask must be boolean")
    if mask.shape != logits.shape[:-1] or labels.shape != mask.shape:
        raise ContractViolation(
            f"mlm_loss: shapes disagree, logits {logits.shape}, labels {labels.shape}, mask {mask.shape}"
        )
    k = int(mask.sum())
    if k == 0:
        raise ContractViolation("mlm_loss: mask selects no positions")
    safe = np.where(mask, labels, 0)
    per = T.cross_entropy_with_logits(logits, safe)
    kept = T.masked_fill(per, ~mask, 0.0)
    total = T.mean_axis(T.reshape(kept, (-1,)), axis=0)
    return T.scale(total, mask.size / k)


def vtc_loss(
    video_emb: T.Tensor, text_emb: T.Tensor, temperature: float = VTC_TEMPERATURE
) -> T.Tensor:
    """Symmetric InfoNCE over in-batch pairs; inputs must be unit rows."""
    if video_emb.shape != text_emb.shape or video_emb.values.ndim != 2:
        raise ContractViolation(
            f"vtc_loss wants matching (N, D) embeddings, got {video_emb.shape} and {text_emb.shape}"
        )
    if temperature <= 0:
        raise ContractViolation(f"temperature must be positive, got {temperature}")
    for name, emb in (("video", video_emb), ("text", text_emb)):
        norms = np.sqrt((emb.values**2).sum(axis=-1))
        if np.max(np.abs(norms - 1.0)) > UNIT_ROW_TOL:
            raise ContractViolation(f"vtc_loss: {name} rows are not unit length")
    n = video_emb.shape[0]
    sim = T.scale(T.matmul(video_emb, T.transpose(text_emb)), 1.0 / temperature)
    labels = np.arange(n)
    row = T.mean_axis(T.cross_entropy_with_logits(sim, labels), axis=0)
    col = T.mean_axis(T.cross_entropy_with_logits(T.transpose(sim), labels), axis=0)
    return T.scale(T.add(row, col), 0.5)


# ---------------------------------------------------------------- optimizer


@dataclass
class AdamW:
    """Decoupled weight decay: p <- p - lr*wd*p - lr*mhat/(sqrt(vhat)+eps)."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    t: int = field(default=0, init=False)
    _m: dict = field(default_factory=dict, init=False)
    _v: dict = field(default_factory=dict, init=False)

    def step(
        self, params: dict[str, T.Tensor], grads: dict[str, np.ndarray], lr: float | None = None
    ) -> dict[str, T.Tensor]:
        """One update; returns a fresh parameter dict (leaves for the next tape)."""
        if set(grads) != set(params):
            raise ContractViolation("optimizer got a gradient set that does not match the parameters")
        step_lr = self.lr if lr is None else lr
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        out = {}
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ContractViolation(f"gradient shape {g.shape} vs parameter {p.shape} for {name}")
            m = self._m.get(name)
            if m is None:
                m = np.zeros_like(p.values)
                self._v[name] = np.zeros_like(p.values)
            v = self._v[name]
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g * g
            self._m[name], self._v[name] = m, v
            mhat = m / (1.0 - b1**self.t)
            vhat = v / (1.0 - b2**self.t)
            new = p.values - step_lr * self.weight_decay * p.values - step_lr * mhat / (
                np.sqrt(vhat) + self.eps
            )
            out[name] = T.Tensor(new, requires_grad=True)
        return out


def lr_at(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Linear warmup to base_lr, then linear decay to 0. `step` is 1-based."""
    if not 1 <= step <= total_steps:
        raise ContractViolation(f"step {step} outside [1, {total_steps}]")
    if not 0 <= warmup_steps < total_steps:
        raise ContractViolation(f"warmup {warmup_steps} must be in [0, {total_steps})")
    if step <= warmup_steps:
        return base_lr * step / warmup_steps
    return base_lr * (total_steps - step) / (total_steps - warmup_steps)


def global_grad_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float((g.astype(np.float64) ** 2).sum())
    return float(np.sqrt(total))


def clip_gradients(
    grads: dict[str, np.ndarray], max_norm: float
) -> tuple[dict[str, np.ndarray], float]:
    """Scale all gradients so the global norm is at most max_norm."""
    if max_norm <= 0:
        raise ContractViolation(f"max_norm must be positive, got {max_norm}")
    norm = global_grad_norm(grads)
    if norm <= max_norm:
        return grads, norm
    factor = max_norm / norm
    return {k: g * factor for k, g in grads.items()}, norm


# -------------------------------------------------------------------- loops


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 32
    lr: float = 1e-4
    weight_decay: float = 0.01
    warmup_frac: float = 0.1
    clip_norm: float = 1.0  # 0 disables clipping
    vtm_weight: float = 1.0
    mlm_weight: float = 1.0
    vtc_weight: float = 1.0
    mlm_prob: float = 0.15
    p_neg: float = 0.5
    schedule: str = "warmup_linear"  # or "constant"
    dtype: str = "float64"  # acceptance runs opt into float32 for speed
    log_every: int = 50
    checkpoint_every: int = 0  # 0: final checkpoint only

    def __post_init__(self):
        # steps=0 is legal: the loops return the initialization untouched
        if self.steps < 0 or self.batch_size < 1:
            raise ContractViolation("steps must be >= 0 and batch_size >= 1")
        if self.checkpoint_every < 0:
            raise ContractViolation("checkpoint_every must be >= 0")
        if self.dtype not in ("float64", "float32"):
            raise ContractViolation(f"dtype must be float64 or float32, got {self.dtype}")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ContractViolation(f"warmup_frac must be in [0, 1), got {self.warmup_frac}")
        if self.schedule not in ("warmup_linear", "constant"):
            raise ContractViolation(f"schedule must be warmup_linear or constant, got {self.schedule}")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


def _tokenize_all(records, vocab, m) -> np.ndarray:
    return np.stack([tokenize(r.text, vocab, m) for r in records])


def _batch_frames(records, idx, dtype) -> np.ndarray:
    return np.stack([records[i].frames for i in idx]).astype(dtype)


def pretrain(
    records: list[ClipRecord],
    vocab: Vocabulary,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    seed: int,
    init: dict | None = None,
    checkpoint_dir=None,
) -> tuple[dict, list[dict]]:
    """Joint match + cloze pretraining; returns (params, log).

    With checkpoint_every > 0 and a checkpoint_dir, writes step{t}.ckpt at
    every multiple; the returned params are the end-of-run checkpoint.
    """
    if len(records) < 2:
        raise ContractViolation("pretraining needs at least 2 records")
    if train_cfg.batch_size > len(records):
        raise ContractViolation("batch_size exceeds the number of records")
    dtype = train_cfg.np_dtype
    params = init if init is not None else init_params(model_cfg, seed, dtype=dtype)
    opt = AdamW(lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    warmup = int(round(train_cfg.warmup_frac * train_cfg.steps))
    root = SplitMix64(seed).stream("pretrain")
    all_ids = _tokenize_all(records, vocab, model_cfg.max_text)
    count = len(records)
    log = []

    for t in range(1, train_cfg.steps + 1):
        srng = root.record_stream(t)
        # without replacement: duplicate clips in one contrastive batch would
        # put the same row on both sides of the softmax
        idx = srng.stream("batch").choice(count, train_cfg.batch_size)

        pair_rng = srng.stream("pairs")
        clip_idx = np.empty(len(idx), dtype=np.int64)
        match = np.empty(len(idx), dtype=np.int64)
        for j, i in enumerate(idx):
            clip_idx[j], match[j] = make_vtm_pair(count, int(i), train_cfg.p_neg, pair_rng)

        ids_true = all_ids[idx]
        mask_rng = srng.stream("mask")
        ids_in = ids_true.copy()
        labels = np.full_like(ids_true, -1)
        mask = np.zeros_like(ids_true, dtype=bool)
        for j in range(len(idx)):
            mj_ids, mj_lab, mj_mask = mask_tokens(ids_true[j], train_cfg.mlm_prob, mask_rng)
            ids_in[j], labels[j], mask[j] = mj_ids, mj_lab, mj_mask
        cloze_rows = mask & (match == 1)[:, None]

        frames = _batch_frames(records, clip_idx, dtype)

        with T.Tape() as tape:
            out = forward_multimodal(frames, ids_in, params, model_cfg, rng=srng.stream("drop"))
            vtm = vtm_loss(out.vtm_logits, match)
            total = T.scale(vtm, train_cfg.vtm_weight)
            mlm_val = float("nan")
            if train_cfg.mlm_weight > 0 and cloze_rows.any():
                mlm = mlm_loss(out.mlm_logits, labels, cloze_rows)
                mlm_val = float(mlm.values)
                total = T.add(total, T.scale(mlm, train_cfg.mlm_weight))
            grad = tape.backward(total)

        grads = {name: grad.wrt(p) for name, p in params.items()}
        if train_cfg.clip_norm > 0:
            grads, norm = clip_gradients(grads, train_cfg.clip_norm)
        else:
            norm = global_grad_norm(grads)
        lr = _step_lr(t, train_cfg, warmup)
        params = opt.step(params, grads, lr)

        if t % train_cfg.log_every == 0 or t == train_cfg.steps:
            mlm_acc = float("nan")
            if cloze_rows.any():
                picks = np.argmax(out.mlm_logits.values, axis=-1)
                mlm_acc = float((picks[cloze_rows] == labels[cloze_rows]).mean())
            log.append(
                dict(
                    step=t,
                    loss=float(total.values),
                    vtm=float(vtm.values),
                    mlm=mlm_val,
                    lr=lr,
                    grad_norm=norm,
                    vtm_acc=float((np.argmax(out.vtm_logits.values, axis=1) == match).mean()),
                    mlm_acc=mlm_acc,
                )
            )
        if (
            checkpoint_dir is not None
            and train_cfg.checkpoint_every > 0
            and t % train_cfg.checkpoint_every == 0
        ):
            save_checkpoint(Path(checkpoint_dir) / f"step{t:05d}.ckpt", params, model_cfg)
    return params, log


def _step_lr(t: int, train_cfg: TrainConfig, warmup: int) -> float:
    if train_cfg.schedule == "constant":
        return train_cfg.lr
    return lr_at(t, train_cfg.steps, warmup, train_cfg.lr)


def finetune_retrieval(
    params: dict,
    records: list[ClipRecord],
    vocab: Vocabulary,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    seed: int,
) -> tuple[dict, list[dict]]:
    """Match + contrastive tuning on aligned pairs (the retrieval recipe).

    vtm_weight and vtc_weight pick the objective mix; zeroing one gives the
    single-objective ablations. The contrastive term always runs on the true
    pairs through the unimodal towers; the match term sees swapped negatives
    exactly like pretraining. The cloze objective is a pretraining concern
    and is ignored here.
    """
    if len(records) < 2:
        raise ContractViolation("finetuning needs at least 2 records")
    if train_cfg.batch_size > len(records):
        raise ContractViolation("batch_size exceeds the number of records")
    if train_cfg.vtm_weight <= 0 and train_cfg.vtc_weight <= 0:
        raise ContractViolation("finetuning needs vtm_weight > 0 or vtc_weight > 0")
    dtype = train_cfg.np_dtype
    params = {k: T.Tensor(p.values.astype(dtype), requires_grad=True) for k, p in params.items()}
    opt = AdamW(lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    warmup = int(round(train_cfg.warmup_frac * train_cfg.steps))
    root = SplitMix64(seed).stream("finetune")
    all_ids = _tokenize_all(records, vocab, model_cfg.max_text)
    count = len(records)
    log = []

    for t in range(1, train_cfg.steps + 1):
        srng = root.record_stream(t)
        idx = srng.stream("batch").choice(count, train_cfg.batch_size)
        ids = all_ids[idx]

        vtm_val = vtc_val = float("nan")
        vtm_acc = float("nan")
        with T.Tape() as tape:
            total = None
            if train_cfg.vtc_weight > 0:
                v_emb = forward_unimodal(params, model_cfg, frames=_batch_frames(records, idx, dtype))
                t_emb = forward_unimodal(params, model_cfg, ids=ids)
                vtc = vtc_loss(v_emb, t_emb)
                vtc_val = float(vtc.values)
                total = T.scale(vtc, train_cfg.vtc_weight)
            if train_cfg.vtm_weight > 0:
                pair_rng = srng.stream("pairs")
                clip_idx = np.empty(len(idx), dtype=np.int64)
                match = np.empty(len(idx), dtype=np.int64)
                for j, i in enumerate(idx):
                    clip_idx[j], match[j] = make_vtm_pair(count, int(i), train_cfg.p_neg, pair_rng)
                out = forward_multimodal(
                    _batch_frames(records, clip_idx, dtype), ids, params, model_cfg,
                    rng=srng.stream("drop"),
                )
                vtm = vtm_loss(out.vtm_logits, match)
                vtm_val = float(vtm.values)
                vtm_acc = float((np.argmax(out.vtm_logits.values, axis=1) == match).mean())
                term = T.scale(vtm, train_cfg.vtm_weight)
                total = term if total is None else T.add(total, term)
            grad = tape.backward(total)

        grads = {name: grad.wrt(p) for name, p in params.items()}
        if train_cfg.clip_norm > 0:
            grads, norm = clip_gradients(grads, train_cfg.clip_norm)
        else:
            norm = global_grad_norm(grads)
        lr = _step_lr(t, train_cfg, warmup)
        params = opt.step(params, grads, lr)
        if t % train_cfg.log_every == 0 or t == train_cfg.steps:
            log.append(
                dict(
                    step=t,
                    loss=float(total.values),
                    vtm=vtm_val,
                    vtc=vtc_val,
                    lr=lr,
                    grad_norm=norm,
                    vtm_acc=vtm_acc,
                )
            )
    return params, log
