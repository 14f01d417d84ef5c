"""Synthetic moving-shape clips with template captions, and the corpus format.

A clip is S frames of a single hard-edged shape translating at a constant
integer velocity; the caption follows one template. Every random draw comes
from a per-record SplitMix64 stream, so corpus generation is reproducible
record by record.

Corpus directory layout:
  manifest        key = value lines: version, S, C, H, W, count, vocab_hash
  vocab.txt       one token per line, line number = token id
  clips.bin       per record: magic "AIOC", u32 version, u32 S, C, H, W,
                  then S*C*H*W little-endian float32 frame values
  captions.jsonl  one JSON record per line: id, text, shape, color,
                  direction, speed
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ContractViolation,
    CorpusDimMismatch,
    CorpusError,
    CorpusTruncated,
    CorpusVersionMismatch,
    SpecRejection,
    VocabularyError,
)
from .rng import SplitMix64

CORPUS_MAGIC = b"AIOC"
CORPUS_VERSION = 1
SHAPE_HALF = 5  # shapes span 11 px; frames are 32 px by default

SHAPES = ("square", "circle", "triangle")
COLORS = ("red", "green", "blue", "yellow")
DIRECTIONS = ("left", "right", "up", "down")

# (row, col) steps; "up" decreases the row index
DIRECTION_STEPS = {"left": (0, -1), "right": (0, 1), "up": (-1, 0), "down": (1, 0)}

COLOR_RGB = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
}

PAD, CLS, SEP, MASK = 0, 1, 2, 3
SPECIALS = ("[PAD]", "[CLS]", "[SEP]", "[MASK]")
TEMPLATE_WORDS = (
    "the",
    "moves",
    "stays",
    "still",
    *COLORS,
    *SHAPES,
    *DIRECTIONS,
)


@dataclass(frozen=True)
class ClipSpec:
    shape: str
    color: str
    direction: str
    speed: int  # pixels per frame, 0 means a still clip
    start: tuple[int, int]  # (row, col) center in frame 0

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ContractViolation(f"unknown shape {self.shape!r}")
        if self.color not in COLORS:
            raise ContractViolation(f"unknown color {self.color!r}")
        if self.direction not in DIRECTIONS:
            raise ContractViolation(f"unknown direction {self.direction!r}")
        if self.speed < 0:
            raise ContractViolation(f"speed must be >= 0, got {self.speed}")


@dataclass
class ClipRecord:
    """One corpus entry: frames plus caption-level metadata."""

    id: int
    frames: np.ndarray  # (S, C, H, W) float32
    text: str
    shape: str
    color: str
    direction: str
    speed: int


def shape_mask(shape: str, center: tuple[int, int], H: int, W: int) -> np.ndarray:
    """Boolean (H, W) footprint; hard edges, no anti-aliasing."""
    r0, c0 = center
    rows = np.arange(H)[:, None]
    cols = np.arange(W)[None, :]
    if shape == "square":
        return (np.abs(rows - r0) <= SHAPE_HALF) & (np.abs(cols - c0) <= SHAPE_HALF)
    if shape == "circle":
        return (rows - r0) ** 2 + (cols - c0) ** 2 <= SHAPE_HALF**2
    # upright triangle: apex at the top, width grows with the row offset
    dr = rows - (r0 - SHAPE_HALF)
    return (dr >= 0) & (dr <= 2 * SHAPE_HALF) & (np.abs(cols - c0) <= dr // 2)


def center_at(spec: ClipSpec, frame: int) -> tuple[int, int]:
    dr, dc = DIRECTION_STEPS[spec.direction]
    return (spec.start[0] + frame * spec.speed * dr, spec.start[1] + frame * spec.speed * dc)


def render_clip(spec: ClipSpec, S: int, C: int, H: int, W: int) -> np.ndarray:
    """(S, C, H, W) float32 frames. Rejects trajectories that leave the frame."""
    if C != 3:
        raise ContractViolation(f"renderer draws RGB, got C={C}")
    frames = np.zeros((S, C, H, W), dtype=np.float32)
    rgb = COLOR_RGB[spec.color]
    for k in range(S):
        r, c = center_at(spec, k)
        if not (SHAPE_HALF <= r <= H - 1 - SHAPE_HALF and SHAPE_HALF <= c <= W - 1 - SHAPE_HALF):
            raise SpecRejection(
                f"trajectory escapes frame: center {(r, c)} at frame {k} violates "
                f"bound [{SHAPE_HALF}, {H - 1 - SHAPE_HALF}] x [{SHAPE_HALF}, {W - 1 - SHAPE_HALF}]"
            )
        mask = shape_mask(spec.shape, (r, c), H, W)
        for ch in range(3):
            frames[k, ch][mask] = rgb[ch]
    return frames


def render_caption(spec: ClipSpec) -> str:
    if spec.speed == 0:
        return f"the {spec.color} {spec.shape} stays still"
    return f"the {spec.color} {spec.shape} moves {spec.direction}"


# ------------------------------------------------------------------ vocab


class Vocabulary:
    """Fixed word list; line number in vocab.txt is the id."""

    def __init__(self, tokens: list[str]):
        if len(tokens) != len(set(tokens)):
            raise VocabularyError("duplicate tokens in vocabulary")
        if tuple(tokens[:4]) != SPECIALS:
            raise VocabularyError(f"first four tokens must be {SPECIALS}")
        self.tokens = list(tokens)
        self.index = {tok: i for i, tok in enumerate(tokens)}

    def __len__(self):
        return len(self.tokens)

    def id_of(self, word: str) -> int:
        try:
            return self.index[word]
        except KeyError:
            raise VocabularyError(f"word not in vocabulary: {word!r}")

    def to_text(self) -> str:
        return "\n".join(self.tokens) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        return cls([line for line in text.splitlines()])


def build_vocab() -> Vocabulary:
    return Vocabulary([*SPECIALS, *TEMPLATE_WORDS])


def tokenize(text: str, vocab: Vocabulary, m: int) -> np.ndarray:
    """[CLS] + whitespace-split word ids, [PAD]-filled to length m."""
    words = text.split()
    if len(words) + 1 > m:
        raise ContractViolation(f"caption needs {len(words) + 1} slots, max_text is {m}")
    ids = np.full(m, PAD, dtype=np.int64)
    ids[0] = CLS
    for i, w in enumerate(words):
        ids[i + 1] = vocab.id_of(w)
    return ids


def detokenize(ids: np.ndarray, vocab: Vocabulary) -> str:
    words = [vocab.tokens[i] for i in ids if i not in (PAD, CLS, SEP)]
    return " ".join(words)


def mask_tokens(
    ids: np.ndarray, p: float, rng: SplitMix64, force_min_one: bool = True
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Independently mask non-special tokens with probability p.

    Returns (masked_ids, labels, mask). labels holds the original id at
    masked positions and -1 elsewhere. With force_min_one the whole draw is
    resampled until at least one position is masked.
    """
    if not 0.0 <= p <= 1.0:
        raise ContractViolation(f"mask probability must be in [0, 1], got {p}")
    ids = np.asarray(ids)
    maskable = ids >= len(SPECIALS)
    if force_min_one and not maskable.any():
        raise ContractViolation("cannot force a mask: no maskable tokens")
    if force_min_one and p == 0.0:
        raise ContractViolation("cannot force a mask with p = 0")
    while True:
        mask = maskable & (rng.uniform(ids.shape) < p)
        if mask.any() or not force_min_one:
            break
    masked_ids = np.where(mask, MASK, ids)
    labels = np.where(mask, ids, -1)
    return masked_ids, labels, mask


def make_vtm_pair(
    count: int, index: int, p_neg: float, rng: SplitMix64
) -> tuple[int, int]:
    """(clip index to pair with caption `index`, match label).

    With probability p_neg the clip is swapped for a uniformly chosen
    different record and the label is 0.
    """
    if count < 2:
        raise ContractViolation(f"negative sampling needs at least 2 records, got {count}")
    if not 0 <= index < count:
        raise ContractViolation(f"index {index} out of range [0, {count})")
    if rng.uniform() < p_neg:
        other = rng.below(count - 1)
        if other >= index:
            other += 1
        return other, 0
    return index, 1


# -------------------------------------------------------------- generation


def generate_corpus(
    count: int,
    S: int = 3,
    C: int = 3,
    H: int = 32,
    W: int = 32,
    seed: int = 0,
    speed_min: int = 1,
    speed_max: int = 3,
) -> tuple[list[ClipRecord], Vocabulary]:
    """Render `count` clips; record i draws only from its own stream."""
    if count < 0:
        raise ContractViolation(f"count must be >= 0, got {count}")
    if not 1 <= speed_min <= speed_max:
        raise ContractViolation(f"need 1 <= speed_min <= speed_max, got {speed_min}..{speed_max}")
    vocab = build_vocab()
    corpus_stream = SplitMix64(seed).stream("corpus")
    records = []
    for i in range(count):
        rec_rng = corpus_stream.record_stream(i)
        spec = sample_clip_spec(rec_rng, S, H, W, speed_min, speed_max)
        frames = render_clip(spec, S, C, H, W)
        records.append(
            ClipRecord(
                id=i,
                frames=frames,
                text=render_caption(spec),
                shape=spec.shape,
                color=spec.color,
                direction=spec.direction,
                speed=spec.speed,
            )
        )
    return records, vocab


def sample_clip_spec(
    rng: SplitMix64, S: int, H: int, W: int, speed_min: int, speed_max: int
) -> ClipSpec:
    """Uniform slot values; start resampled until the trajectory stays inside."""
    shape = SHAPES[rng.below(len(SHAPES))]
    color = COLORS[rng.below(len(COLORS))]
    direction = DIRECTIONS[rng.below(len(DIRECTIONS))]
    speed = speed_min + rng.below(speed_max - speed_min + 1)
    lo_r, hi_r = SHAPE_HALF, H - 1 - SHAPE_HALF
    lo_c, hi_c = SHAPE_HALF, W - 1 - SHAPE_HALF
    for _ in range(1000):
        start = (lo_r + rng.below(hi_r - lo_r + 1), lo_c + rng.below(hi_c - lo_c + 1))
        spec = ClipSpec(shape, color, direction, speed, start)
        r_end, c_end = center_at(spec, S - 1)
        if lo_r <= r_end <= hi_r and lo_c <= c_end <= hi_c:
            return spec
    raise SpecRejection(
        f"no valid start for speed {speed} direction {direction} in {H}x{W} after 1000 draws"
    )


# ----------------------------------------------------------------- file io


def vocab_hash(vocab: Vocabulary) -> str:
    return f"{zlib.crc32(vocab.to_text().encode('utf-8')):08x}"


def write_corpus(out_dir, records: list[ClipRecord], vocab: Vocabulary, S: int, C: int, H: int, W: int) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for rec in records:
        if rec.frames.shape != (S, C, H, W):
            raise ContractViolation(
                f"record {rec.id} frames {rec.frames.shape} do not match corpus dims {(S, C, H, W)}"
            )
        if rec.frames.dtype != np.float32:
            raise ContractViolation(f"record {rec.id} frames must be float32")
    (out / "vocab.txt").write_text(vocab.to_text(), encoding="utf-8")
    manifest = (
        f"version = {CORPUS_VERSION}\n"
        f"S = {S}\nC = {C}\nH = {H}\nW = {W}\n"
        f"count = {len(records)}\n"
        f"vocab_hash = {vocab_hash(vocab)}\n"
    )
    (out / "manifest").write_text(manifest, encoding="utf-8")
    with open(out / "clips.bin", "wb") as f:
        for rec in records:
            f.write(struct.pack("<4sIIIII", CORPUS_MAGIC, CORPUS_VERSION, S, C, H, W))
            f.write(rec.frames.astype("<f4").tobytes())
    with open(out / "captions.jsonl", "w", encoding="utf-8") as f:
        for rec in records:
            f.write(
                json.dumps(
                    {
                        "id": rec.id,
                        "text": rec.text,
                        "shape": rec.shape,
                        "color": rec.color,
                        "direction": rec.direction,
                        "speed": rec.speed,
                    }
                )
                + "\n"
            )


@dataclass
class Corpus:
    records: list[ClipRecord]
    vocab: Vocabulary
    S: int
    C: int
    H: int
    W: int

    def __len__(self):
        return len(self.records)


def _parse_manifest(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CorpusError(f"manifest line has no '=': {line!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        out[key] = val
    return out


def read_corpus(corpus_dir) -> Corpus:
    root = Path(corpus_dir)
    try:
        manifest = _parse_manifest((root / "manifest").read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CorpusError(f"no manifest in {root}")
    version = int(manifest.get("version", "-1"))
    if version != CORPUS_VERSION:
        raise CorpusVersionMismatch(f"corpus version {version}, reader supports {CORPUS_VERSION}")
    S, C, H, W = (int(manifest[k]) for k in ("S", "C", "H", "W"))
    count = int(manifest["count"])
    vocab = Vocabulary.from_text((root / "vocab.txt").read_text(encoding="utf-8"))
    if vocab_hash(vocab) != manifest["vocab_hash"]:
        raise CorpusError("vocab.txt does not match the manifest vocab_hash")

    captions = []
    with open(root / "captions.jsonl", encoding="utf-8") as f:
        for line in f:
            if line.strip():
                captions.append(json.loads(line))
    if len(captions) != count:
        raise CorpusTruncated(f"captions.jsonl has {len(captions)} records, manifest says {count}")

    frame_bytes = S * C * H * W * 4
    records = []
    with open(root / "clips.bin", "rb") as f:
        for i in range(count):
            header = f.read(24)
            if len(header) < 24:
                raise CorpusTruncated(f"clips.bin ends inside record {i}'s header")
            magic, ver, rs, rc, rh, rw = struct.unpack("<4sIIIII", header)
            if magic != CORPUS_MAGIC:
                raise CorpusTruncated(f"record {i} has bad magic {magic!r}")
            if ver != CORPUS_VERSION:
                raise CorpusVersionMismatch(f"record {i} has version {ver}")
            if (rs, rc, rh, rw) != (S, C, H, W):
                raise CorpusDimMismatch(
                    f"record {i} dims {(rs, rc, rh, rw)} do not match manifest {(S, C, H, W)}"
                )
            payload = f.read(frame_bytes)
            if len(payload) < frame_bytes:
                raise CorpusTruncated(f"clips.bin ends inside record {i}'s frames")
            frames = np.frombuffer(payload, dtype="<f4").reshape(S, C, H, W).copy()
            cap = captions[i]
            records.append(
                ClipRecord(
                    id=int(cap["id"]),
                    frames=frames,
                    text=cap["text"],
                    shape=cap["shape"],
                    color=cap["color"],
                    direction=cap["direction"],
                    speed=int(cap["speed"]),
                )
            )
        if f.read(1):
            raise CorpusTruncated("clips.bin has trailing bytes beyond the manifest count")
    return Corpus(records=records, vocab=vocab, S=S, C=C, H=H, W=W)
