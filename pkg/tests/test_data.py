import numpy as np
import pytest

from tokenroll import data as D
from tokenroll.errors import (
    ContractViolation,
    CorpusDimMismatch,
    CorpusError,
    CorpusTruncated,
    CorpusVersionMismatch,
    SpecRejection,
    VocabularyError,
)
from tokenroll.rng import SplitMix64


def spec(shape="square", color="red", direction="left", speed=2, start=(16, 16)):
    return D.ClipSpec(shape=shape, color=color, direction=direction, speed=speed, start=start)


# ---------------------------------------------------------------- rendering


def test_zero_speed_renders_identical_frames():
    frames = D.render_clip(spec(speed=0), 3, 3, 32, 32)
    assert np.array_equal(frames[0], frames[1])
    assert np.array_equal(frames[0], frames[2])


def test_motion_is_a_pure_translation():
    frames = D.render_clip(spec(direction="left", speed=2), 3, 3, 32, 32)
    for k in (1, 2):
        assert np.array_equal(frames[k], np.roll(frames[0], -2 * k, axis=-1))
    down = D.render_clip(spec(direction="down", speed=3), 3, 3, 32, 32)
    assert np.array_equal(down[1], np.roll(down[0], 3, axis=-2))


def test_rendering_is_deterministic():
    a = D.render_clip(spec(), 3, 3, 32, 32)
    b = D.render_clip(spec(), 3, 3, 32, 32)
    assert np.array_equal(a, b)
    assert a.dtype == np.float32


def test_hard_edges_binary_values():
    frames = D.render_clip(spec(shape="circle", color="yellow"), 3, 3, 32, 32)
    assert set(np.unique(frames)) <= {0.0, 1.0}


def test_color_channels():
    red = D.render_clip(spec(color="red", speed=0), 1, 3, 32, 32)[0]
    assert red[0].max() == 1.0 and red[1].max() == 0.0 and red[2].max() == 0.0
    yellow = D.render_clip(spec(color="yellow", speed=0), 1, 3, 32, 32)[0]
    assert yellow[0].max() == 1.0 and yellow[1].max() == 1.0 and yellow[2].max() == 0.0


def test_shapes_are_distinct():
    masks = {s: D.shape_mask(s, (16, 16), 32, 32) for s in D.SHAPES}
    assert not np.array_equal(masks["square"], masks["circle"])
    assert not np.array_equal(masks["square"], masks["triangle"])
    assert not np.array_equal(masks["circle"], masks["triangle"])
    assert masks["square"].sum() == 11 * 11


def test_first_frame_ambiguous_across_directions():
    first = [
        D.render_clip(spec(direction=d, start=(16, 16), speed=3), 3, 3, 32, 32)[0]
        for d in D.DIRECTIONS
    ]
    for other in first[1:]:
        assert np.array_equal(first[0], other)


def test_trajectory_escape_rejected_with_bound():
    with pytest.raises(SpecRejection) as err:
        D.render_clip(spec(direction="right", speed=3, start=(16, 25)), 3, 3, 32, 32)
    assert "bound" in str(err.value)


# ----------------------------------------------------------------- captions


def test_caption_templates():
    assert D.render_caption(spec()) == "the red square moves left"
    assert D.render_caption(spec(speed=0)) == "the red square stays still"
    assert D.render_caption(spec(color="blue", shape="circle", direction="up")) == "the blue circle moves up"


def test_vocab_is_small_and_fixed():
    vocab = D.build_vocab()
    assert len(vocab) < 40
    assert vocab.tokens[:4] == list(D.SPECIALS)
    assert vocab.id_of("[PAD]") == 0 and vocab.id_of("[MASK]") == 3
    again = D.Vocabulary.from_text(vocab.to_text())
    assert again.tokens == vocab.tokens


def test_vocab_errors():
    with pytest.raises(VocabularyError):
        D.build_vocab().id_of("teleports")
    with pytest.raises(VocabularyError):
        D.Vocabulary(["[PAD]", "[CLS]", "[SEP]", "[MASK]", "a", "a"])
    with pytest.raises(VocabularyError):
        D.Vocabulary(["a", "b", "c", "d"])


def test_tokenize_round_trip():
    vocab = D.build_vocab()
    ids = D.tokenize("the red square moves left", vocab, 16)
    assert ids.shape == (16,)
    assert ids[0] == D.CLS
    assert (ids != D.PAD).sum() == 6
    assert D.detokenize(ids, vocab) == "the red square moves left"


def test_tokenize_empty_and_errors():
    vocab = D.build_vocab()
    empty = D.tokenize("", vocab, 8)
    assert empty[0] == D.CLS and np.all(empty[1:] == D.PAD)
    with pytest.raises(ContractViolation):
        D.tokenize("the " * 16, vocab, 16)
    with pytest.raises(VocabularyError):
        D.tokenize("the red blob moves left", vocab, 16)


# ------------------------------------------------------------------ masking


def test_mask_tokens_edge_probabilities():
    vocab = D.build_vocab()
    ids = D.tokenize("the red square moves left", vocab, 16)
    none_masked, labels, mask = D.mask_tokens(ids, 0.0, SplitMix64(0), force_min_one=False)
    assert not mask.any() and np.all(labels == -1) and np.array_equal(none_masked, ids)
    all_masked, labels, mask = D.mask_tokens(ids, 1.0, SplitMix64(0))
    maskable = ids >= len(D.SPECIALS)
    assert np.array_equal(mask, maskable)
    assert np.all(all_masked[mask] == D.MASK)
    assert np.array_equal(labels[mask], ids[mask])
    # specials untouched
    assert all_masked[0] == D.CLS and np.all(all_masked[~maskable] == ids[~maskable])


def test_mask_rate_band():
    vocab = D.build_vocab()
    ids = D.tokenize("the red square moves left", vocab, 16)
    rng = SplitMix64(123).stream("masking")
    masked = total = 0
    while total < 10_000:
        _, _, mask = D.mask_tokens(ids, 0.15, rng, force_min_one=False)
        masked += mask.sum()
        total += 5
    rate = masked / total
    assert 0.13 <= rate <= 0.17


def test_forced_mask_always_has_one():
    vocab = D.build_vocab()
    ids = D.tokenize("the red square moves left", vocab, 16)
    rng = SplitMix64(7)
    for _ in range(200):
        _, _, mask = D.mask_tokens(ids, 0.05, rng)
        assert mask.any()


def test_mask_force_contract_errors():
    all_special = np.array([D.CLS, D.PAD, D.PAD])
    with pytest.raises(ContractViolation):
        D.mask_tokens(all_special, 0.5, SplitMix64(0))
    ids = D.tokenize("the red square moves left", D.build_vocab(), 16)
    with pytest.raises(ContractViolation):
        D.mask_tokens(ids, 0.0, SplitMix64(0), force_min_one=True)
    with pytest.raises(ContractViolation):
        D.mask_tokens(ids, 1.5, SplitMix64(0))


def test_mask_determinism():
    ids = D.tokenize("the red square moves left", D.build_vocab(), 16)
    a = D.mask_tokens(ids, 0.3, SplitMix64(5))
    b = D.mask_tokens(ids, 0.3, SplitMix64(5))
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


# ---------------------------------------------------------------- vtm pairs


def test_vtm_pair_edges():
    rng = SplitMix64(1)
    for i in range(20):
        clip, label = D.make_vtm_pair(10, i % 10, 0.0, rng)
        assert (clip, label) == (i % 10, 1)
    for _ in range(50):
        clip, label = D.make_vtm_pair(10, 4, 1.0, rng)
        assert label == 0 and clip != 4 and 0 <= clip < 10


def test_vtm_negative_rate_band():
    rng = SplitMix64(9).stream("negatives")
    negatives = sum(
        1 - D.make_vtm_pair(50, i % 50, 0.5, rng)[1] for i in range(10_000)
    )
    assert 0.47 <= negatives / 10_000 <= 0.53


def test_vtm_pair_needs_two_records():
    with pytest.raises(ContractViolation):
        D.make_vtm_pair(1, 0, 0.5, SplitMix64(0))


# --------------------------------------------------------------- generation


def test_generate_corpus_deterministic():
    a, _ = D.generate_corpus(6, seed=42)
    b, _ = D.generate_corpus(6, seed=42)
    for ra, rb in zip(a, b):
        assert np.array_equal(ra.frames, rb.frames)
        assert ra.text == rb.text
    c, _ = D.generate_corpus(6, seed=43)
    assert any(not np.array_equal(ra.frames, rc.frames) for ra, rc in zip(a, c))


def test_record_streams_are_index_stable():
    # record i does not depend on how many records are generated
    few, _ = D.generate_corpus(3, seed=11)
    many, _ = D.generate_corpus(8, seed=11)
    for ra, rb in zip(few, many):
        assert np.array_equal(ra.frames, rb.frames)
        assert ra.text == rb.text


def test_generated_records_match_their_captions():
    records, vocab = D.generate_corpus(30, seed=5)
    for rec in records:
        assert rec.text == f"the {rec.color} {rec.shape} moves {rec.direction}"
        assert 1 <= rec.speed <= 3
        D.tokenize(rec.text, vocab, 16)  # every caption tokenizes


def test_generate_empty_corpus():
    records, vocab = D.generate_corpus(0, seed=0)
    assert records == []
    assert len(vocab) == 19


# ------------------------------------------------------------------ file io


def write_tmp_corpus(tmp_path, count=5, seed=3, dims=(3, 3, 32, 32)):
    S, C, H, W = dims
    records, vocab = D.generate_corpus(count, S=S, C=C, H=H, W=W, seed=seed)
    D.write_corpus(tmp_path, records, vocab, S, C, H, W)
    return records, vocab


def test_corpus_round_trip_bitwise(tmp_path):
    records, vocab = write_tmp_corpus(tmp_path)
    loaded = D.read_corpus(tmp_path)
    assert len(loaded) == len(records)
    assert loaded.vocab.tokens == vocab.tokens
    for orig, back in zip(records, loaded.records):
        assert np.array_equal(orig.frames, back.frames)
        assert back.frames.dtype == np.float32
        assert (orig.text, orig.shape, orig.color, orig.direction, orig.speed) == (
            back.text,
            back.shape,
            back.color,
            back.direction,
            back.speed,
        )


def test_corpus_file_size_arithmetic(tmp_path):
    count, dims = 5, (3, 3, 32, 32)
    write_tmp_corpus(tmp_path, count=count, dims=dims)
    S, C, H, W = dims
    expected = count * (24 + S * C * H * W * 4)
    assert (tmp_path / "clips.bin").stat().st_size == expected


def test_empty_corpus_round_trip(tmp_path):
    write_tmp_corpus(tmp_path, count=0)
    loaded = D.read_corpus(tmp_path)
    assert len(loaded) == 0
    assert (tmp_path / "clips.bin").stat().st_size == 0


def test_version_mismatch_detected(tmp_path):
    write_tmp_corpus(tmp_path)
    manifest = (tmp_path / "manifest").read_text().replace("version = 1", "version = 2")
    (tmp_path / "manifest").write_text(manifest)
    with pytest.raises(CorpusVersionMismatch):
        D.read_corpus(tmp_path)


def test_truncated_clips_detected(tmp_path):
    write_tmp_corpus(tmp_path)
    blob = (tmp_path / "clips.bin").read_bytes()
    (tmp_path / "clips.bin").write_bytes(blob[:-100])
    with pytest.raises(CorpusTruncated):
        D.read_corpus(tmp_path)


def test_trailing_garbage_detected(tmp_path):
    write_tmp_corpus(tmp_path)
    with open(tmp_path / "clips.bin", "ab") as f:
        f.write(b"junk")
    with pytest.raises(CorpusTruncated):
        D.read_corpus(tmp_path)


def test_dim_mismatch_detected(tmp_path):
    write_tmp_corpus(tmp_path)
    blob = bytearray((tmp_path / "clips.bin").read_bytes())
    # corrupt H in the first record header (offset: magic 4 + version 4 + S 4 + C 4)
    blob[16:20] = (64).to_bytes(4, "little")
    (tmp_path / "clips.bin").write_bytes(bytes(blob))
    with pytest.raises(CorpusDimMismatch):
        D.read_corpus(tmp_path)


def test_vocab_hash_mismatch_detected(tmp_path):
    write_tmp_corpus(tmp_path)
    vocab_text = (tmp_path / "vocab.txt").read_text()
    (tmp_path / "vocab.txt").write_text(vocab_text.replace("left", "lefty"))
    with pytest.raises(CorpusError):
        D.read_corpus(tmp_path)
