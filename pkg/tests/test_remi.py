"""Tokenizer: grammar, round trips against an independent quantizer oracle,
transposition, vocabulary layout."""

import json

import numpy as np
import pytest

from refinpaint.midi import NoteEvent, Score
from refinpaint.remi import (
    BAR,
    PAD,
    VOCAB,
    EncodeStats,
    GrammarViolation,
    Token,
    TokenKind,
    TokenSeq,
    decode,
    encode,
    first_grammar_violation,
    is_grammatical,
    note_spans,
    parse_token,
    transpose,
    transpose_ids,
)


def tok(kind, value=None):
    return Token(TokenKind(kind), value)


def test_vocab_size_is_exactly_189():
    assert len(VOCAB) == 189
    assert VOCAB.id_of(PAD) == 0
    assert VOCAB.id_of(tok("Mask")) == 1
    assert VOCAB.id_of(tok("Bos")) == 2
    assert VOCAB.id_of(tok("Eos")) == 3


def test_vocab_manifest_round_trip_and_checksum_stability():
    manifest = VOCAB.manifest()
    assert manifest["version"] == 1
    assert len(manifest["entries"]) == 189
    assert manifest["entries"][0] == {"id": 0, "kind": "Pad", "value": None}
    blob = json.dumps(manifest, sort_keys=True)
    assert json.loads(blob) == manifest
    assert VOCAB.checksum() == VOCAB.checksum()


def test_encode_single_note():
    score = Score(ppq=480, notes=[NoteEvent(60, 0, 480)])
    seq = encode(score)
    assert [str(t) for t in seq] == ["Bar", "Position(0)", "Pitch(60)", "Duration(8)"]


def test_encode_empty_score():
    assert len(encode(Score(ppq=480))) == 0


def test_encode_chord_sorted_by_pitch():
    score = Score(ppq=480, notes=[NoteEvent(64, 0, 480), NoteEvent(60, 0, 480)])
    assert [str(t) for t in encode(score)] == [
        "Bar", "Position(0)", "Pitch(60)", "Duration(8)", "Pitch(64)", "Duration(8)",
    ]


def test_encode_emits_empty_bars_between_notes():
    # A note in bar 0 and one in bar 2: bar 1 still gets its Bar token.
    score = Score(ppq=480, notes=[NoteEvent(60, 0, 480), NoteEvent(62, 2 * 4 * 480, 480)])
    kinds = [t.kind for t in encode(score)]
    assert kinds.count(TokenKind.BAR) == 3


def test_encode_drops_out_of_range_pitches_counted():
    score = Score(ppq=480, notes=[NoteEvent(5, 0, 480), NoteEvent(60, 0, 480)])
    stats = EncodeStats()
    seq = encode(score, stats)
    assert stats.dropped_pitches == 1
    assert [str(t) for t in seq] == ["Bar", "Position(0)", "Pitch(60)", "Duration(8)"]


def test_encode_merges_quantized_duplicates_keeping_longer():
    score = Score(ppq=480, notes=[NoteEvent(60, 0, 120), NoteEvent(60, 2, 480)])
    stats = EncodeStats()
    seq = encode(score, stats)
    assert stats.merged_duplicates == 1
    assert [str(t) for t in seq] == ["Bar", "Position(0)", "Pitch(60)", "Duration(8)"]


def test_encode_zero_duration_after_quantization_gets_one():
    score = Score(ppq=480, notes=[NoteEvent(60, 0, 10)])
    assert [str(t) for t in encode(score)] == ["Bar", "Position(0)", "Pitch(60)", "Duration(1)"]


def test_decode_single_note():
    seq = TokenSeq([BAR, tok("Position", 0), tok("Pitch", 60), tok("Duration", 8)])
    score = decode(seq)
    assert score.ppq == 480
    assert score.notes == [NoteEvent(60, 0, 480)]


def test_decode_empty():
    assert decode(TokenSeq([])).notes == []


def test_decode_position_before_bar_is_grammar_violation():
    seq = TokenSeq([tok("Position", 0), tok("Pitch", 60), tok("Duration", 8)])
    with pytest.raises(GrammarViolation) as err:
        decode(seq)
    assert err.value.index == 0


def test_grammar_rules():
    ok = TokenSeq([BAR, tok("Position", 3), tok("Pitch", 70), tok("Duration", 2), PAD, PAD])
    assert is_grammatical(ok)
    assert first_grammar_violation(TokenSeq([BAR, tok("Pitch", 70), tok("Duration", 2)])) == (
        1, "Pitch with no current Position",
    )
    assert first_grammar_violation(TokenSeq([BAR, tok("Position", 0), tok("Duration", 2)]))[0] == 2
    assert first_grammar_violation(TokenSeq([PAD, BAR]))[0] == 1  # content after Pad
    assert first_grammar_violation(TokenSeq([BAR, tok("Position", 0), tok("Pitch", 60)]))[1] == (
        "Pitch at end with no Duration"
    )
    assert first_grammar_violation(TokenSeq([tok("Mask")]))[1] == "Mask inside content"


def test_lenient_decode_recovers():
    seq = TokenSeq([tok("Position", 0), tok("Pitch", 60), tok("Duration", 8), tok("Pitch", 70)])
    score = decode(seq, strict=False)
    assert score.notes == [NoteEvent(60, 0, 480)]


def independent_quantize(score):
    """Oracle: the quantization rules, coded straight from their statement."""
    unit = score.ppq / 8.0
    out = {}
    for n in score.notes:
        if not 21 <= n.pitch <= 108:
            continue
        pos = round(n.onset / unit)
        dur = min(max(round(n.duration / unit), 1), 64)
        key = (pos, n.pitch)
        out[key] = max(out.get(key, 0), dur)
    return sorted((pos * 60, pitch, dur * 60) for (pos, pitch), dur in out.items())


def random_score(rng):
    notes = []
    for _ in range(int(rng.integers(0, 60))):
        notes.append(
            NoteEvent(
                int(rng.integers(15, 115)),
                int(rng.integers(0, 8 * 4 * 480)),
                int(rng.integers(1, 3000)),
            )
        )
    return Score(ppq=int(rng.choice([96, 240, 480, 960])), notes=notes)


def test_decode_encode_equals_independent_quantizer_on_300_scores():
    rng = np.random.default_rng(123)
    for _ in range(300):
        score = random_score(rng)
        got = decode(encode(score))
        assert sorted((n.onset, n.pitch, n.duration) for n in got.notes) == independent_quantize(score)


def test_encode_output_always_grammatical():
    rng = np.random.default_rng(321)
    for _ in range(1000):
        seq = encode(random_score(rng))
        assert first_grammar_violation(seq) is None


def test_transpose_shifts_pitches_only():
    seq = encode(Score(ppq=480, notes=[NoteEvent(60, 0, 480)]))
    shifted, skipped = transpose(seq, 6)
    assert not skipped
    assert [str(t) for t in shifted] == ["Bar", "Position(0)", "Pitch(66)", "Duration(8)"]


def test_transpose_zero_is_identity():
    seq = encode(Score(ppq=480, notes=[NoteEvent(60, 0, 480)]))
    same, skipped = transpose(seq, 0)
    assert same == seq and not skipped


def test_transpose_out_of_range_skips():
    seq = encode(Score(ppq=480, notes=[NoteEvent(108, 0, 480)]))
    same, skipped = transpose(seq, 1)
    assert skipped and same == seq


def test_transpose_inverse_property():
    rng = np.random.default_rng(11)
    for _ in range(50):
        seq = encode(random_score(rng))
        k = int(rng.integers(-6, 7))
        fwd, skipped_f = transpose(seq, k)
        if skipped_f:
            continue
        back, skipped_b = transpose(fwd, -k)
        assert not skipped_b and back == seq


def test_transpose_rejects_out_of_domain_shift():
    with pytest.raises(ValueError):
        transpose(TokenSeq([]), 7)
    with pytest.raises(ValueError):
        transpose_ids(np.array([0]), -7)


def test_token_dump_and_parse_lines():
    seq = encode(Score(ppq=480, notes=[NoteEvent(60, 0, 480)]))
    text = seq.dump_lines()
    assert text == "Bar\nPosition(0)\nPitch(60)\nDuration(8)\n"
    assert TokenSeq.from_lines(text) == seq
    assert parse_token("Mask") == tok("Mask")
    with pytest.raises(ValueError):
        parse_token("Pitch(200)")
    with pytest.raises(ValueError):
        parse_token("what?")


def test_ids_round_trip():
    seq = encode(Score(ppq=480, notes=[NoteEvent(72, 480, 240)]))
    assert TokenSeq.from_ids(seq.to_ids()) == seq


def test_note_spans_coordinates():
    score = Score(ppq=480, notes=[NoteEvent(60, 0, 480), NoteEvent(64, 480, 240)])
    seq = encode(score)
    spans = note_spans(seq)
    assert [(s.pitch, s.onset, s.duration, s.bar) for s in spans] == [
        (60, 0, 480, 0), (64, 480, 240, 0),
    ]
    for s in spans:
        assert seq[s.pitch_index].value == s.pitch
        assert seq[s.duration_index].kind is TokenKind.DURATION
