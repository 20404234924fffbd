"""MIDI bytes <-> Score <-> REMI tokens, round trips included.

Run: python demos/01_midi_and_tokens.py
"""

from refinpaint import NoteEvent, Score, parse_smf, write_smf, encode, decode, transpose

# A C-major arpeggio: one bar at 480 ticks per quarter.
score = Score(
    ppq=480,
    notes=[
        NoteEvent(60, 0, 480),
        NoteEvent(64, 480, 480),
        NoteEvent(67, 960, 480),
        NoteEvent(72, 1440, 480),
    ],
)

raw = write_smf(score)
print(f"wrote {len(raw)} bytes of standard MIDI, header {raw[:4]!r}")

back = parse_smf(raw)
print("round trip preserved notes:", back.notes == score.notes)

seq = encode(score)
print("\nREMI tokens:")
print(seq.dump_lines())

rebuilt = decode(seq)
print("decode(encode(score)) has", len(rebuilt.notes), "notes at ppq", rebuilt.ppq)

up, skipped = transpose(seq, 6)
print("\ntransposed up a tritone:", " ".join(str(t) for t in up.tokens[:6]), "...")

too_high = encode(Score(ppq=480, notes=[NoteEvent(108, 0, 480)]))
same, skipped = transpose(too_high, 1)
print("transposing Pitch(108) up is skipped:", skipped)
