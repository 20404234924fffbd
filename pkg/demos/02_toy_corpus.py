"""The procedural toy corpus: structure, statistics, hash-based splits.

Run: python demos/02_toy_corpus.py
"""

import numpy as np

from refinpaint import encode, generate_toy_corpus, split_by_hash, write_smf
from refinpaint.corpus import gamma

rng = np.random.default_rng(7)
pieces = generate_toy_corpus(200, rng)

lengths = [len(encode(p)) for p in pieces]
print(f"200 pieces: {np.mean(lengths):.0f} tokens on average "
      f"(min {min(lengths)}, max {max(lengths)})")

# Every piece loops a 4-bar phrase, so bar k repeats bar k-4 exactly.
piece = pieces[0]
bar_ticks = 4 * 480
def bar_notes(score, b):
    return sorted((n.pitch, n.onset - b * bar_ticks, n.duration)
                  for n in score.notes if b * bar_ticks <= n.onset < (b + 1) * bar_ticks)
print("bar 4 repeats bar 0 exactly:", bar_notes(piece, 4) == bar_notes(piece, 0))

splits = {"train": 0, "val": 0, "test": 0}
for p in pieces:
    splits[split_by_hash(write_smf(p))] += 1
print("hash split (leading md5 digit, 0-d / e / f):", splits)

print("\ncosine masking schedule gamma(t) = cos(pi t / 2):")
for t in (0.0, 0.25, 0.5, 0.75, 1.0):
    print(f"  gamma({t:.2f}) = {gamma(t):.4f}")
