"""Objective evaluation: the masking-ratio sweep and the single-pass vs
refined comparison, on a handful of held-out pieces.

Run after the test suite has cached desk models (or let demo 05 train some):
python demos/06_evaluate.py
"""

from pathlib import Path

import numpy as np

from refinpaint import encode, generate_toy_corpus
from refinpaint.evaluation import (
    compare_single_pass_vs_refinpaint,
    masking_ratio_sweep,
    render_comparison_table,
    render_sweep_table,
)
from refinpaint.models import load_checkpoint

caches = sorted(Path(".cache").glob("desk_*"))
if not caches:
    raise SystemExit("run the test suite (or demo 05) first to train desk models")
cache = caches[0]
inpainter = load_checkpoint((cache / "inpainter" / "inpainter.ckpt").read_bytes())
feedback = load_checkpoint((cache / "feedback" / "feedback.ckpt").read_bytes())
evaluator = load_checkpoint((cache / "evaluator" / "evaluator.ckpt").read_bytes())

rng = np.random.default_rng(3)
held_out = [np.asarray(encode(p).to_ids(), dtype=np.int64)
            for p in generate_toy_corpus(12, rng)]

print("masked NLL as the hidden share of a 30% fragment grows:")
rows = masking_ratio_sweep(inpainter, held_out, (0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 1.0),
                           n_instances=24, seed=0)
print(render_sweep_table(rows))

print("\nsingle pass vs 10 refine iterations (best feedback score wins):")
rows, _ = compare_single_pass_vs_refinpaint(
    inpainter, feedback, evaluator, held_out,
    fragment_pcts=(0.3,), n_instances=12, iterations=10, seed=1,
)
print(render_comparison_table(rows))
