"""The iterative refine loop on one fragment: generate, critique, keep the
believable tokens, regenerate the rest, and pick the best-scored iteration.

Uses the cached desk-scale models when the test suite has built them
(.cache/desk_*), otherwise quickly trains a small pair first.

Run: python demos/05_refine_loop.py
"""

from pathlib import Path

import numpy as np

from refinpaint import EngineConfig, refinpaint, encode, generate_toy_corpus
from refinpaint.corpus import sample_fragment, sample_window_ids
from refinpaint.engine import schedule_masked_count, write_trace
from refinpaint.models import load_checkpoint


def find_or_train_models():
    for cache in sorted(Path(".cache").glob("desk_*")):
        inp = cache / "inpainter" / "inpainter.ckpt"
        fb = cache / "feedback" / "feedback.ckpt"
        if inp.exists() and fb.exists():
            print(f"using cached desk models from {cache}")
            return (load_checkpoint(inp.read_bytes(), "inpainter"),
                    load_checkpoint(fb.read_bytes(), "feedback"))
    print("no cached models; training a small pair (a few minutes) ...")
    from refinpaint import TrainConfig, train_feedback, train_inpainter, write_smf
    from refinpaint.corpus import TRAIN, VAL, TEST, split_by_hash

    rng = np.random.default_rng(5)
    splits = {TRAIN: [], VAL: [], TEST: []}
    for piece in generate_toy_corpus(400, rng):
        splits[split_by_hash(write_smf(piece))].append(
            np.asarray(encode(piece).to_ids(), dtype=np.int64))
    cfg = TrainConfig(steps=500, warmup=80, window_len=192, eval_every=250, patience=None)
    rep = train_inpainter(splits, cfg, out_dir="runs/demo_refine/inpainter")
    train_feedback(splits, rep.checkpoint_path, cfg, out_dir="runs/demo_refine/feedback")
    return (load_checkpoint(Path(rep.checkpoint_path).read_bytes(), "inpainter"),
            load_checkpoint(Path("runs/demo_refine/feedback/feedback.ckpt").read_bytes(),
                            "feedback"))


inpainter, feedback = find_or_train_models()
length = inpainter.config.max_len

rng = np.random.default_rng(42)
piece = generate_toy_corpus(1, rng)[0]
window = sample_window_ids(np.asarray(encode(piece).to_ids()), length, rng)
m_u = sample_fragment(length, 0.3, rng)
n = int(m_u.sum())
print(f"\nfragment: {n} of {length} tokens")
print("regeneration schedule:",
      [schedule_masked_count(i, 10, n) for i in range(10)])

config = EngineConfig(iterations=10, temperature=1.0, top_p=0.95, seed=1)
records, selected = refinpaint(window, m_u, inpainter, feedback, config)

print("\niter  regenerated  feedback score")
for r in records:
    marker = "  <- selected" if r.index == selected else ""
    print(f"{r.index:4d}  {r.regen_count:11d}  {r.gfs:.4f}{marker}")

write_trace("runs/refine_trace.json", records, selected, config, m_u)
print("\ntrace written to runs/refine_trace.json")
