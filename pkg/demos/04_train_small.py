"""Train a small inpainting model for a couple of minutes and watch the
masked-token loss fall from the uniform baseline.

Run: python demos/04_train_small.py
"""

import numpy as np

from refinpaint import TrainConfig, generate_toy_corpus, encode, write_smf, train_inpainter
from refinpaint.corpus import TRAIN, VAL, TEST, split_by_hash
from refinpaint.models import ModelConfig

rng = np.random.default_rng(11)
splits = {TRAIN: [], VAL: [], TEST: []}
for piece in generate_toy_corpus(300, rng):
    ids = np.asarray(encode(piece).to_ids(), dtype=np.int64)
    splits[split_by_hash(write_smf(piece))].append(ids)
print({k: len(v) for k, v in splits.items()}, "pieces")

config = TrainConfig(steps=300, warmup=50, batch_size=8, window_len=128,
                     eval_every=100, patience=None, seed=0)
model_config = ModelConfig(d_model=48, n_heads=4, n_enc_layers=2, n_dec_layers=2,
                           max_len=128)
report = train_inpainter(splits, config, model_config, out_dir="runs/demo_inpainter")

losses = np.array(report.losses)
print(f"\nuniform baseline ln(189) = {np.log(189):.3f}")
for lo in range(0, len(losses), 60):
    print(f"steps {lo:3d}-{lo + 60:3d}: mean loss {losses[lo:lo + 60].mean():.3f}")
print(f"held-out masked NLL: {report.val_metrics['val_masked_nll']:.3f}")
print(f"checkpoint: {report.checkpoint_path}")
