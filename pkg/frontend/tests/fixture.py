"""Build service fixtures for the frontend e2e test.

Usage: python3 tests/fixture.py OUT_DIR
Writes inpainter/feedback checkpoints (reusing the python test suite's
cached desk models when available), a service config and a toy MIDI file.
"""

import json
import shutil
import sys
from pathlib import Path

import numpy as np

from refinpaint.corpus import generate_toy_corpus
from refinpaint.midi import write_smf
from refinpaint.models import FeedbackModel, InpaintingModel, ModelConfig, save_checkpoint

out = Path(sys.argv[1])
out.mkdir(parents=True, exist_ok=True)

cached = sorted(Path(__file__).resolve().parents[2].glob(".cache/desk_*"))
inp_path = out / "inpainter.ckpt"
fb_path = out / "feedback.ckpt"
if cached and (cached[0] / "inpainter" / "inpainter.ckpt").exists() and (
    cached[0] / "feedback" / "feedback.ckpt"
).exists():
    shutil.copy(cached[0] / "inpainter" / "inpainter.ckpt", inp_path)
    shutil.copy(cached[0] / "feedback" / "feedback.ckpt", fb_path)
else:
    cfg = ModelConfig(d_model=32, n_heads=2, n_enc_layers=1, n_dec_layers=1,
                      max_len=128, dropout_p=0.0)
    fb_cfg = ModelConfig(d_model=32, n_heads=2, n_enc_layers=1, n_dec_layers=0,
                         max_len=128, dropout_p=0.0)
    inp_path.write_bytes(save_checkpoint(InpaintingModel(cfg, seed=0)))
    fb_path.write_bytes(save_checkpoint(FeedbackModel(fb_cfg, seed=1)))

(out / "config.json").write_text(json.dumps({
    "checkpoints": {"inpainter": str(inp_path), "feedback": str(fb_path)},
    "engine": {"T": 10, "temperature": 1.0, "top_p": 1.0},
    "server": {"state_dir": str(out / "state")},
}))

piece = generate_toy_corpus(1, np.random.default_rng(123))[0]
(out / "piece.mid").write_bytes(write_smf(piece))
print(out)
