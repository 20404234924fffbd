"""The proofreading service, exercised in-process: upload a piece, select
bars, iterate with a human edit, accept, export.

Run after the test suite has cached desk models:
python demos/07_service_walkthrough.py
"""

from pathlib import Path

import numpy as np
from fastapi.testclient import TestClient

from refinpaint import generate_toy_corpus, parse_smf, write_smf
from refinpaint.config import EngineSettings, ServiceConfig
from refinpaint.service import create_app

caches = sorted(Path(".cache").glob("desk_*"))
if not caches:
    raise SystemExit("run the test suite first to train desk models")
cache = caches[0]

config = ServiceConfig(
    inpainter=str(cache / "inpainter" / "inpainter.ckpt"),
    feedback=str(cache / "feedback" / "feedback.ckpt"),
    engine=EngineSettings(iterations=10, temperature=1.0, top_p=0.95),
    state_dir="runs/demo_sessions",
)
client = TestClient(create_app(config))

piece = generate_toy_corpus(1, np.random.default_rng(21))[0]
created = client.post(
    "/v1/sessions", files={"file": ("piece.mid", write_smf(piece), "audio/midi")}
).json()
sid = created["session_id"]
print(f"session {sid[:8]}…, {created['n_bars']} bars uploaded")

fragment = client.post(f"/v1/sessions/{sid}/fragment",
                       json={"bar_from": 2, "bar_to": 3}).json()
print(f"selected bars 2..3 -> {fragment['n_tokens']} tokens")

first = client.post(f"/v1/sessions/{sid}/iterate", json={}).json()
print(f"iteration 0: feedback score {first['gfs']:.3f}, "
      f"{sum(1 for n in first['notes'] if n['changed'])} notes changed")

# Pin the least-believed token and iterate again.
target = first["next_regenerate"][0]
second = client.post(
    f"/v1/sessions/{sid}/iterate",
    json={"edits": [{"kind": "force_keep", "pos": target}]},
).json()
print(f"iteration 1 (with one force_keep): feedback score {second['gfs']:.3f}")

third = client.post(f"/v1/sessions/{sid}/iterate", json={"keep_count": fragment["n_tokens"] - 8}).json()
print(f"iteration 2 (keep all but 8): feedback score {third['gfs']:.3f}")

best = max(range(3), key=lambda i: [first, second, third][i]["gfs"])
client.post(f"/v1/sessions/{sid}/accept", json={"iteration_index": best})
exported = client.get(f"/v1/sessions/{sid}/export")
Path("runs/demo_export.mid").write_bytes(exported.content)
score = parse_smf(exported.content)
print(f"accepted iteration {best}; exported {len(score.notes)} notes "
      f"to runs/demo_export.mid")
