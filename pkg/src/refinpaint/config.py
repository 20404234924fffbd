"""Service / CLI configuration file: TOML or JSON."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

try:
    import tomllib  # py311+
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib


@dataclass
class EngineSettings:
    iterations: int = 10
    temperature: float = 1.0
    top_p: float = 1.0


@dataclass
class ServiceConfig:
    inpainter: str = "runs/inpainter/inpainter.ckpt"
    feedback: str = "runs/feedback/feedback.ckpt"
    evaluator: str | None = None
    engine: EngineSettings = field(default_factory=EngineSettings)
    port: int = 8000
    state_dir: str = "sessions"


def load_config(path: Path) -> ServiceConfig:
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix == ".toml":
        doc = tomllib.loads(raw.decode())
    else:
        doc = json.loads(raw)
    checkpoints = doc.get("checkpoints", {})
    engine = doc.get("engine", {})
    server = doc.get("server", {})
    return ServiceConfig(
        inpainter=checkpoints.get("inpainter", ServiceConfig.inpainter),
        feedback=checkpoints.get("feedback", ServiceConfig.feedback),
        evaluator=checkpoints.get("evaluator"),
        engine=EngineSettings(
            iterations=engine.get("T", engine.get("iterations", 10)),
            temperature=engine.get("temperature", 1.0),
            top_p=engine.get("top_p", 1.0),
        ),
        port=server.get("port", 8000),
        state_dir=server.get("state_dir", "sessions"),
    )
