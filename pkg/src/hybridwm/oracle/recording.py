"""Record every raw response of another oracle so a run can be replayed offline."""

from __future__ import annotations

import json
import os

from ..doc import normalize
from .base import KnowledgeOracle, OracleRequest
from .scripted import ScriptedOracle


class RecordingOracle(KnowledgeOracle):
    def __init__(self, inner: KnowledgeOracle):
        super().__init__()
        self.inner = inner
        self.responses: dict[str, dict] = {}
        self.requests: dict[str, dict] = {}

    def respond(self, request: OracleRequest) -> dict:
        out = self.inner.respond(request)
        self.responses[request.key] = out
        self.requests[request.key] = {"kind": request.kind, "payload": request.payload}
        return out

    def fixture(self) -> dict:
        return {"strict": True, "responses": normalize(self.responses), "requests": normalize(self.requests)}

    def save(self, path: str | os.PathLike, merge: bool = False) -> None:
        """Write the fixture; with ``merge`` keep entries already in ``path``."""
        fixture = self.fixture()
        if merge and os.path.exists(path):
            with open(path, encoding="utf-8") as fh:
                old = json.load(fh)
            for part in ("responses", "requests"):
                fixture[part] = {**old.get(part, {}), **fixture[part]}
        tmp = f"{path}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(fixture, fh, sort_keys=True, indent=1)
        os.replace(tmp, path)


def replay(path: str | os.PathLike) -> ScriptedOracle:
    """Strict oracle answering only recorded requests."""
    return ScriptedOracle.load(path, strict=True)
