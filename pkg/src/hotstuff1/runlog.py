"""Line-delimited run logs.

The first line is a header holding the run configuration; every following
line is one event: time, kind, actor, payload digest and the payload itself.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Iterator, Optional


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class RunLog:
    def __init__(self, header: Optional[dict] = None):
        self.header = header or {}
        self.records: list[tuple] = []  # (t, kind, actor, data)

    def add(self, t: float, kind: str, actor: int, data: dict) -> None:
        self.records.append((t, kind, actor, data))

    def __len__(self) -> int:
        return len(self.records)

    def of_kind(self, *kinds: str) -> Iterator[tuple]:
        ks = set(kinds)
        for r in self.records:
            if r[1] in ks:
                yield r

    def lines(self) -> Iterator[str]:
        yield _dumps({"kind": "header", **self.header})
        for t, kind, actor, data in self.records:
            payload = _dumps(data)
            digest = hashlib.sha256(payload.encode()).hexdigest()[:16]
            yield _dumps({"t": t, "kind": kind, "actor": actor, "digest": digest, "data": data})

    def to_bytes(self) -> bytes:
        return ("\n".join(self.lines()) + "\n").encode()

    def digest(self) -> str:
        h = hashlib.sha256()
        for line in self.lines():
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(self.to_bytes())
        return path

    @classmethod
    def load(cls, path) -> "RunLog":
        lines = Path(path).read_text().splitlines()
        if not lines:
            raise ValueError(f"empty run log {path}")
        head = json.loads(lines[0])
        head.pop("kind", None)
        log = cls(head)
        for line in lines[1:]:
            if not line.strip():
                continue
            rec = json.loads(line)
            log.records.append((rec["t"], rec["kind"], rec["actor"], rec["data"]))
        return log

    def normalized(self) -> "RunLog":
        """Round-trip through JSON so in-memory and loaded logs compare equal."""
        out = RunLog(json.loads(_dumps(self.header)))
        for t, kind, actor, data in self.records:
            out.records.append((t, kind, actor, json.loads(_dumps(data))))
        return out
