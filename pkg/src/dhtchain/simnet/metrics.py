"""Metric records: one ``name=value`` line each, then a JSON summary line."""

from __future__ import annotations

import json
from typing import Any


class Metrics:
    def __init__(self):
        self.values: dict[str, Any] = {}

    def add(self, name: str, value: Any) -> None:
        if name in self.values:
            raise KeyError(f"metric {name} already recorded")
        self.values[name] = value

    def __getitem__(self, name: str) -> Any:
        return self.values[name]

    def lines(self) -> list[str]:
        out = [f"{k}={_fmt(v)}" for k, v in self.values.items()]
        out.append("summary=" + json.dumps(self.values, separators=(",", ":")))
        return out

    def text(self) -> str:
        return "\n".join(self.lines()) + "\n"


def _fmt(v: Any) -> str:
    if isinstance(v, list):
        return ",".join(_fmt(x) for x in v)
    if isinstance(v, float):
        return repr(round(v, 6))
    return str(v)


def parse_metrics(text: str) -> dict[str, Any]:
    """Read back the summary line of a metrics file."""
    for line in text.splitlines():
        if line.startswith("summary="):
            return json.loads(line[len("summary="):])
    raise ValueError("no summary line")
