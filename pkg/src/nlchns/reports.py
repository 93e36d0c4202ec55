"""Pass/fail report tree shared by every assumption and property check."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, np.bool_):
        return bool(value)
    return value


@dataclass
class CheckReport:
    name: str
    passed: bool
    details: dict[str, Any] = field(default_factory=dict)
    children: list["CheckReport"] = field(default_factory=list)
    message: str = ""

    @classmethod
    def group(cls, name: str, children: list["CheckReport"], **details) -> "CheckReport":
        return cls(name, all(c.passed for c in children), details, list(children))

    def find(self, name: str) -> "CheckReport | None":
        if self.name == name:
            return self
        for child in self.children:
            hit = child.find(name)
            if hit is not None:
                return hit
        return None

    def failures(self) -> list[str]:
        out = []
        if not self.passed and not self.children:
            out.append(self.name)
        for child in self.children:
            out.extend(f"{self.name}/{f}" for f in child.failures())
        return out

    def to_dict(self) -> dict:
        d = {"name": self.name, "passed": bool(self.passed)}
        if self.message:
            d["message"] = self.message
        if self.details:
            d["details"] = _plain(self.details)
        if self.children:
            d["children"] = [c.to_dict() for c in self.children]
        return d
