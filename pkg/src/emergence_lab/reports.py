"""CSV and JSON writers with a fixed, byte-stable format."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FLOAT_FORMAT = "{:.17g}"


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return FLOAT_FORMAT.format(float(value))
    return str(value)


def write_csv(path, header, rows):
    """One header line, comma separated, floats with 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(fmt(v) for v in row) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        # JSON has no inf/nan
        return v if np.isfinite(v) else str(v)
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(canonical_json(obj))
    return path


def config_hash(config: dict) -> str:
    blob = json.dumps(_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class Check:
    name: str
    value: object
    tolerance: object
    passed: bool
    guard: bool = True
    note: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        tol = "" if self.tolerance is None else f" (tolerance {_jsonable(self.tolerance)})"
        return f"{status} {self.name}: {_jsonable(self.value)}{tol}{' ' + self.note if self.note else ''}"


@dataclass
class RunSummary:
    command: str
    config_hash: str
    checks: list = field(default_factory=list)
    results: dict = field(default_factory=dict)

    def add(self, name, value, tolerance, passed, guard=True, note="") -> Check:
        check = Check(name, value, tolerance, bool(passed), guard, note)
        self.checks.append(check)
        return check

    @property
    def failed_guards(self):
        return [c for c in self.checks if c.guard and not c.passed]

    def as_dict(self) -> dict:
        return {
            "command": self.command,
            "config_hash": self.config_hash,
            "checks": [
                {"name": c.name, "value": c.value, "tolerance": c.tolerance, "passed": c.passed,
                 "guard": c.guard, "note": c.note}
                for c in self.checks
            ],
            "results": self.results,
        }

    def text(self) -> str:
        return "\n".join([f"{self.command} [{self.config_hash[:12]}]"] + [c.line() for c in self.checks]) + "\n"

    def write(self, out_dir):
        out_dir = Path(out_dir)
        write_json(out_dir / "summary.json", self.as_dict())
        (out_dir / "summary.txt").write_text(self.text())
