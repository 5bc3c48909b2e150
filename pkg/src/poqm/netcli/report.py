"""Experiment reports with stable JSON and CSV emission."""

from __future__ import annotations

import csv
import io
import json
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

from .. import __version__
from ..games import Estimate


def provenance() -> str:
    """``poqm <version>`` plus the git revision of the source tree when available."""
    here = Path(__file__).resolve().parent
    try:
        rev = subprocess.run(
            ["git", "describe", "--always", "--dirty"], cwd=here, capture_output=True, text=True, timeout=5
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"poqm {__version__}" + (f" ({rev})" if rev else "")


def _plain(value):
    if isinstance(value, Estimate):
        return value.to_dict()
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if hasattr(value, "item"):
        return value.item()
    return value


@dataclass
class Report:
    experiment: str
    params: dict = field(default_factory=dict)
    seed: object = None
    estimates: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)
    gates: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    rows: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)
    provenance: str = field(default_factory=provenance)

    @property
    def passed(self) -> bool:
        return all(self.gates.values())

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "provenance": self.provenance,
            "seed": self.seed,
            "params": _plain(self.params),
            "estimates": _plain(self.estimates),
            "bounds": _plain(self.bounds),
            "gates": _plain(self.gates),
            "passed": self.passed,
            "timings": _plain(self.timings),
            "rows": _plain(self.rows),
            "notes": _plain(self.notes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> Report:
        return cls(
            d["experiment"], d.get("params", {}), d.get("seed"), d.get("estimates", {}), d.get("bounds", {}),
            d.get("gates", {}), d.get("timings", {}), d.get("rows", []), d.get("notes", {}), d.get("provenance", ""),
        )


def _flatten(prefix, value, out):
    if isinstance(value, dict):
        for k, v in value.items():
            _flatten(f"{prefix}.{k}" if prefix else str(k), v, out)
    elif isinstance(value, list):
        out[prefix] = json.dumps(value, separators=(",", ":"))
    else:
        out[prefix] = value


def report_emit(report: Report, fmt: str = "json") -> bytes:
    """Serialise a report. Field order is fixed, so re-emission is byte-identical."""
    d = report.to_dict()
    if fmt == "json":
        return (json.dumps(d, indent=2) + "\n").encode()
    if fmt != "csv":
        raise ValueError("format must be 'json' or 'csv'")
    buf = io.StringIO()
    if d["rows"]:
        header = list(d["rows"][0])
        w = csv.DictWriter(buf, fieldnames=header, lineterminator="\n")
        w.writeheader()
        for r in d["rows"]:
            w.writerow(r)
    else:
        flat: dict = {}
        _flatten("", {k: v for k, v in d.items() if k != "rows"}, flat)
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(flat.keys())
        w.writerow(flat.values())
    return buf.getvalue().encode()
