"""Deterministic CSV/JSON/binary artifacts and the run manifest."""

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__


def format_value(x):
    """Shortest round-trip text for numbers; other values via ``str``."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        v = float(x)
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    if x is None:
        return ""
    return str(x)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        if math.isfinite(v):
            return v
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(x, complex):
        return [x.real, x.imag]
    if x is None or isinstance(x, str):
        return x
    return str(x)


def write_json(path, doc):
    text = json.dumps(_jsonable(doc), sort_keys=True, indent=2, allow_nan=False)
    Path(path).write_text(text + "\n")


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_value(v) for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def write_field(path, values):
    """Little-endian float64, row-major, with a ``<name>.json`` shape sidecar."""
    values = np.asarray(values, dtype="<f8")
    path = Path(path)
    values.tofile(path)
    side = path.with_name(path.name + ".json")
    write_json(side, {"nx": values.shape[0], "ny": values.shape[1]})
    return [path, side]


@dataclass
class Manifest:
    scenario_hash: str
    command: str
    out_dir: Path
    tool_version: str = __version__
    outputs: list = field(default_factory=list)
    assertions: list = field(default_factory=list)

    def add(self, name, path, fmt):
        rel = Path(path).relative_to(self.out_dir).as_posix()
        self.outputs.append({"name": name, "path": rel, "format": fmt})

    def assertion(self, name, passed, value):
        self.assertions.append({"name": name, "pass": bool(passed), "value": value})
        return bool(passed)

    @property
    def all_passed(self):
        return all(a["pass"] for a in self.assertions)

    def csv(self, name, header, rows):
        path = self.out_dir / f"{name}.csv"
        write_csv(path, header, rows)
        self.add(name, path, "csv")
        return path

    def json(self, name, doc):
        path = self.out_dir / f"{name}.json"
        write_json(path, doc)
        self.add(name, path, "json")
        return path

    def field(self, name, values):
        path, side = write_field(self.out_dir / f"{name}.bin", values)
        self.add(name, path, "f64le")
        self.add(f"{name}_shape", side, "json")
        return path

    def write(self):
        doc = {
            "scenario_hash": self.scenario_hash,
            "command": self.command,
            "tool_version": self.tool_version,
            "outputs": sorted(self.outputs, key=lambda o: o["path"]),
            "assertions": self.assertions,
        }
        path = self.out_dir / "manifest.json"
        write_json(path, doc)
        return path
