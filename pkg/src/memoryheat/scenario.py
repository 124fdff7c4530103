"""Scenario documents: parsing, defaults and construction of model objects.

A scenario is one JSON object. Keys and defaults::

    grid            {"nx": 32, "ny": 32, "Lx": 1.0, "Ly": 1.0}
    mu              {"constant": [0.0, 0.0]}
    kernel          {"exp_sum": [[1.0, 1.0]]}
    phi             "zero"
    f               0            (field spec)
    u0              0            (field spec, or "steady" to start at z_f)
    past            "zero"       ("zero" | {"constant_past": field} |
                                  {"exp_past": {"rate": r, "profile": field}})
    dt, T_final     1e-3, 0.1
    sample_every    1
    seed            0
    history         "ring"       ("ring" | "modes")
    memory_method   "kappa"      ("kappa" | "quadrature")
    diagnostics     {"energy": false, "r": 0, "nu": null, "smoothing": false,
                     "linfty_exponent": null}
    assert          {}           (see :data:`ASSERTION_KEYS`)

Field specs describe real grid functions on the interior nodes::

    0 or a number                    constant value
    {"mode": {"p": 1, "q": 1, "amp": 1.0}}
    {"modes": [[p, q, amp], ...]}
    {"random": {"radius": 1.0, "norm": "H1", "smoothness": 1.0, "modes": 8}}
    {"file": "u.bin"}                little-endian float64, sidecar {"nx", "ny"}

``random`` draws sine-mode coefficients ``N(0, 1) / (p^2 + q^2)^(s/2)`` from
the scenario seed and rescales to the given norm (``L2``, ``H1`` or ``V2``).
"""

import copy
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import elliptic
from .conductivity import beltrami_on_grid
from .errors import ConfigError
from .grid import Grid
from .history import SeparablePast, ZERO_PAST
from .kernel import kernel_from_spec
from .nonlinearity import phi_from_spec

DEFAULTS = {
    "grid": {"nx": 32, "ny": 32, "Lx": 1.0, "Ly": 1.0},
    "mu": {"constant": [0.0, 0.0]},
    "kernel": {"exp_sum": [[1.0, 1.0]]},
    "phi": "zero",
    "f": 0,
    "u0": 0,
    "past": "zero",
    "dt": 1e-3,
    "T_final": 0.1,
    "sample_every": 1,
    "seed": 0,
    "history": "ring",
    "memory_method": "kappa",
    "solver": "direct",
    "diagnostics": {"energy": False, "r": 0, "nu": None, "smoothing": False,
                    "linfty_exponent": None},
    "assert": {},
}

KNOWN_KEYS = set(DEFAULTS) | {"name", "description", "sweep", "beltrami", "decompose"}

ASSERTION_KEYS = {
    "stationarity_tol": "max ||u(t) - u_f||_{V0} along the run",
    "energy_monotone": "E_{r,nu} non-increasing within slack C dt^2",
    "energy_slack": "constant C of the per-step slack (default 10)",
    "finite": "the run completes without non-finite values",
}


def canonical_json(doc):
    """Sorted-key, compact JSON with shortest round-trip floats."""
    return json.dumps(_normalize(doc), sort_keys=True, separators=(",", ":"), allow_nan=False)


def _normalize(x):
    if isinstance(x, dict):
        return {str(k): _normalize(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_normalize(v) for v in x]
    if isinstance(x, bool) or x is None or isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        v = float(x)
        return int(v) if v.is_integer() and abs(v) < 2**53 else v
    raise ConfigError(f"unsupported value {x!r} in scenario")


def scenario_hash(doc):
    return hashlib.sha256(canonical_json(doc).encode()).hexdigest()


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k in ("grid", "diagnostics"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class Scenario:
    """A validated scenario document with its source directory."""

    doc: dict
    base_dir: Path = None

    @property
    def hash(self):
        return scenario_hash(self.doc)

    def __getitem__(self, key):
        return self.doc[key]

    def get(self, key, default=None):
        return self.doc.get(key, default)


def load(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario is not valid JSON: {exc}") from None
    return from_dict(raw, base_dir=path.parent)


def from_dict(raw, base_dir=None):
    if not isinstance(raw, dict):
        raise ConfigError("scenario must be a JSON object", "/")
    unknown = sorted(set(raw) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r}", f"/{unknown[0]}")
    doc = _merge(DEFAULTS, raw)
    _check_scalars(doc)
    return Scenario(doc=doc, base_dir=Path(base_dir) if base_dir is not None else None)


def _number(doc, key, positive=False, integer=False):
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{key} must be a number", f"/{key}")
    if integer and int(v) != v:
        raise ConfigError(f"{key} must be an integer", f"/{key}")
    if positive and not v > 0:
        raise ConfigError(f"{key} must be positive", f"/{key}")
    if not np.isfinite(v):
        raise ConfigError(f"{key} must be finite", f"/{key}")
    return v


def _check_scalars(doc):
    _number(doc, "dt", positive=True)
    _number(doc, "T_final")
    if doc["T_final"] < 0:
        raise ConfigError("T_final must be non-negative", "/T_final")
    _number(doc, "sample_every", positive=True, integer=True)
    _number(doc, "seed", integer=True)
    if doc["seed"] < 0:
        raise ConfigError("seed must be non-negative", "/seed")
    if doc["history"] not in ("ring", "modes"):
        raise ConfigError("history must be \"ring\" or \"modes\"", "/history")
    if doc["memory_method"] not in ("kappa", "quadrature"):
        raise ConfigError("memory_method must be \"kappa\" or \"quadrature\"", "/memory_method")
    if doc["solver"] not in ("direct", "cg"):
        raise ConfigError("solver must be \"direct\" or \"cg\"", "/solver")
    diag = doc["diagnostics"]
    if not isinstance(diag, dict):
        raise ConfigError("diagnostics must be an object", "/diagnostics")
    if diag.get("r", 0) not in (0, 1):
        raise ConfigError("diagnostics.r must be 0 or 1", "/diagnostics/r")
    if not isinstance(doc["assert"], dict):
        raise ConfigError("assert must be an object", "/assert")
    for k in doc["assert"]:
        if k not in ASSERTION_KEYS:
            raise ConfigError(f"unknown assertion {k!r}", f"/assert/{k}")


# ---------------------------------------------------------------------------
# builders


def build_grid(sc):
    g = sc["grid"]
    if not isinstance(g, dict):
        raise ConfigError("grid must be an object", "/grid")
    try:
        return Grid(int(g["nx"]), int(g["ny"]), float(g.get("Lx", 1.0)), float(g.get("Ly", 1.0)))
    except KeyError as exc:
        raise ConfigError(f"missing key {exc.args[0]!r}", "/grid") from None
    except ConfigError as exc:
        raise ConfigError(str(exc), "/grid") from None


def build_mu(sc, grid):
    return beltrami_on_grid(sc["mu"], grid, base_dir=sc.base_dir)


def build_operator(sc, grid=None, mu=None):
    grid = grid or build_grid(sc)
    mu = mu if mu is not None else build_mu(sc, grid)
    return elliptic.operator_from_beltrami(mu, grid)


def build_kernel(sc):
    return kernel_from_spec(sc["kernel"], base_dir=sc.base_dir)


def build_phi(sc):
    return phi_from_spec(sc["phi"])


def rng_for(sc, stream=0):
    """Independent generator per named stream, fixed by the scenario seed."""
    return np.random.default_rng([int(sc["seed"]), stream])


def _sine_mode(grid, p, q):
    X, Y = grid.coords()
    return np.sin(p * np.pi * X / grid.Lx) * np.sin(q * np.pi * Y / grid.Ly)


def field_from_spec(spec, grid, A, pointer, rng=None, base_dir=None):
    """Real interior grid function from a field spec."""
    if isinstance(spec, bool):
        raise ConfigError("field spec must be a number or an object", pointer)
    if isinstance(spec, (int, float)):
        return np.full(grid.shape, float(spec))
    if spec == "zero":
        return np.zeros(grid.shape)
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ConfigError("field spec must be a number or an object with one key", pointer)
    (kind, arg), = spec.items()
    sub = f"{pointer}/{kind}"
    if kind == "mode":
        if not isinstance(arg, dict):
            raise ConfigError("mode needs {p, q, amp}", sub)
        return float(arg.get("amp", 1.0)) * _sine_mode(grid, int(arg.get("p", 1)), int(arg.get("q", 1)))
    if kind == "modes":
        if not isinstance(arg, list) or not all(isinstance(m, list) and len(m) == 3 for m in arg):
            raise ConfigError("modes needs a list of [p, q, amp]", sub)
        out = np.zeros(grid.shape)
        for p, q, amp in arg:
            out += float(amp) * _sine_mode(grid, int(p), int(q))
        return out
    if kind == "random":
        if not isinstance(arg, dict):
            raise ConfigError("random needs an object", sub)
        if rng is None:
            raise ConfigError("random fields need a seed", sub)
        radius = float(arg.get("radius", 1.0))
        norm = arg.get("norm", "H1")
        smooth = float(arg.get("smoothness", 1.0))
        kmax = int(arg.get("modes", 8))
        if kmax < 1:
            raise ConfigError("modes must be positive", f"{sub}/modes")
        out = np.zeros(grid.shape)
        coeffs = rng.standard_normal((kmax, kmax))
        for p in range(1, kmax + 1):
            for q in range(1, kmax + 1):
                out += coeffs[p - 1, q - 1] / (p * p + q * q) ** (smooth / 2) * _sine_mode(grid, p, q)
        order = {"L2": 0, "H1": 1, "V2": 2}
        if norm not in order:
            raise ConfigError("norm must be L2, H1 or V2", f"{sub}/norm")
        size = float(elliptic.v_norm(A, out, order[norm]))
        return out * (radius / size) if size > 0 else out
    if kind == "file":
        return load_field_file(arg, grid, base_dir, sub)
    raise ConfigError(f"unknown field kind {kind!r}", pointer)


def load_field_file(path, grid, base_dir=None, pointer="/file"):
    path = Path(path)
    if base_dir is not None and not path.is_absolute():
        path = Path(base_dir) / path
    try:
        meta = json.loads(path.with_name(path.name + ".json").read_text())
        raw = np.fromfile(path, dtype="<f8")
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read field file: {exc}", pointer) from None
    shape = (int(meta.get("nx", -1)), int(meta.get("ny", -1)))
    if shape != grid.shape or raw.size != grid.size:
        raise ConfigError(f"field file is {shape}, grid expects {grid.shape}", pointer)
    return raw.reshape(grid.shape)


def build_past(sc, grid, A, rng=None):
    spec = sc["past"]
    if spec == "zero" or spec == {"zero": None} or spec == {"zero": {}}:
        return ZERO_PAST
    if not isinstance(spec, dict) or len(spec) != 1:
        raise ConfigError("past must be \"zero\", {\"constant_past\": ..} or {\"exp_past\": ..}",
                          "/past")
    (kind, arg), = spec.items()
    if kind == "constant_past":
        g = field_from_spec(arg, grid, A, "/past/constant_past", rng, sc.base_dir)
        return SeparablePast("constant", g)
    if kind == "exp_past":
        if not isinstance(arg, dict) or "rate" not in arg or "profile" not in arg:
            raise ConfigError("exp_past needs rate and profile", "/past/exp_past")
        g = field_from_spec(arg["profile"], grid, A, "/past/exp_past/profile", rng, sc.base_dir)
        return SeparablePast("exp", g, float(arg["rate"]))
    raise ConfigError(f"unknown past kind {kind!r}", "/past")


@dataclass
class Setup:
    """Everything needed to run a scenario."""

    scenario: Scenario
    grid: Grid
    mu: object
    A: object
    kernel: object
    phi: object
    f: np.ndarray
    u0: object
    past: object


def build(sc):
    grid = build_grid(sc)
    mu = build_mu(sc, grid)
    A = elliptic.operator_from_beltrami(mu, grid)
    kernel = build_kernel(sc)
    phi = build_phi(sc)
    f = field_from_spec(sc["f"], grid, A, "/f", rng_for(sc, 1), sc.base_dir)
    if sc["u0"] == "steady":
        u0 = "steady"
    else:
        u0 = field_from_spec(sc["u0"], grid, A, "/u0", rng_for(sc, 0), sc.base_dir)
    past = build_past(sc, grid, A, rng_for(sc, 2))
    return Setup(sc, grid, mu, A, kernel, phi, f, u0, past)


def resolve_path(doc, axis):
    """Split an axis such as ``dt`` or ``phi/cubic/beta`` and check it names a scalar."""
    parts = [p for p in axis.replace(".", "/").split("/") if p]
    if not parts:
        raise ConfigError("sweep axis is empty", "/sweep/axis")
    node = doc
    for i, p in enumerate(parts):
        if isinstance(node, list):
            try:
                node = node[int(p)]
                continue
            except (ValueError, IndexError):
                raise ConfigError(f"axis {axis!r} does not address a scenario key",
                                  "/sweep/axis") from None
        if not isinstance(node, dict) or p not in node:
            raise ConfigError(f"axis {axis!r} does not address a scenario key", "/sweep/axis")
        node = node[p]
    if isinstance(node, (dict, list)) or isinstance(node, bool):
        raise ConfigError(f"axis {axis!r} addresses a non-scalar value", "/sweep/axis")
    return parts


def with_value(doc, parts, value):
    out = copy.deepcopy(doc)
    node = out
    for p in parts[:-1]:
        node = node[int(p)] if isinstance(node, list) else node[p]
    last = parts[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        node[last] = value
    return out
