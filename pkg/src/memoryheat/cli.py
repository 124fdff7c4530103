"""Command line entry point ``memoryheat``.

Exit codes: 0 success, 1 a configured assertion failed, 2 invalid scenario
(message carries a pointer to the offending key), 3 numerical failure
(message carries the step index).
"""

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, beltrami as bt, dynamics, elliptic
from . import scenario as scn
from .conductivity import ellipticity_report, conductivity_from_beltrami
from .diagnostics import default_nu, energy, fit_absorbing
from .errors import ConfigError, NumericalError, SolverError
from .kernel import validate_kernel
from .output import Manifest, write_json

EXIT_OK, EXIT_ASSERT, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
THREADS_ENV = "MEMORYHEAT_THREADS"


def max_workers(n_jobs):
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        cap = os.cpu_count() or 1
    else:
        try:
            cap = int(raw)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
        if cap < 1:
            raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return max(1, min(cap, n_jobs))


def _out_dir(path):
    if path is None:
        return None
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


class _Sink:
    """Manifest wrapper that is a no-op without an output directory."""

    def __init__(self, sc, command, out):
        self.out = out
        self.manifest = Manifest(sc.hash, command, out) if out is not None else None
        self.assertions = []

    def csv(self, *a):
        if self.manifest:
            self.manifest.csv(*a)

    def json(self, *a):
        if self.manifest:
            self.manifest.json(*a)

    def field(self, *a):
        if self.manifest:
            self.manifest.field(*a)

    def assertion(self, name, passed, value):
        self.assertions.append({"name": name, "pass": bool(passed), "value": value})
        if self.manifest:
            self.manifest.assertion(name, passed, value)

    @property
    def all_passed(self):
        return all(a["pass"] for a in self.assertions)

    def finish(self):
        if self.manifest:
            self.manifest.write()
        return EXIT_OK if self.all_passed else EXIT_ASSERT


# ---------------------------------------------------------------------------
# run


def _energy_settings(sc, setup):
    diag = sc["diagnostics"]
    if not diag.get("energy"):
        return None
    if sc["history"] != "ring":
        raise ConfigError("energy diagnostics need the ring-buffer history", "/diagnostics/energy")
    nu = diag.get("nu")
    nu = default_nu(setup.kernel) if nu is None else float(nu)
    if not nu > 0:
        raise ConfigError("nu must be positive", "/diagnostics/nu")
    return int(diag.get("r", 0)), nu


def execute_run(sc, out=None, command="run"):
    """Run one scenario; returns ``(sink, final_state, records)``."""
    setup = scn.build(sc)
    gate = dynamics.require_gate(setup.phi, setup.A)
    dt, T = float(sc["dt"]), float(sc["T_final"])
    model = dynamics.Model(setup.A, setup.kernel, setup.phi, setup.f,
                           memory_method=sc["memory_method"], solver=sc["solver"])
    rep = sc["history"]
    u_ref = None
    if isinstance(setup.u0, str):
        state = dynamics.steady_state(setup.A, setup.f, setup.kernel, dt, rep)
        u_ref = state.u.copy()
    else:
        state = dynamics.initial_state(model, setup.u0, setup.past, dt, rep)
    en = _energy_settings(sc, setup)
    asserts = sc["assert"]
    if "stationarity_tol" in asserts and u_ref is None:
        raise ConfigError("stationarity needs u0 = \"steady\"", "/assert/stationarity_tol")
    if asserts.get("energy_monotone") and en is None:
        raise ConfigError("energy_monotone needs diagnostics.energy", "/assert/energy_monotone")
    A = setup.A

    def observe(st, _model):
        rec = {
            "u_V0": float(elliptic.v_norm(A, st.u, 0)),
            "u_V1": float(elliptic.v_norm(A, st.u, 1)),
            "u_sup": float(np.max(np.abs(st.u))) if st.u.size else 0.0,
        }
        if u_ref is not None:
            rec["stationarity"] = float(elliptic.v_norm(A, st.u - u_ref, 0))
        if not all(np.isfinite(v) for v in rec.values()):
            raise NumericalError("non-finite norms", step=st.n)
        if en is not None:
            with np.errstate(over="ignore", invalid="ignore"):
                terms = [float(elliptic.v_norm_sq(A, st.u, j)) for j in range(4)]
            if not np.all(np.isfinite(terms)):
                raise NumericalError("non-finite energy", step=st.n)
            rep_e = energy(st, A, en[0], en[1])
            rec["E"] = rep_e.E
            rec["eta_M"] = rep_e.eta_norms[en[0] + 1]
        return rec

    sink = _Sink(sc, command, out)
    failure = None
    try:
        traj = dynamics.simulate(model, state, T, dt, sample_every=int(sc["sample_every"]),
                                 observe=observe)
    except NumericalError as exc:
        traj = exc.trajectory
        failure = exc
    records = traj.records
    keys = ["t"] + [k for k in records[0] if k != "t"] if records else ["t"]
    sink.csv("trajectory", keys, [[r.get(k) for k in keys] for r in records])
    summary = {
        "steps": state.n,
        "t_final": state.t,
        "gate": gate,
        "kernel": setup.kernel.describe(),
        "phi": setup.phi.describe(),
        "failure": None if failure is None else str(failure),
    }
    if en is not None:
        summary["energy"] = {"r": en[0], "nu": en[1]}
        E = np.array([r["E"] for r in records])
        slack = float(asserts.get("energy_slack", 10.0)) * dt * dt * max(E[0], 1e-300) \
            * int(sc["sample_every"]) ** 2
        incr = float(np.max(np.diff(E))) if len(E) > 1 else 0.0
        summary["energy"].update({"max_increase": incr, "slack": slack,
                                  "monotone": bool(incr <= slack)})
    if failure is None and len(records) >= 10:
        fit = fit_absorbing([r["t"] for r in records], [r["u_V0"] for r in records])
        summary["fit_u_V0"] = {"I": fit.I, "c": fit.c, "C": fit.C,
                               "rms_residual": fit.rms_residual, "reliable": fit.reliable}
    sink.json("summary", summary)
    sink.field("final_u", state.u)
    sink.assertion("finite", failure is None, None if failure is None else failure.step)
    if "stationarity_tol" in asserts:
        worst = max(r["stationarity"] for r in records)
        sink.assertion("stationarity", worst <= float(asserts["stationarity_tol"]), worst)
    if asserts.get("energy_monotone"):
        sink.assertion("energy_monotone", summary["energy"]["monotone"],
                       summary["energy"]["max_increase"])
    return sink, state, records, failure


def cmd_run(sc, args):
    sink, _, _, failure = execute_run(sc, _out_dir(args.out))
    code = sink.finish()
    if failure is not None:
        print(f"numerical failure: {failure}", file=sys.stderr)
        return EXIT_NUMERIC
    _report(sink)
    return code


def _report(sink):
    for a in sink.assertions:
        print(f"{'PASS' if a['pass'] else 'FAIL'} {a['name']} {json.dumps(a['value'])}")


# ---------------------------------------------------------------------------
# steady, decompose, validate


def cmd_steady(sc, args):
    setup = scn.build(sc)
    out = _out_dir(args.out)
    st = dynamics.steady_state(setup.A, setup.f, setup.kernel, float(sc["dt"]), sc["history"])
    mem = dynamics._memory(st.eta, setup.A, sc["memory_method"])
    resid = setup.A.apply(st.u) + mem - setup.f
    fnorm = float(elliptic.v_norm(setup.A, setup.f, 0))
    rel = float(elliptic.v_norm(setup.A, resid, 0)) / fnorm if fnorm > 0 else 0.0
    sink = _Sink(sc, "steady", out)
    doc = {"u_f_V0": float(elliptic.v_norm(setup.A, st.u, 0)),
           "u_f_sup": float(np.max(np.abs(st.u))), "stationarity_residual": rel}
    sink.json("steady", doc)
    sink.field("u_f", st.u)
    sink.assertion("stationarity_residual", rel <= 1e-8, rel)
    print(json.dumps(doc, sort_keys=True))
    _report(sink)
    return sink.finish()


def cmd_decompose(sc, args):
    setup = scn.build(sc)
    dynamics.require_gate(setup.phi, setup.A)
    if isinstance(setup.u0, str):
        raise ConfigError("decompose needs explicit initial data", "/u0")
    model = dynamics.Model(setup.A, setup.kernel, setup.phi, setup.f,
                           memory_method=sc["memory_method"], solver=sc["solver"])
    res = dynamics.decomposition_run(model, setup.u0, setup.past, float(sc["T_final"]),
                                     float(sc["dt"]), int(sc["sample_every"]), sc["history"])
    sink = _Sink(sc, "decompose", _out_dir(args.out))
    rows = list(zip(res.times, res.sum_error,
                    *(x if len(x) else [None] * len(res.times)
                      for x in (res.v_norm_H0, res.w_norm_H1, res.u_norm_H0))))
    sink.csv("decomposition", ["t", "sum_error", "v_H0", "w_H1", "u_H0"], rows)
    sink.json("summary", {"ell": res.ell, "checks": res.checks})
    sink.assertion("sum", res.checks["sum_ok"], res.checks["sum_max_error"])
    if "v_decays" in res.checks:
        sink.assertion("v_decays", res.checks["v_decays"], res.checks["v_decay_rate"])
        sink.assertion("w_bounded", res.checks["w_sup_finite"], res.checks["w_sup_H1"])
    _report(sink)
    return sink.finish()


def validation_report(sc):
    setup = scn.build(sc)
    sigma = conductivity_from_beltrami(setup.mu)
    lo, hi, det_err = ellipticity_report(sigma)
    kv = validate_kernel(setup.kernel)
    gate = dynamics.dissipativity_gate(setup.phi, setup.A)
    return {
        "grid": setup.grid.to_dict(),
        "mu": {"k_bound": setup.mu.k_bound, "min_eig": lo, "max_eig": hi,
               "max_det_error": det_err, "m_k": sigma.m_k, "M_k": sigma.M_k},
        "kernel": kv,
        "phi": setup.phi.describe(),
        "gate": gate,
    }


def cmd_validate(sc, args):
    report = validation_report(sc)
    sink = _Sink(sc, "validate", _out_dir(args.out))
    sink.json("validation", report)
    kv = report["kernel"]
    sink.assertion("kernel_K1", kv["K1_ok"], kv["normalization_error"])
    sink.assertion("kernel_K2", kv["K2_ok"], kv["theta_min"])
    sink.finish()
    gate = report["gate"]
    if not gate["ok"]:
        raise ConfigError(
            f"dissipativity gate failed: phi' dips to -{gate['diss_margin']!r}, "
            f"coercivity bound is {gate['lambda_lower']!r}", "/phi")
    if not (kv["K1_ok"] and kv["K2_ok"]):
        raise ConfigError("kernel fails its monotonicity or decay check", "/kernel")
    print(json.dumps(report, sort_keys=True, default=str))
    return EXIT_OK


# ---------------------------------------------------------------------------
# beltrami


BELTRAMI_DEFAULTS = {"n": 64, "L": 1.0, "k_values": [0.2, 0.5, 0.8], "mu": {"bump": {"k": 0.4}},
                     "q_exponents": [2.5], "tol": 1e-12}


def _torus_mu(spec, n, L):
    from .conductivity import mu_from_spec

    X, Y = bt.torus_coords(n, L)
    return mu_from_spec(spec, X, Y, L, L)


def _divergence_data(n, L):
    X, Y = bt.torus_coords(n, L)
    w = 2 * np.pi / L
    F1 = np.sin(w * X) * np.cos(2 * w * Y) + 0.5 * np.cos(3 * w * X + w * Y)
    F2 = np.cos(w * (X + Y)) - 0.3 * np.sin(2 * w * X) * np.sin(w * Y)
    return F1, F2


def beltrami_suite(cfg, rng):
    """Property checks on the torus; returns ``(checks, histories, q_report)``."""
    n, L = int(cfg["n"]), float(cfg["L"])
    if n < 8:
        raise ConfigError("beltrami grid needs n >= 8", "/beltrami/n")
    X, Y = bt.torus_coords(n, L)
    checks = {}
    f = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    f = bt.SpectralField(f - f.mean(), L)
    checks["isometry_error"] = abs(bt.beurling(f).l2_norm() - f.l2_norm()) / f.l2_norm()
    mode = bt.SpectralField(np.exp(2j * np.pi * (X + 2 * Y) / L), L)
    checks["intertwining_error"] = float(np.max(np.abs(
        bt.beurling(bt.dbar(mode)).values - bt.d(mode).values)))
    histories = []
    ratios = {}
    for k in cfg["k_values"]:
        k = float(k)
        phase = np.exp(2j * np.pi * (X + Y) / L)
        mu = k * phase * (0.6 + 0.4 * np.cos(2 * np.pi * X / L) ** 2)
        res = bt.neumann_resolvent(mu, f, bt.ResolventConfig(k=k, max_iter=5000, tol=cfg["tol"]))
        ratios[repr(k)] = res.contraction
        histories += [(k, i + 1, h) for i, h in enumerate(res.history)]
    checks["contraction"] = ratios
    src = bt.SpectralField(np.exp(2j * np.pi * (X - 2 * Y) / L)
                           + 0.5 * np.exp(2j * np.pi * (3 * X + Y) / L), L)
    mu_b = _torus_mu(cfg["mu"], n, L)
    kb = float(np.max(np.abs(mu_b)))
    sol = bt.solve_beltrami(mu_b, src, bt.ResolventConfig(k=kb, max_iter=5000, tol=cfg["tol"]))
    checks["beltrami_residual"] = sol.residual
    disc = []
    for m in (n // 2, n):
        F1, F2 = _divergence_data(m, L)
        mu_m = _torus_mu(cfg["mu"], m, L)
        disc.append(bt.cross_validate_divform(mu_m, F1, F2, L).discrepancy)
    checks["divform_discrepancy"] = {repr(n // 2): disc[0], repr(n): disc[1]}
    checks["divform_ratio"] = disc[0] / disc[1] if disc[1] > 0 else math.inf
    # q-window: norms of the resolvent solution on two grids
    norms = {}
    for m in (n // 2, n):
        Xm, Ym = bt.torus_coords(m, L)
        mu_m = _torus_mu(cfg["mu"], m, L)
        Phi = bt.SpectralField(np.exp(2j * np.pi * (Xm + Ym) / L), L)
        g = bt.neumann_resolvent(mu_m, Phi, bt.ResolventConfig(k=kb, max_iter=5000,
                                                               tol=cfg["tol"])).g
        norms[m] = {q: g.lq_norm(q) for q in cfg["q_exponents"]}
    q_report = bt.q_window_report(kb, norms, list(cfg["q_exponents"]))
    return checks, histories, q_report


def cmd_beltrami(sc, args):
    raw = sc.get("beltrami") or {}
    if not isinstance(raw, dict):
        raise ConfigError("beltrami must be an object", "/beltrami")
    cfg = dict(BELTRAMI_DEFAULTS, **raw)
    checks, hist, q_report = beltrami_suite(cfg, scn.rng_for(sc, 3))
    sink = _Sink(sc, "beltrami", _out_dir(args.out))
    sink.csv("residual_history", ["k", "iteration", "update_norm"], hist)
    sink.json("q_window", q_report)
    sink.json("checks", checks)
    sink.assertion("isometry", checks["isometry_error"] <= 1e-12, checks["isometry_error"])
    sink.assertion("intertwining", checks["intertwining_error"] <= 1e-10,
                   checks["intertwining_error"])
    for k, r in checks["contraction"].items():
        sink.assertion(f"contraction_k={k}", r <= float(k) + 0.05, r)
    sink.assertion("beltrami_residual", checks["beltrami_residual"] <= 1e-8,
                   checks["beltrami_residual"])
    sink.assertion("divform_ratio", 3.5 <= checks["divform_ratio"] <= 4.5,
                   checks["divform_ratio"])
    for row in q_report["rows"]:
        if "stable" in row:
            sink.assertion(f"q_window_{row['q']!r}", row["stable"], row["max_relative_change"])
    _report(sink)
    return sink.finish()


# ---------------------------------------------------------------------------
# sweep


AXIS_ALIASES = {"nu": "diagnostics/nu", "beta": "phi/cubic/beta"}


def _parse_values(text):
    if text is None:
        return None
    items = [t for t in text.split(",") if t.strip()]
    try:
        return [float(t) for t in items]
    except ValueError:
        raise ConfigError(f"sweep values must be numbers, got {text!r}", "/sweep/values") from None


def cmd_sweep(sc, args):
    spec = sc.get("sweep") or {}
    if not isinstance(spec, dict):
        raise ConfigError("sweep must be an object", "/sweep")
    axis = args.axis or spec.get("axis")
    values = _parse_values(args.values) if args.values is not None else spec.get("values")
    if not axis:
        raise ConfigError("sweep needs an axis", "/sweep/axis")
    if not isinstance(values, list) or not values:
        raise ConfigError("sweep needs a non-empty list of values", "/sweep/values")
    axis = AXIS_ALIASES.get(axis, axis)
    parts = scn.resolve_path(sc.doc, axis)
    out = _out_dir(args.out)

    def member(i_val):
        i, val = i_val
        doc = scn.with_value(sc.doc, parts, val)
        doc.pop("sweep", None)
        msc = scn.Scenario(doc, sc.base_dir)
        mout = None if out is None else _out_dir(out / f"member_{i:03d}")
        try:
            sink, state, records, failure = execute_run(msc, mout, command="sweep-member")
            sink.finish()
        except ConfigError as exc:
            return {"value": val, "error": str(exc), "config": True}
        return {"value": val, "sink": sink, "u": state.u, "t": state.t, "records": records,
                "failure": failure}

    jobs = list(enumerate(values))
    with ThreadPoolExecutor(max_workers=max_workers(len(jobs))) as pool:
        results = list(pool.map(member, jobs))
    bad = [r for r in results if r.get("config")]
    if bad:
        raise ConfigError(f"sweep member {bad[0]['value']!r}: {bad[0]['error']}", "/sweep")
    rows, diffs = [], []
    for i, r in enumerate(results):
        nxt = results[i + 1] if i + 1 < len(results) else None
        diff = None
        if nxt is not None and nxt["u"].shape == r["u"].shape and r["failure"] is None \
                and nxt["failure"] is None:
            diff = float(np.sqrt(np.sum((r["u"] - nxt["u"]) ** 2) / r["u"].size))
        diffs.append(diff)
    for i, r in enumerate(results):
        ratio = None
        if i + 1 < len(diffs) and diffs[i] is not None and diffs[i + 1]:
            ratio = diffs[i] / diffs[i + 1]
        sink = r["sink"]
        energy_ok = next((a["pass"] for a in sink.assertions if a["name"] == "energy_monotone"),
                         None)
        rows.append([r["value"], r["t"], r["records"][-1]["u_V0"] if r["records"] else None,
                     diffs[i], ratio, energy_ok, sink.all_passed,
                     None if r["failure"] is None else r["failure"].step])
    top = _Sink(sc, "sweep", out)
    top.csv("comparison", ["value", "t_final", "u_V0_final", "diff_to_next", "ratio",
                           "energy_monotone", "member_pass", "failure_step"], rows)
    if top.manifest is not None:
        for i, r in enumerate(results):
            if r["sink"].manifest is not None:
                for o in r["sink"].manifest.outputs:
                    top.manifest.outputs.append(
                        {"name": f"member_{i:03d}/{o['name']}",
                         "path": f"member_{i:03d}/{o['path']}", "format": o["format"]})
                top.manifest.outputs.append({"name": f"member_{i:03d}/manifest",
                                             "path": f"member_{i:03d}/manifest.json",
                                             "format": "json"})
    if parts == ["diagnostics", "nu"]:
        top.assertion("some_nu_monotone", any(row[5] for row in rows), [row[5] for row in rows])
    else:
        top.assertion("members_pass", all(row[6] for row in rows), [row[6] for row in rows])
    if any(r["failure"] is not None for r in results):
        top.finish()
        return EXIT_NUMERIC
    _report(top)
    for row in rows:
        print(",".join("" if v is None else repr(v) for v in row))
    return top.finish()


# ---------------------------------------------------------------------------


COMMANDS = {
    "run": cmd_run,
    "steady": cmd_steady,
    "decompose": cmd_decompose,
    "validate": cmd_validate,
    "beltrami": cmd_beltrami,
    "sweep": cmd_sweep,
}


def build_parser():
    p = argparse.ArgumentParser(prog="memoryheat",
                                description="Heat conduction with memory in quasiconformal media.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("scenario", help="scenario JSON file")
        sp.add_argument("--out", help="output directory")
        if name == "sweep":
            sp.add_argument("--axis", help="scenario key path, e.g. dt or phi/cubic/beta")
            sp.add_argument("--values", help="comma-separated values")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        sc = scn.load(args.scenario)
        return COMMANDS[args.command](sc, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
