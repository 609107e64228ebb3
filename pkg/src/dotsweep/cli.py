"""Config-driven scenario runner.

Reads a YAML config describing a model, a sweep protocol and a scenario,
runs the computation, and writes CSV series plus a YAML run manifest into
an output directory.  Outputs are deterministic for a fixed config: full
double precision, no timestamps, fixed column order.

Exit codes: 0 success, 2 config error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

import dotsweep
from dotsweep import adiabatic as ad
from dotsweep import dynamics as dy
from dotsweep import network as net

DEFAULT_TOLERANCE = 1e-8


class ConfigError(ValueError):
    """Invalid or missing configuration; carries the offending field."""

    def __init__(self, field, message):
        super().__init__(f"field '{field}': {message}")
        self.field = field


def _fmt(x):
    return f"{float(x):.17g}"


def _require(block, field, kind, context):
    if field not in block:
        raise ConfigError(f"{context}.{field}", "missing")
    value = block[field]
    if kind in (float, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{context}.{field}", f"expected a number, got {value!r}")
        return kind(value)
    if not isinstance(value, kind):
        raise ConfigError(f"{context}.{field}",
                          f"expected {kind.__name__}, got {type(value).__name__}")
    return value


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("config", str(exc))
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError("config", f"YAML parse error{where}: {exc}")
    if not isinstance(cfg, dict):
        raise ConfigError("config", "top level must be a mapping")
    return cfg


def build_model(block):
    builder = _require(block, "builder", str, "model")
    if builder == "star":
        levels = _require(block, "levels", list, "model")
        couplings = _require(block, "couplings", list, "model")
        return net.build_star(levels, couplings,
                              tagged_site=block.get("tagged_site"))
    if builder == "comb":
        return net.build_comb(_require(block, "num_levels", int, "model"),
                              spacing=float(block.get("spacing", 1.0)),
                              coupling=float(block.get("coupling", 3.0)),
                              first_level=block.get("first_level"))
    if builder == "dot_wire_ring":
        return net.build_dot_wire_ring(_require(block, "num_sites", int, "model"),
                                       _require(block, "c0", float, "model"),
                                       _require(block, "ca", float, "model"),
                                       _require(block, "cb", float, "model"))
    if builder == "random":
        return net.build_random_network(_require(block, "num_sites", int, "model"),
                                        _require(block, "seed", int, "model"),
                                        coupling_density=float(
                                            block.get("density", 0.7)))
    if builder == "ring_comb":
        raise ConfigError("model.builder",
                          "ring_comb is analytic and only supports the "
                          "adiabatic-scan scenario")
    raise ConfigError("model.builder", f"unknown builder {builder!r}")


def build_protocol(block):
    kind = str(block.get("kind", "linear"))
    if kind == "linear":
        rate = _require(block, "rate", float, "protocol")
        if rate <= 0:
            raise ConfigError("protocol.rate", "must be positive")
        u_start = _require(block, "u_start", float, "protocol")
        u_end = _require(block, "u_end", float, "protocol")
        if u_end <= u_start:
            raise ConfigError("protocol.u_end", "must exceed u_start")
        return dy.SweepProtocol.linear(u_start, u_end, rate)
    if kind == "table":
        times = _require(block, "times", list, "protocol")
        values = _require(block, "values", list, "protocol")
        try:
            return dy.SweepProtocol.tabulated(times, values)
        except ValueError as exc:
            raise ConfigError("protocol.times", str(exc))
    raise ConfigError("protocol.kind", f"unknown kind {kind!r}")


def _csv_write(path, header, columns):
    rows = len(columns[0])
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(rows):
            fh.write(",".join(_fmt(col[i]) for col in columns) + "\n")


def _occupations_csv(path, record, stride):
    n = record.q.shape[1]
    header = ["time", "u", "p"] + [f"q_{k + 1}" for k in range(n)]
    sel = slice(None, None, stride)
    cols = [record.times[sel], record.u_values[sel], record.p[sel]]
    cols += [record.q[sel, k] for k in range(n)]
    _csv_write(path, header, cols)


def _currents_csv(path, record, stride):
    sel = slice(None, None, stride)
    _csv_write(path, ["time", "u", "current_operator", "current_splitting",
                      "charge"],
               [record.times[sel], record.u_values[sel],
                record.current_operator[sel], record.current_splitting[sel],
                record.charge[sel]])


def _effective_coupling(decomp):
    c = decomp.effective_couplings[decomp.coupled]
    return float(np.sqrt(np.mean(c**2)))


def _regime_for(decomp, rate):
    c_eff = _effective_coupling(decomp)
    spacing = decomp.mean_spacing
    if not np.isfinite(spacing) or spacing <= 0 or c_eff <= 0 or rate <= 0:
        return None
    return dy.classify_regime(c_eff, spacing, rate)


def run_scenario(cfg, out_dir, tolerance):
    """Execute one configured scenario; returns the manifest dict."""
    scen = cfg.get("scenario")
    if not isinstance(scen, dict):
        raise ConfigError("scenario", "missing block")
    kind = _require(scen, "kind", str, "scenario")
    model_block = cfg.get("model")
    if not isinstance(model_block, dict):
        raise ConfigError("model", "missing block")
    outputs = cfg.get("outputs", {}) or {}
    stride = int(outputs.get("stride", 1))
    if stride < 1:
        raise ConfigError("outputs.stride", "must be >= 1")
    samples = int(outputs.get("samples", 801))

    manifest = {
        "library": {"name": "dotsweep", "version": dotsweep.__version__},
        "config": cfg,
        "tolerance": tolerance,
        "outputs": [],
    }

    if kind == "adiabatic-scan":
        files, derived = _run_adiabatic_scan(cfg, out_dir, samples)
        manifest["outputs"] = files
        manifest["derived"] = derived
        return manifest

    model = build_model(model_block)
    decomp = net.decompose(model)
    protocol_block = cfg.get("protocol")
    if not isinstance(protocol_block, dict) and kind != "decay":
        raise ConfigError("protocol", "missing block")

    if kind == "injection":
        protocol = build_protocol(protocol_block)
        initial = dy.initial_adiabatic_state(model, protocol.u_start, 0)
    elif kind == "induction":
        protocol = build_protocol(protocol_block)
        level = _require(scen, "level", int, "scenario")
        if not 1 <= level <= decomp.num_levels:
            raise ConfigError("scenario.level",
                              f"must be in 1..{decomp.num_levels}")
        initial = dy.initial_level_state(decomp, level - 1)
    elif kind == "decay":
        u0 = _require(scen, "u", float, "scenario")
        duration = _require(scen, "duration", float, "scenario")
        if duration <= 0:
            raise ConfigError("scenario.duration", "must be positive")
        protocol = dy.SweepProtocol.constant(u0, duration)
        initial = dy.initial_dot_state(model)
    else:
        raise ConfigError("scenario.kind", f"unknown kind {kind!r}")

    record = dy.propagate(model, protocol, initial, decomp=decomp,
                          num_samples=samples,
                          dt_max=scen.get("dt_max"), scenario=kind)
    identity = record.identity_deviation
    scale = max(1.0, float(np.max(np.abs(record.current_operator))))
    if identity > tolerance * scale:
        raise dy.PropagationError(
            f"current identity violated: {identity:.3e} > tolerance "
            f"{tolerance:.1e} * {scale:.3g}")

    charge = dy.integrated_charge(record)
    files = []
    occ_path = out_dir / "occupations.csv"
    _occupations_csv(occ_path, record, stride)
    files.append(occ_path.name)
    cur_path = out_dir / "currents.csv"
    _currents_csv(cur_path, record, stride)
    files.append(cur_path.name)

    if kind == "decay":
        gamma = 2.0 * np.pi * _effective_coupling(decomp) ** 2 \
            / decomp.mean_spacing
        q_wigner = dy.wigner_decay_occupations(
            decomp.levels - protocol.u_start, decomp.effective_couplings,
            gamma, 0.0, protocol.duration)
        prof_path = out_dir / "profile.csv"
        _csv_write(prof_path, ["level", "energy", "q_final", "q_wigner"],
                   [np.arange(1, decomp.num_levels + 1), decomp.levels,
                    record.q[-1], q_wigner])
        files.append(prof_path.name)
        manifest["derived"] = {"gamma": float(gamma)}

    regime = _regime_for(decomp, protocol.rate)
    manifest["outputs"] = files
    manifest["result"] = {
        "charge_time_integral": charge.time_integral,
        "charge_endpoint_sum": charge.endpoint_sum,
        "identity_deviation": identity,
        "norm_drift": record.norm_drift,
        "regime": regime.regime if regime else None,
    }
    return manifest


def _run_adiabatic_scan(cfg, out_dir, samples):
    model_block = cfg["model"]
    builder = _require(model_block, "builder", str, "model")
    protocol_block = cfg.get("protocol")
    if not isinstance(protocol_block, dict):
        raise ConfigError("protocol", "missing block")
    u_start = _require(protocol_block, "u_start", float, "protocol")
    u_end = _require(protocol_block, "u_end", float, "protocol")
    if u_end <= u_start:
        raise ConfigError("protocol.u_end", "must exceed u_start")
    u = np.linspace(u_start, u_end, samples)

    if builder == "ring_comb":
        delta = _require(model_block, "delta", float, "model")
        ca = _require(model_block, "ca", float, "model")
        cb = _require(model_block, "cb", float, "model")
        params = ad.ContinuumParams.from_bond_couplings(ca, cb, delta)
        e0 = delta  # prepared even-parity level of the comb branch
        energy = ad.comb_branch_energy(params, u)
        p = 1.0 / (1.0 - ad.comb_self_energy_deriv(params, energy))
        g_exact = ad.comb_conductance(params, u)
        g_peak = ad.collective_peak_conductance(
            params, params.lam_minus, params.lam_plus, u, e0)
        p_line = delta * ad.distorted_lorentzian(u - e0, params.gamma,
                                                 params.theta)
        path = out_dir / "conductance.csv"
        _csv_write(path, ["u", "energy", "dot_occupation", "conductance",
                          "conductance_peak_formula",
                          "dot_occupation_lorentzian"],
                   [u, energy, p, g_exact, g_peak, p_line])
        derived = {
            "c_eff": float(params.c_eff),
            "gamma": float(params.gamma),
            "theta": float(params.theta),
            "lam_plus": float(params.lam_plus),
            "lam_minus": float(params.lam_minus),
            "prepared_energy": float(e0),
        }
        return [path.name], derived

    model = build_model(model_block)
    decomp = net.decompose(model)
    scen = cfg["scenario"]
    branch = int(scen.get("branch", 0))
    energy = np.array([ad.branch_occupations(decomp, ui, branch)[0]
                       for ui in u])
    p = 1.0 / (1.0 - ad.self_energy_deriv(decomp, energy))
    g_split = ad.splitting_conductance(decomp, u, branch)
    cols = [u, energy, p, g_split]
    header = ["u", "energy", "dot_occupation", "conductance_splitting"]
    if scen.get("berry", False):
        g_berry = np.array([ad.berry_curvature(model, ui, branch)
                            for ui in u])
        cols.append(g_berry)
        header.append("conductance_berry")
    path = out_dir / "conductance.csv"
    _csv_write(path, header, cols)
    return [path.name], {"branch": branch}


# -- scan command -----------------------------------------------------------


def _set_by_path(cfg, dotted, value):
    keys = dotted.split(".")
    node = cfg
    for key in keys[:-1]:
        if not isinstance(node.get(key), dict):
            raise ConfigError(f"scan.parameter", f"path {dotted!r} not found")
        node = node[key]
    if keys[-1] not in node:
        raise ConfigError("scan.parameter", f"path {dotted!r} not found")
    node[keys[-1]] = value


def _scan_worker(args):
    cfg, value, tolerance = args
    import copy

    sub = copy.deepcopy(cfg)
    _set_by_path(sub, cfg["scan"]["parameter"], value)
    sub.pop("scan", None)
    model = build_model(sub["model"])
    decomp = net.decompose(model)
    scen = sub["scenario"]
    kind = scen["kind"]
    protocol = build_protocol(sub["protocol"])
    if kind == "injection":
        initial = dy.initial_adiabatic_state(model, protocol.u_start, 0)
    elif kind == "induction":
        initial = dy.initial_level_state(decomp, int(scen["level"]) - 1)
    else:
        raise ConfigError("scenario.kind",
                          f"scan does not support kind {kind!r}")
    flagged = bool(np.nanmax(np.abs(decomp.splitting_ratios)) > 10.0) \
        if np.any(decomp.coupled) else True
    try:
        record = dy.propagate(model, protocol, initial, decomp=decomp,
                              num_samples=int(sub.get("outputs", {})
                                              .get("samples", 401)),
                              dt_max=scen.get("dt_max"), scenario=kind)
    except dy.PropagationError:
        return value, float("nan"), float("nan"), "failed", False, True
    charge = dy.integrated_charge(record)
    regime = _regime_for(decomp, protocol.rate)
    return (value, charge.time_integral, charge.endpoint_sum,
            regime.regime if regime else "n/a",
            regime.boundary if regime else False, flagged)


def run_scan(cfg, out_dir, tolerance, threads):
    scan = cfg.get("scan")
    if not isinstance(scan, dict):
        raise ConfigError("scan", "missing block")
    parameter = _require(scan, "parameter", str, "scan")
    values = _require(scan, "values", list, "scan")
    if len(values) == 0:
        raise ConfigError("scan.values", "empty scan list")
    if "parameters" in scan:
        raise ConfigError("scan.parameters", "exactly one scan dimension")
    # validate the path against the base config before spawning work
    import copy
    _set_by_path(copy.deepcopy(cfg), parameter, values[0])

    jobs = [(cfg, float(v), tolerance) for v in values]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(_scan_worker, jobs))
    else:
        rows = [_scan_worker(j) for j in jobs]

    path = out_dir / "scan.csv"
    with open(path, "w", newline="") as fh:
        fh.write("value,charge_time_integral,charge_endpoint_sum,"
                 "regime,boundary,flagged\n")
        for value, q_t, q_e, regime, boundary, flagged in rows:
            fh.write(f"{_fmt(value)},{_fmt(q_t)},{_fmt(q_e)},"
                     f"{regime},{int(boundary)},{int(flagged)}\n")
    return {
        "library": {"name": "dotsweep", "version": dotsweep.__version__},
        "config": cfg,
        "tolerance": tolerance,
        "outputs": [path.name],
        "scan": {"parameter": parameter, "points": len(values)},
    }


# -- entry point ------------------------------------------------------------


def _native(obj):
    """Coerce numpy scalars/arrays to plain Python types for YAML."""
    if isinstance(obj, dict):
        return {k: _native(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_native(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_native(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _write_manifest(out_dir, manifest):
    with open(out_dir / "manifest.yaml", "w") as fh:
        yaml.safe_dump(_native(manifest), fh, sort_keys=True)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="dotsweep",
        description="Sweep-scenario runner for dot-driven network transport")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("run", "run one configured scenario"),
                           ("scan", "sweep one parameter of a scenario")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("config", help="YAML scenario config")
        p.add_argument("--out", default=None,
                       help="output directory (default: outputs.directory "
                            "or ./out)")
        p.add_argument("--threads", type=int, default=1,
                       help="parallel workers for scans")
        p.add_argument("--tolerance", type=float, default=DEFAULT_TOLERANCE,
                       help="current-identity tolerance recorded in the "
                            "manifest")

    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        out = args.out or (cfg.get("outputs", {}) or {}).get("directory", "out")
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "run":
            manifest = run_scenario(cfg, out_dir, args.tolerance)
        else:
            manifest = run_scan(cfg, out_dir, args.tolerance, args.threads)
        _write_manifest(out_dir, manifest)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (dy.PropagationError, dy.QuadratureError, ad.PoleError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {out_dir}/manifest.yaml")
    return 0


if __name__ == "__main__":
    sys.exit(main())
