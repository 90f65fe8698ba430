"""Command-line experiment runner.

Subcommands: ``check-coords``, ``md``, ``ensemble`` and ``quantum``. Each reads
a JSON config, writes CSV/JSON outputs into ``--out`` and prints a PASS/FAIL
summary. Exit codes: 0 ok, 2 config or precondition error, 3 numerical
blow-up, 4 failed guard.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .coords import (
    BodyConfig,
    PhaseState,
    TransformCoefficients,
    apply_k,
    bracket_matrix,
    forward_transform,
    gram_matrix,
    inertia_tensor,
    inverse_transform,
    kinetic_decomposition,
    lattice_positions,
)
from .ensemble import (
    EnsembleSpec,
    cumulants,
    independence_test,
    resolve_workers,
    run_ensemble,
    scaling_study,
    variance_additivity,
)
from .errors import LabError
from .mdsim import (
    IntegratorParams,
    bounce_report,
    choose_dt,
    dissipation_diagnostic,
    dissipation_sweep,
    prepare_scenario,
    run,
)
from .potentials import Gravity, Harmonic, HarmonicSpring, Polynomial, Quartic
from .qsim import PacketSpec, QuantumParams, factorization_experiment, gap_sweep
from .reports import RunSummary, config_hash, write_csv, write_json

logger = logging.getLogger("emergence_lab")

EXACT_BRACKET_MAX_N = 12
FLOAT_BRACKET_MAX_N = 512


class Timer:
    def __init__(self):
        self.phases = {}

    @contextmanager
    def phase(self, name):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.phases[name] = self.phases.get(name, 0.0) + time.perf_counter() - t0


# --------------------------------------------------------------------------
# check-coords


def _random_state(cfg: BodyConfig, rng) -> PhaseState:
    x = lattice_positions(cfg) + rng.normal(0.0, 0.3, size=(cfg.n_atoms, cfg.dim))
    return PhaseState(x, rng.normal(0.0, 1.0, size=(cfg.n_atoms, cfg.dim)))


def cmd_check_coords(config, out: Path, args, timer: Timer) -> RunSummary:
    body = config["body"]
    sec = config.get("coords") or {}
    n_list = sec.get("n_list", [2, 3, 64, 512, 4096])
    n_random = sec.get("random_states", 100)
    rng = np.random.default_rng(sec.get("seed", 0))
    summary = RunSummary("check-coords", config_hash(config))
    rows = []
    for n in n_list:
        cfg = BodyConfig(n, body.get("atom_mass", 1.0), body.get("dim", 1), body.get("lattice_spacing", 1.0))
        with timer.phase("identities"):
            row_sum = float(np.max(np.abs(TransformCoefficients(n).matrix().sum(axis=1))))
            gk = float(np.max(np.abs(apply_k(gram_matrix(cfg)) - np.eye(n - 1))))
        with timer.phase("bracket"):
            if n <= EXACT_BRACKET_MAX_N:
                exact = bracket_matrix(cfg, exact=True)
                bracket = float(max(abs(exact[a, b] - (1 if a == b else 0)) for a in range(n) for b in range(n)))
            elif n <= FLOAT_BRACKET_MAX_N:
                bracket = float(np.max(np.abs(bracket_matrix(cfg) - np.eye(n))))
            else:
                bracket = float("nan")
        with timer.phase("random_states"):
            rt = kin = inert = 0.0
            for _ in range(n_random):
                st = _random_state(cfg, rng)
                back = inverse_transform(forward_transform(st, cfg), cfg)
                rt = max(rt, float(np.max(np.abs(back.positions - st.positions)) / np.max(np.abs(st.positions))),
                         float(np.max(np.abs(back.momenta - st.momenta)) / np.max(np.abs(st.momenta))))
                cm, rel = kinetic_decomposition(st, cfg)
                total = float(np.sum(st.momenta**2)) / (2 * cfg.atom_mass)
                kin = max(kin, abs(cm + rel - total) / total)
            # the O(N^2) dual formula once per N
            st = _random_state(cfg, rng)
            direct = inertia_tensor(st, cfg)
            inert = float(np.max(np.abs(inertia_tensor(st, cfg, "gram") - direct)) / np.max(np.abs(direct)))
        rows.append([n, row_sum, gk, bracket, rt, kin, inert])
        summary.add(f"N={n} sum_i a(j,i) = 0", row_sum, 1e-12, row_sum < 1e-12)
        summary.add(f"N={n} G K = I", gk, 1e-10, gk < 1e-10)
        if np.isfinite(bracket):
            tol = 0 if n <= EXACT_BRACKET_MAX_N else 1e-12
            summary.add(f"N={n} canonical brackets ({'exact' if tol == 0 else 'float'})", bracket, tol, bracket <= tol)
        summary.add(f"N={n} round trip", rt, 1e-12, rt < 1e-12)
        summary.add(f"N={n} kinetic split ({n_random} states)", kin, 1e-12, kin < 1e-12)
        summary.add(f"N={n} inertia dual formula", inert, 1e-10, inert < 1e-10)
    write_csv(out / "coords.csv",
              ["N", "row_sum_max", "gk_deviation", "bracket_deviation", "roundtrip_error", "kinetic_error",
               "inertia_error"], rows)
    return summary


# --------------------------------------------------------------------------
# md


def trajectory_rows(traj):
    dim = traj.cm_position.shape[1]
    iu = np.triu_indices(dim)
    header = (["time"] + [f"R_{a}" for a in range(dim)] + [f"P_{a}" for a in range(dim)]
              + ["e_cm", "e_total", "rel_kinetic"] + [f"I_{a}{b}" for a, b in zip(*iu)])
    inert = traj.inertia[:, iu[0], iu[1]]
    rows = np.column_stack([traj.times, traj.cm_position, traj.cm_momentum, traj.e_cm, traj.e_total,
                            traj.rel_kinetic, inert])
    return header, rows


def _is_linear_or_harmonic(external) -> bool:
    if isinstance(external, Harmonic):
        return True
    if isinstance(external, Gravity):
        return external.floor_strength == 0
    if isinstance(external, Polynomial):
        return all(len(row) <= 3 or not any(row[3:]) for row in external.coeffs)
    return False


def cmd_md(config, out: Path, args, timer: Timer) -> RunSummary:
    body = cfgmod.build_body(config)
    pair = cfgmod.build_pair(config["pair"])
    external = cfgmod.build_external(config["external"], body.atom_mass)
    scenario = cfgmod.build_scenario(config, body)
    integ = cfgmod.integrator_settings(config)
    summary = RunSummary("md", config_hash(config))
    state = prepare_scenario(scenario, body, pair, external)
    dt = integ["dt"] or choose_dt(body, pair, external, state, integ["dt_fraction"])
    params = IntegratorParams(dt, integ["n_steps"], integ["record_stride"])
    with timer.phase("integrate"):
        traj = run(state, body, pair, external, params)
    header, rows = trajectory_rows(traj)
    write_csv(out / "trajectory.csv", header, rows)
    drift = traj.energy_drift()
    summary.results.update({"dt": dt, "n_steps": params.n_steps, "scenario": scenario.kind,
                            "e_total_drift": drift, "e_cm_drift": traj.cm_energy_drift()})
    summary.add("total energy conserved", drift, 1e-6, drift < 1e-6)
    if _is_linear_or_harmonic(external):
        e_cm = traj.cm_energy_drift()
        summary.add("CM decoupling (e_cm drift)", e_cm, 1e-6, e_cm < 1e-6)
    if isinstance(external, Quartic) and len(traj) >= 3:
        with timer.phase("dissipation"):
            diag = dissipation_diagnostic(traj, external, body)
        write_csv(out / "dissipation.csv", ["time", "lhs", "rhs", "residual"],
                  np.column_stack([diag.times, diag.lhs, diag.rhs, diag.residual]))
        k = max(1, len(traj) // 10)
        early, late = float(np.mean(traj.e_cm[:k])), float(np.mean(traj.e_cm[-k:]))
        summary.results.update({"dissipation_relative_rms": diag.relative_rms, "e_cm_early_mean": early,
                                "e_cm_late_mean": late})
        summary.add("dissipation residual (relative RMS)", diag.relative_rms, None, True, guard=False,
                    note="reported")
        summary.add("e_cm late mean minus early mean", late - early, None, True, guard=False, note="reported")
    if "dissipation" in config:
        sec = config["dissipation"]
        with timer.phase("dissipation_sweep"):
            sweep = dissipation_sweep(body, pair, sec["epsilons"], sec.get("omega_cm", 0.003),
                                      scenario.temperature, scenario.seed, sec.get("n_steps", 100_000),
                                      sec.get("record_stride", 5), integ["dt_fraction"])
        order = sorted(sweep, key=lambda r: -r[0])
        rel = [d.relative_rms for _, d, _ in order]
        write_csv(out / "dissipation_sweep.csv", ["epsilon", "relative_rms", "e_total_drift"],
                  [[e, d.relative_rms, t.energy_drift()] for e, d, t in order])
        mono = all(b < a for a, b in zip(rel, rel[1:]))
        summary.results["dissipation_sweep"] = {"epsilon": [e for e, _, _ in order], "relative_rms": rel}
        summary.add("dissipation residual decreases with epsilon", rel, "monotone", mono)
        worst = max(t.energy_drift() for _, _, t in order)
        summary.add("sweep total energy conserved", worst, 1e-6, worst < 1e-6)
    if isinstance(external, Gravity) and external.floor_strength > 0:
        b = bounce_report(traj)
        summary.results["bounce"] = {
            "contact_time": b.contact_time, "e_cm_pre": b.e_cm_pre, "e_cm_post": b.e_cm_post,
            "rel_kinetic_pre": b.rel_kinetic_pre, "rel_kinetic_post": b.rel_kinetic_post,
        }
        summary.add("bounce: e_cm change", b.delta_e_cm, "< 0", b.delta_e_cm < 0)
        summary.add("bounce: rel_kinetic change", b.delta_rel_kinetic, "> 0", b.delta_rel_kinetic > 0)
    if args.plot:
        from . import plotting

        plotting.plot_md(out)
    return summary


# --------------------------------------------------------------------------
# ensemble


def _ensemble_spec(config) -> EnsembleSpec:
    body = cfgmod.build_body(config)
    pair = cfgmod.build_pair(config["pair"])
    external = cfgmod.build_external(config["external"], body.atom_mass)
    scenario = cfgmod.build_scenario(config, body)
    sec = config["ensemble"]
    return EnsembleSpec(
        n_members=sec["n_members"],
        temperature=sec.get("temperature", scenario.temperature),
        base_seed=sec.get("base_seed", scenario.seed),
        body=body,
        scenario=scenario,
        pair=pair,
        external=external,
        sample_times=tuple(sec.get("sample_times", [0.0])),
        n_blocks=sec.get("n_blocks", 4),
        cm_thermal=sec.get("cm_thermal", True),
        dt_fraction=cfgmod.integrator_settings(config)["dt_fraction"],
    )


def cmd_ensemble(config, out: Path, args, timer: Timer) -> RunSummary:
    spec = _ensemble_spec(config)
    workers = resolve_workers(args.workers)
    summary = RunSummary("ensemble", config_hash(config))
    with timer.phase("members"):
        samples = run_ensemble(spec, workers)
    dim, nb, nt = spec.body.dim, spec.n_blocks, len(samples.times)
    header = (["member", "time"] + [f"P_{a}" for a in range(dim)] + [f"R_{a}" for a in range(dim)]
              + ["E_CM", "E_total", "rel_kinetic"] + [f"block_kinetic_{s}" for s in range(nb)])
    rows = []
    for m in range(spec.n_members):
        for t in range(nt):
            rows.append([m, samples.times[t], *samples["P"][m, t], *samples["R"][m, t], samples["E_CM"][m, t],
                         samples["E_total"][m, t], samples["rel_kinetic"][m, t], *samples["block_kinetic"][m, t]])
    write_csv(out / "ensemble.csv", header, rows)

    order = min(4, spec.n_members)
    observables = {f"P_{a}": samples["P"][:, :, a] for a in range(dim)}
    observables.update({k: samples[k] for k in ("E_CM", "E_total", "rel_kinetic")})
    rep_rows = []
    with timer.phase("estimators"):
        for name, values in observables.items():
            for t in range(nt):
                c = cumulants(values[:, t], order)
                rep_rows.append([name, spec.body.n_atoms, samples.times[t], *c.as_row()])
    write_csv(out / "report.csv", ["observable", "N", "time", "mean", "variance", "cumulant3", "cumulant4",
                                   "se_mean", "se_variance", "se_cumulant3", "se_cumulant4"], rep_rows)

    block = samples["block_kinetic"][:, -1, :]
    if nb >= 2 and spec.n_members >= 30:
        ind = independence_test(block)
        write_csv(out / "independence.csv", ["block_s", "block_t", "correlation"],
                  [[s, t, ind.correlation[s, t]] for s in range(nb) for t in range(nb)])
        add = variance_additivity(block)
        summary.results["independence"] = {"max_adjacent": ind.max_adjacent, "max_nonadjacent": ind.max_nonadjacent,
                                           "undefined_blocks": ind.undefined}
        summary.results["additivity_block_kinetic"] = {"var_of_sum": add.var_of_sum, "sum_of_vars": add.sum_of_vars,
                                                       "n_joint_se": add.n_se}
        summary.add("block kinetic cross-correlation, adjacent (max |r|)", ind.max_adjacent, None, True,
                    guard=False, note="reported")
        summary.add("block kinetic cross-correlation, non-adjacent (max |r|)", ind.max_nonadjacent, None, True,
                    guard=False, note="reported")
        summary.add("block kinetic variance additivity (joint SEs)", add.n_se, 3.0, add.holds(), guard=False,
                    note="reported")

    n_values = config["ensemble"].get("n_values")
    if n_values:
        partial = out / "scaling.csv"
        header = ["N", "delta_P", "delta_E_total_rel", "delta_E_cm_rel"]

        def flush(n, rowsd):
            done = len(rowsd["P"])
            ns = sorted(n_values)[:done]
            write_csv(partial, header, [[ns[i], rowsd["P"][i], rowsd["E_total"][i], rowsd["E_CM"][i]]
                                        for i in range(done)])

        with timer.phase("scaling"):
            rep = scaling_study(spec, n_values, workers, progress=flush)
        write_csv(partial, header, [[n, a, b, c] for n, a, b, c in
                                    zip(rep.n_values, rep.delta_P, rep.delta_E_total, rep.delta_E_cm)])
        fits = {k: {"slope": f.slope, "intercept": f.intercept, "slope_se": f.slope_se,
                    "ci95": [float(f.ci_low), float(f.ci_high)], "n_points": f.n_points}
                for k, f in rep.fits.items()}
        write_json(out / "scaling.json", {"fits": fits, "excluded": rep.excluded, "se_log": rep.se_log,
                                          "observables": {"P": "absolute std", "E_total": "std / mean",
                                                          "E_CM": "std / mean"}})
        summary.results["scaling"] = fits
        for key, target in (("P", 0.5), ("E_total", -0.5)):
            if key in rep.fits:
                f = rep.fits[key]
                summary.add(f"scaling slope {key}", f.slope, f"{target} +/- 0.05", abs(f.slope - target) <= 0.05,
                            guard=False, note=f"95% CI [{f.ci_low:.4f}, {f.ci_high:.4f}]")
    if args.plot:
        from . import plotting

        plotting.plot_ensemble(out)
    return summary


# --------------------------------------------------------------------------
# quantum


def cmd_quantum(config, out: Path, args, timer: Timer) -> RunSummary:
    if "quantum" not in config:
        from .errors import ConfigurationError

        raise ConfigurationError("the quantum subcommand needs a quantum section")
    sec = config["quantum"]
    mass = sec.get("mass", 1.0)
    params = QuantumParams(
        dt=sec["dt"], n_steps=sec["n_steps"], n_points=tuple(sec.get("n_points", (256, 256))),
        extent=tuple(sec.get("extent", (16.0, 16.0))), hbar=sec.get("hbar", 1.0), mass=mass,
        record_stride=sec.get("record_stride", 10), boundary_tol=sec.get("boundary_tol", 1e-10),
    )
    external = cfgmod.build_external(sec.get("external") or config["external"], mass)
    pair = cfgmod.build_pair(sec["pair"]) if "pair" in sec else HarmonicSpring(1.0, 0.0)
    packet = PacketSpec(**sec.get("packet", {}))
    summary = RunSummary("quantum", config_hash(config))
    with timer.phase("propagate"):
        res = factorization_experiment(external, params, pair, packet)
    write_csv(out / "quantum.csv", ["time", "mean_X", "mean_P", "var_X", "var_P", "energy", "purity", "gap"],
              np.column_stack([res.times, res.mean_X, res.mean_P, res.var_X, res.var_P, res.energy,
                               res.purity, res.gap]))
    r1 = float(np.max(np.abs(res.residual1))) if res.residual1 is not None else 0.0
    r2 = float(np.max(np.abs(res.residual2))) if res.residual2 is not None else 0.0
    summary.results.update({"min_purity": res.min_purity(), "norm_drift": res.norm_drift(),
                            "energy_drift": res.energy_drift(), "residual1_max": r1, "residual2_max": r2})
    summary.add("norm drift", res.norm_drift(), 1e-9, res.norm_drift() < 1e-9)
    summary.add("Ehrenfest residual1 (max)", r1, 1e-6, r1 < 1e-6)
    summary.add("Ehrenfest residual2 (max)", r2, None, True, guard=False, note="reported")
    summary.add("energy drift (relative)", res.energy_drift(), None, True, guard=False, note="reported")
    if _is_linear_or_harmonic(external):
        summary.add("purity stays 1", 1.0 - res.min_purity(), 1e-6, res.min_purity() >= 1 - 1e-6)
    else:
        thr = sec.get("purity_threshold", 0.999)
        t_below = res.time_below(thr)
        summary.results["time_to_purity_threshold"] = t_below
        summary.add(f"purity drops below {thr}", res.min_purity(), thr, t_below is not None, guard=False,
                    note=f"time to threshold {t_below}")
    if "gap_widths" in sec:
        widths = sorted(sec["gap_widths"])
        t_gap = sec.get("gap_time", 0.25)
        with timer.phase("gap_sweep"):
            gaps = gap_sweep(external, params, widths, t_gap, pair, packet)
        write_csv(out / "gap_sweep.csv", ["sigma_X", "abs_gap"], np.column_stack([widths, gaps]))
        mono = bool(np.all(np.diff(gaps) > 0))
        summary.results["gap_sweep"] = {"time": t_gap, "widths": widths, "gaps": gaps}
        summary.add(f"gap grows with packet width at t={t_gap}", list(gaps), "monotone", mono, guard=False)
    if args.plot:
        from . import plotting

        plotting.plot_quantum(out)
    return summary


COMMANDS = {
    "check-coords": cmd_check_coords,
    "md": cmd_md,
    "ensemble": cmd_ensemble,
    "quantum": cmd_quantum,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emergence-lab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--out", default=None, help="output directory (default: output_dir from config or ./out)")
        p.add_argument("--seed", type=int, default=None, help="override scenario/ensemble seeds")
        p.add_argument("--workers", type=int, default=None,
                       help="worker processes for ensembles (default: $EMERGENCE_LAB_WORKERS or 1)")
        p.add_argument("--plot", action="store_true", help="also render PNG figures from the CSVs")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    timer = Timer()
    try:
        config = cfgmod.apply_seed(cfgmod.load_config(args.config), args.seed)
        out = Path(args.out or config.get("output_dir") or "out")
        out.mkdir(parents=True, exist_ok=True)
        summary = COMMANDS[args.command](config, out, args, timer)
    except LabError as exc:
        step = getattr(exc, "step", None)
        axis = getattr(exc, "axis", None)
        extra = f" (step {step})" if step is not None else (f" (axis {axis})" if axis is not None else "")
        print(f"error: {type(exc).__name__}: {exc}{extra}", file=sys.stderr)
        return exc.exit_code
    summary.write(out)
    write_json(out / "timing.json", {"seconds": timer.phases})
    sys.stdout.write(summary.text())
    return 4 if summary.failed_guards else 0


if __name__ == "__main__":
    sys.exit(main())
