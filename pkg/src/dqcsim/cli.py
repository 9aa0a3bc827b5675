"""Experiment runner.

    dqcsim run --experiment grover --seed 1 --out result.json

Writes one JSON document: ``schema_version``, ``experiment``, ``seed``, the
full effective ``config`` (enough to re-run), the ``payload`` and a ``meta``
block (timestamp, scheduler, wall time). The payload depends only on
(config, seed); ``meta`` is the only part that changes between runs.

Sub-task seeds: the master seed feeds ``SeedSequence(seed).spawn(8)`` and
each stage of an experiment takes its own child in a fixed order.

Exit codes: 0 ok, 1 config error, 2 runtime error (including an unwritable
output path), 3 tomography did not converge, 64 unknown experiment or bad
usage.
"""

from __future__ import annotations

import argparse
import copy
import datetime
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .budget import error_budget
from .calibration import (CompositePulseConfig, naive_pi_pulse_leakage, optimize_phase, run_rbm,
                          scan_ratios, transfer_channel_ptm)
from .compiler import ISWAP, SWAP, NonlocalCZ, circuit_superoperator, execute, grover_circuit, iswap_circuit, swap_circuit
from .config import ConfigError, build_noise, build_runtime_config, load_config, noiseless_config
from .core import CZ
from .link import campaign_statistics, generate_entanglement, herald_fidelity, mean_rate
from .noise import PSI_PLUS
from .protocol import memory_channel, qgt_channel, teleported_cz
from .runtime import LinkTimeout, ProtocolOrderError, Runtime
from .tomography import (NonConvergence, ProcessMatrix, TomographySettings, average_gate_fidelity, bootstrap,
                         mle_reconstruct, simulate_qpt_records, simulate_qst_records, state_tomography)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_NONCONVERGENCE, EXIT_USAGE = 0, 1, 2, 3, 64

EXPERIMENTS = ("cz-qpt", "iswap-qpt", "swap-qpt", "grover", "bell-qst", "memory-qpt", "rbm",
               "composite-pulse", "error-budget")


class Context:
    def __init__(self, cfg: dict, seed: int, scheduler: str):
        self.cfg = cfg
        self.seed = seed
        self.scheduler = scheduler
        self.noise = build_noise(cfg)
        self.runtime_config = build_runtime_config(cfg)
        self.streams = np.random.SeedSequence(seed).spawn(8)
        self.exp = cfg["experiments"]

    def rng(self, k: int) -> np.random.Generator:
        return np.random.default_rng(self.streams[k])

    def seed_for(self, k: int) -> int:
        return int(self.streams[k].generate_state(1)[0])

    def circuit_povm(self):
        return tuple(self.noise[m].spam_for("circuit") for m in ("Alice", "Bob"))


def _qpt_payload(ctx: Context, sup: np.ndarray, target: np.ndarray, n_qubits: int, povm) -> dict:
    settings = TomographySettings(n_qubits, ctx.exp["tomography_shots"], povm)
    records = simulate_qpt_records(sup, settings, ctx.rng(1))
    chi, res = mle_reconstruct(records, settings, raise_on_failure=True)
    std, _ = bootstrap(records, settings, ctx.exp["bootstrap_resamples"], ctx.rng(2), target)
    exact = ProcessMatrix.from_process(sup)
    return {
        "chi_real": np.round(chi.chi.real, 12).tolist(),
        "chi_imag": np.round(chi.chi.imag, 12).tolist(),
        "average_gate_fidelity": average_gate_fidelity(chi, target),
        "average_gate_fidelity_std": std,
        "exact_channel_fidelity": average_gate_fidelity(exact, target),
        "mle": {"iterations": res.iterations, "converged": res.converged,
                "log_likelihood": res.log_likelihood},
        "shots_per_setting": settings.shots_per_setting,
    }


def _herald_payload(ctx: Context, campaigns: int = 1000) -> dict:
    rng = ctx.rng(3)
    recs = [generate_entanglement(ctx.runtime_config.schedule, ctx.noise.bell, rng) for _ in range(campaigns)]
    stats = campaign_statistics(recs)
    stats["expected_rate_per_s"] = mean_rate(ctx.runtime_config.schedule) * 1e6
    stats["herald_fidelity"] = herald_fidelity(recs[0])
    return stats


def _event_summary(ctx: Context) -> dict:
    rt = Runtime(ctx.noise, ctx.runtime_config, ctx.streams[4], mode=ctx.scheduler)
    teleported_cz(rt)
    kinds: dict[str, int] = {}
    for e in rt.events:
        kinds[e["event"]] = kinds.get(e["event"], 0) + 1
    return {"events": dict(sorted(kinds.items())), "counters": dict(rt.counters),
            "heralds": [h.summary() for h in rt.heralds], "end_time_us": max(a.time for a in rt.agents.values())}


def _qgt(ctx: Context) -> np.ndarray:
    return qgt_channel(ctx.noise, ctx.runtime_config, ctx.seed_for(0), ctx.exp["channel_campaigns"])


def exp_cz_qpt(ctx: Context) -> dict:
    out = _qpt_payload(ctx, _qgt(ctx), CZ, 2, ctx.circuit_povm())
    out["herald_statistics"] = _herald_payload(ctx)
    out["event_log"] = _event_summary(ctx)
    return out


def _compiled_qpt(ctx: Context, circuit, target) -> dict:
    sup = circuit_superoperator(circuit, ctx.noise, _qgt(ctx))
    out = _qpt_payload(ctx, sup, target, 2, ctx.circuit_povm())
    out["circuit"] = circuit.to_text()
    out["teleported_cz_count"] = circuit.count(NonlocalCZ)
    return out


def exp_iswap_qpt(ctx: Context) -> dict:
    return _compiled_qpt(ctx, iswap_circuit(), ISWAP)


def exp_swap_qpt(ctx: Context) -> dict:
    return _compiled_qpt(ctx, swap_circuit(), SWAP)


def exp_grover(ctx: Context) -> dict:
    shots = ctx.exp["grover_shots"]
    rows = {}
    children = ctx.streams[5].spawn(4)
    for k, marked in enumerate(("00", "01", "10", "11")):
        seed = int(children[k].generate_state(1)[0])
        hist = execute(grover_circuit(marked), ctx.noise, ctx.runtime_config, seed, shots,
                       scheduler=ctx.scheduler)
        rows[marked] = {"histogram": hist, "success": hist.get(marked, 0) / shots}
    return {"shots": shots, "marked": rows, "mean_success": float(np.mean([r["success"] for r in rows.values()]))}


def exp_bell_qst(ctx: Context) -> dict:
    rec = generate_entanglement(ctx.runtime_config.schedule, ctx.noise.bell, ctx.rng(3))
    povm = tuple(ctx.noise[m].spam_for("network") for m in ("Alice", "Bob"))
    settings = TomographySettings(2, ctx.exp["bell_qst_shots"], povm)
    records = simulate_qst_records(rec.state.density(), settings, ctx.rng(1))
    rho, fid, res = state_tomography(records, settings, PSI_PLUS)
    if not res.converged:
        raise NonConvergence(res)
    return {"fidelity": fid, "herald_fidelity": herald_fidelity(rec), "rho_real": np.round(rho.real, 12).tolist(),
            "rho_imag": np.round(rho.imag, 12).tolist(), "mle_iterations": res.iterations}


def exp_memory_qpt(ctx: Context) -> dict:
    out = {}
    for name in ("Alice", "Bob"):
        sup = memory_channel(ctx.noise, ctx.runtime_config, ctx.seed_for(0), name, ctx.exp["channel_campaigns"])
        out[name] = _qpt_payload(ctx, sup, np.eye(2), 1, (ctx.noise[name].spam_for("circuit"),))
    return out


def exp_rbm(ctx: Context) -> dict:
    out = {}
    children = ctx.streams[6].spawn(2)
    for k, name in enumerate(("Alice", "Bob")):
        mod = ctx.noise[name]
        res = run_rbm(mod.transfer_error, ctx.exp["rbm_lengths"], ctx.exp["rbm_sequences"],
                      np.random.default_rng(children[k]), shots=ctx.exp["rbm_shots"],
                      spam=mod.spam_for("circuit"), channel_ptm=transfer_channel_ptm(mod))
        out[name] = {"table": res.table(), "B": res.B, "p": res.p, "transfer_error": res.error,
                     "configured_transfer_error": mod.transfer_error, "residuals": res.residuals,
                     "fit_ok": res.fit_ok, "note": res.note}
    return out


def exp_composite_pulse(ctx: Context) -> dict:
    cp = ctx.cfg["composite_pulse"]
    base = CompositePulseConfig(cp["rabi_T0_khz"], cp["rabi_ratio"], cp["detuning_khz"])
    rows = scan_ratios(base, cp["ratio_scan"], cp["threshold"])
    opt = optimize_phase(base, cp["threshold"])
    feasible = [r for r in rows if r["feasible"]]
    best = min(feasible, key=lambda r: abs(r["phi2_over_2pi"] - 0.231)) if feasible else None
    return {
        "configured": {"ratio": base.rabi_ratio, "phi2": opt.phi2, "phi2_over_2pi": opt.phi2 / (2 * np.pi),
                       "leakage": opt.leakage, "transfer_error": opt.transfer_error, "feasible": opt.feasible,
                       "degenerate": opt.degenerate, "note": opt.note,
                       "naive_leakage": naive_pi_pulse_leakage(base)},
        "scan": rows,
        "closest_to_0.231": best,
    }


def exp_error_budget(ctx: Context) -> dict:
    rep = error_budget(ctx.noise, ctx.runtime_config, ctx.seed_for(0), campaigns=ctx.exp["channel_campaigns"],
                       reported=ctx.cfg.get("error_budget_reported", {}))
    return rep.to_json()


RUNNERS = {
    "cz-qpt": exp_cz_qpt, "iswap-qpt": exp_iswap_qpt, "swap-qpt": exp_swap_qpt, "grover": exp_grover,
    "bell-qst": exp_bell_qst, "memory-qpt": exp_memory_qpt, "rbm": exp_rbm,
    "composite-pulse": exp_composite_pulse, "error-budget": exp_error_budget,
}


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def effective_config(config_path: str | None, noiseless: bool, shots_override: int | None) -> dict:
    cfg = load_config(config_path)
    if noiseless:
        cfg = noiseless_config(cfg)
    if shots_override is not None:
        if shots_override < 1:
            raise ConfigError("--shots-override must be positive")
        for key in ("tomography_shots", "grover_shots", "bell_qst_shots"):
            cfg["experiments"][key] = shots_override
    return cfg


def run_experiment(experiment: str, cfg: dict, seed: int, scheduler: str = "sequential") -> dict:
    """Result document (without meta) for one experiment."""
    if experiment not in RUNNERS:
        raise KeyError(experiment)
    ctx = Context(copy.deepcopy(cfg), seed, scheduler)
    payload = _plain(RUNNERS[experiment](ctx))
    return {"schema_version": 1, "experiment": experiment, "seed": seed, "config": cfg, "payload": payload}


def payload_bytes(doc: dict) -> bytes:
    return json.dumps(doc["payload"], sort_keys=True).encode()


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dqcsim", description="Distributed quantum computing simulator.")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one experiment and write result JSON",
                         formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    run.add_argument("--experiment", required=True, help=f"one of: {', '.join(EXPERIMENTS)}")
    run.add_argument("--config", default=None, help="JSON config (schema_version 1); default: calibrated profile")
    run.add_argument("--seed", type=int, default=0, help="master seed")
    run.add_argument("--out", default="-", help="output path, '-' for stdout")
    run.add_argument("--shots-override", type=int, default=None, help="shots for tomography, Grover and QST")
    run.add_argument("--noiseless", action="store_true", help="zero every noise parameter")
    run.add_argument("--scheduler", choices=("sequential", "threaded"), default="sequential",
                     help="module scheduler; results are identical in both")
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if args.experiment not in EXPERIMENTS:
        print(f"error: unknown experiment {args.experiment!r}; choose from {', '.join(EXPERIMENTS)}",
              file=sys.stderr)
        return EXIT_USAGE
    try:
        cfg = effective_config(args.config, args.noiseless, args.shots_override)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.out != "-":
        out = Path(args.out)
        if not out.parent.exists() or (out.exists() and not os.access(out, os.W_OK)) \
                or not os.access(out.parent, os.W_OK):
            print(f"runtime error: output path {out} is not writable", file=sys.stderr)
            return EXIT_RUNTIME
    start = time.perf_counter()
    try:
        doc = run_experiment(args.experiment, cfg, args.seed, args.scheduler)
    except NonConvergence as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (LinkTimeout, ProtocolOrderError, ValueError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    doc["meta"] = {
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "scheduler": args.scheduler,
        "wall_time_s": round(time.perf_counter() - start, 3),
        "version": __version__,
    }
    text = json.dumps(doc, sort_keys=True, indent=1)
    try:
        if args.out == "-":
            sys.stdout.write(text + "\n")
        else:
            Path(args.out).write_text(text + "\n")
    except OSError as exc:
        print(f"runtime error: cannot write {args.out}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
