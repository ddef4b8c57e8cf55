"""Command-line harness: design, simulate, train, evaluate, and the
experiment reproductions (run-pair, validate-surface, montecarlo,
delay-sweep, noise-report).

All outputs are JSON/CSV under --out and are a pure function of the
arguments and --seed.  Exit codes: 0 success, 1 infeasible target or
diverged run, 2 bad arguments.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .chain import ChainParameters, ElementValues, nominal_elements
from .designer import (
    DesignTarget,
    design_search,
    enob_to_snr_db,
    expected_snr,
    snr_surface,
)
from .errors import InfeasibleDesign, SimulationDiverged
from .experiments import (
    delay_sweep,
    derive_seed,
    enob_histogram,
    montecarlo,
    noise_report,
    run_pair,
    validate_surface,
)
from .metrics import histogram_to_csv, snr_enob, state_histograms_to_csv, welch_psd
from .recon import FilterBank, default_decimation, estimate, train_filters, training_reference
from .records import read_record, write_record
from .simulator import ComparatorModel, HeldRandom, Sine, ZeroInput, simulate

FULL_N_RANGE = (2, 10)
FULL_OSR_RANGE = (10, 32)
FULL_MC_TRIALS = 100_000


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump_json(obj: dict, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load_params(args) -> ChainParameters:
    if not args.config:
        raise SystemExit("--config is required for this command")
    return ChainParameters.load(args.config)


def _int_list(text: str) -> list[int]:
    return [int(tok) for tok in text.split(",") if tok.strip()]


def cmd_design(args) -> int:
    if args.snr_db is not None:
        target_db = args.snr_db
    else:
        target_db = enob_to_snr_db(args.enob)
    n_range = FULL_N_RANGE if args.full else (args.n_min, args.n_max)
    osr_range = FULL_OSR_RANGE if args.full else (args.osr_min, args.osr_max)
    target = DesignTarget(
        target_snr_db=target_db,
        omega_b=2.0 * math.pi * args.bw_hz,
        delta_n=args.delta_n,
        n_range=n_range,
        osr_range=osr_range,
        v_max=args.v_max,
    )
    out = _outdir(args)
    if args.surface_csv:
        snr_surface(target).to_csv(out / "snr_surface.csv")
    params = design_search(target)
    params.save(out / "config.json")
    achieved = expected_snr(params)
    print(f"selected N={params.n_stages} OSR={params.osr}")
    print(f"expected SNR {achieved:.2f} dB (target {target_db:.2f} dB)")
    print(f"kappas {np.array2string(params.kappas, precision=6)}")
    print(f"tau {params.tau:.4e} s   f_s {params.f_s:.4e} Hz")
    print(f"wrote {out / 'config.json'}")
    return 0


def _make_input(args, params: ChainParameters):
    kind = args.input
    if kind == "sine":
        return Sine(amplitude=args.amplitude * params.v_max,
                    omega=args.omega_frac * params.omega_b)
    if kind == "held":
        return HeldRandom(amplitude=args.amplitude * params.v_max, hold_cycles=params.osr)
    if kind == "zero":
        return ZeroInput()
    raise SystemExit(f"unknown input kind {kind!r}")


def cmd_simulate(args) -> int:
    params = _load_params(args)
    elements = nominal_elements(params, args.r_ohms)
    comp = ComparatorModel(
        offsets=np.zeros(params.n_stages),
        delay=args.delay_norm / params.f_s,
    )
    n_cycles = args.cycles if args.cycles else 4096 * params.osr
    record = simulate(
        elements, params, comp, _make_input(args, params), n_cycles,
        substeps=args.substeps, seed=args.seed,
    )
    out = _outdir(args)
    write_record(record, out / "record.rcsr")
    print(f"simulated {n_cycles} cycles; wrote {out / 'record.rcsr'}")
    return 0


def cmd_train(args) -> int:
    record = read_record(args.record)
    reference = training_reference(
        record, default_decimation(int(record.config["params"]["osr"]))
    )
    latency = "auto" if args.latency == "auto" else int(args.latency)
    bank, report = train_filters(
        record, reference, taps=args.taps, ridge=args.ridge, latency=latency,
    )
    out = _outdir(args)
    bank.save(out / "filters.json")
    _dump_json(report.to_dict(), out / "training_report.json")
    print(f"residual MSE {report.residual_mse:.4e}; wrote {out / 'filters.json'}")
    return 0


def cmd_evaluate(args) -> int:
    record = read_record(args.record)
    bank = FilterBank.load(args.filters)
    u_hat = estimate(record, bank)
    params = record.config["params"]
    psd = welch_psd(
        u_hat, sample_rate=params["f_s"] / bank.decimation, full_scale=params["v_max"]
    )
    sig = record.config["input"]
    if sig["kind"] != "sine":
        raise SystemExit("evaluate expects a sine-input record")
    snr_db, enob = snr_enob(
        psd,
        signal_freq=sig["omega"] / (2.0 * math.pi),
        band=(0.0, params["omega_b"] / (2.0 * math.pi)),
    )
    out = _outdir(args)
    psd.to_csv(out / "psd.csv")
    _dump_json({"snr_db": snr_db, "enob": enob}, out / "metrics.json")
    print(f"SNR {snr_db:.2f} dB   ENOB {enob:.2f}")
    return 0


def cmd_run_pair(args) -> int:
    params = _load_params(args)
    result = run_pair(
        params,
        seed=args.seed,
        cycles_scale=args.cycles_scale,
        delay=args.delay_norm / params.f_s,
        r_value=args.r_ohms,
    )
    out = _outdir(args)
    write_record(result.training_record, out / "train_record.rcsr")
    write_record(result.test_record, out / "test_record.rcsr")
    result.bank.save(out / "filters.json")
    result.psd.to_csv(out / "psd.csv")
    state_histograms_to_csv(result.test_record, out / "state_hist.csv")
    _dump_json(result.metrics, out / "metrics.json")
    print(
        f"SNR {result.metrics['snr_db']:.2f} dB   ENOB {result.metrics['enob']:.2f}   "
        f"expected {result.metrics['expected_snr_db']:.2f} dB"
    )
    print(f"RMS(v_xN)/v_max {result.metrics['rms_last_norm']:.3e}   "
          f"swing violations {result.metrics['swing_violations']}")
    return 0


def cmd_validate_surface(args) -> int:
    if args.full:
        n_values = list(range(FULL_N_RANGE[0], FULL_N_RANGE[1] + 1))
        osr_values = list(range(FULL_OSR_RANGE[0], FULL_OSR_RANGE[1] + 1))
    else:
        n_values = _int_list(args.n)
        osr_values = _int_list(args.osr)
    rows = validate_surface(
        n_values,
        osr_values,
        delta_n=args.delta_n,
        omega_b=2.0 * math.pi * args.bw_hz,
        v_max=args.v_max,
        cycles_scale=args.cycles_scale,
        seed=args.seed,
        jobs=args.jobs,
    )
    out = _outdir(args)
    lines = ["N,OSR,expected_db,simulated_db,gap_db,error"]
    for r in rows:
        lines.append(
            f"{r['n']},{r['osr']},{r['expected_db']!r},{r['simulated_db']!r},"
            f"{r['gap_db']!r},{r['error']}"
        )
    (out / "surface_validation.csv").write_text("\n".join(lines) + "\n")
    ok = [r for r in rows if not r["error"]]
    if ok:
        worst = max(abs(r["gap_db"]) for r in ok)
        print(f"{len(ok)}/{len(rows)} cells; worst |gap| {worst:.2f} dB")
    print(f"wrote {out / 'surface_validation.csv'}")
    return 0


def cmd_montecarlo(args) -> int:
    params = _load_params(args)
    trials = FULL_MC_TRIALS if args.full else args.trials
    result = montecarlo(
        params,
        mode=args.mode,
        trials=trials,
        fraction=args.fraction,
        seed=args.seed,
        jobs=args.jobs,
        cycles_scale=args.cycles_scale,
    )
    out = _outdir(args)
    centers, counts = enob_histogram(result["trials"])
    histogram_to_csv(centers, counts, out / "enob_histogram.csv")
    lines = ["trial,enob,snr_db,diverged"]
    for r in result["trials"]:
        lines.append(f"{r['trial']},{r['enob']!r},{r['snr_db']!r},{int(r['diverged'])}")
    (out / "trials.csv").write_text("\n".join(lines) + "\n")
    _dump_json(result["summary"], out / "mc_summary.json")
    s = result["summary"]
    print(
        f"{s['mode']} mode, {s['trials']} trials: ENOB "
        f"[{s['enob_min']:.3f}, {s['enob_max']:.3f}] around nominal "
        f"{s['nominal_enob']:.3f} ({s['diverged']} diverged)"
    )
    return 1 if s["diverged"] else 0


def cmd_delay_sweep(args) -> int:
    params = _load_params(args)
    rows = delay_sweep(
        params,
        n_points=args.points,
        seed=args.seed,
        jobs=args.jobs,
        cycles_scale=args.cycles_scale,
    )
    out = _outdir(args)
    lines = ["delay_norm,enob,snr_db,error"]
    for r in rows:
        lines.append(f"{r['delay_norm']!r},{r['enob']!r},{r['snr_db']!r},{r['error']}")
    (out / "delay_sweep.csv").write_text("\n".join(lines) + "\n")
    valid = [r for r in rows if not r["error"]]
    if valid:
        best = max(valid, key=lambda r: r["enob"])
        print(f"peak ENOB {best['enob']:.3f} at delay {best['delay_norm']:.3f}/f_s")
    print(f"wrote {out / 'delay_sweep.csv'}")
    return 0


def cmd_noise_report(args) -> int:
    params = _load_params(args)
    snr_db = args.snr_db if args.snr_db is not None else expected_snr(params)
    report = noise_report(params, snr_db, temperature=args.temperature)
    out = _outdir(args)
    budget = report["budget"]
    _dump_json(budget.to_dict(), out / "noise_budget.json")
    n = params.n_stages
    header = "omega_norm," + ",".join(f"g_norm_db_{s}" for s in range(1, n + 1))
    lines = [header]
    for i, w in enumerate(report["omega_norm"]):
        row = ",".join(repr(float(v)) for v in report["transfer_db"][i])
        lines.append(f"{float(w)!r},{row}")
    (out / "noise_transfer.csv").write_text("\n".join(lines) + "\n")
    ladder = ", ".join(f"{r:.4g}" for r in budget.r_ladder)
    print(f"Phi {budget.phi:.1f}   C {budget.cap_value:.3e} F")
    print(f"resistor ladder [{ladder}] ohm")
    print(f"wrote {out / 'noise_budget.json'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rcchain",
        description="Design and behavioral-simulation lab for the RC-chain ADC",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="chain configuration JSON")
        p.add_argument("--seed", type=int, default=0, help="master seed")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers")
        p.add_argument("--full", action="store_true",
                       help="paper-scale ranges/trial counts instead of desk scale")

    p = sub.add_parser("design", help="search the (N, OSR) grid for a target")
    common(p)
    p.add_argument("--enob", type=float, default=10.0, help="target resolution in bits")
    p.add_argument("--snr-db", type=float, default=None,
                   help="target SNR in dB (overrides --enob)")
    p.add_argument("--bw-hz", type=float, required=True, help="signal bandwidth in Hz")
    p.add_argument("--delta-n", type=float, required=True,
                   help="comparator sensitivity floor delta^N (fraction of v_max)")
    p.add_argument("--v-max", type=float, default=1.0)
    p.add_argument("--n-min", type=int, default=2)
    p.add_argument("--n-max", type=int, default=10)
    p.add_argument("--osr-min", type=int, default=10)
    p.add_argument("--osr-max", type=int, default=32)
    p.add_argument("--surface-csv", action="store_true",
                   help="also export the full expected-SNR surface")
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("simulate", help="run one transient simulation")
    common(p)
    p.add_argument("--input", choices=("sine", "held", "zero"), default="sine")
    p.add_argument("--amplitude", type=float, default=1.0, help="fraction of v_max")
    p.add_argument("--omega-frac", type=float, default=0.5,
                   help="sine frequency as a fraction of omega_b")
    p.add_argument("--cycles", type=int, default=0, help="clock cycles (0 = 4096*OSR)")
    p.add_argument("--substeps", type=int, default=16)
    p.add_argument("--delay-norm", type=float, default=0.0, help="loop delay * f_s")
    p.add_argument("--r-ohms", type=float, default=1.0)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="fit reconstruction filters from a record")
    common(p)
    p.add_argument("--record", required=True, help="training record (.rcsr)")
    p.add_argument("--taps", type=int, default=32)
    p.add_argument("--ridge", type=float, default=1e-10)
    p.add_argument("--latency", default="16", help="alignment in samples, or 'auto'")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a sine record with a filter bank")
    common(p)
    p.add_argument("--record", required=True, help="test record (.rcsr)")
    p.add_argument("--filters", required=True, help="filter bank JSON")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run-pair", help="train/test protocol for one config")
    common(p)
    p.add_argument("--cycles-scale", type=float, default=1.0,
                   help="record length as a fraction of 4096 Nyquist periods")
    p.add_argument("--delay-norm", type=float, default=0.0)
    p.add_argument("--r-ohms", type=float, default=1.0)
    p.set_defaults(func=cmd_run_pair)

    p = sub.add_parser("validate-surface", help="expected vs simulated SNR per cell")
    common(p)
    p.add_argument("--n", default="3,4,6", help="comma-separated stage counts")
    p.add_argument("--osr", default="12,20,32", help="comma-separated OSR values")
    p.add_argument("--delta-n", type=float, default=1e-3)
    p.add_argument("--bw-hz", type=float, default=1e7)
    p.add_argument("--v-max", type=float, default=1.0)
    p.add_argument("--cycles-scale", type=float, default=1.0)
    p.set_defaults(func=cmd_validate_surface)

    p = sub.add_parser("montecarlo", help="component / offset tolerance study")
    common(p)
    p.add_argument("--mode", choices=("rc", "offset"), required=True)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--fraction", type=float, default=0.2)
    p.add_argument("--cycles-scale", type=float, default=1.0)
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("delay-sweep", help="ENOB vs digital loop delay")
    common(p)
    p.add_argument("--points", type=int, default=17)
    p.add_argument("--cycles-scale", type=float, default=1.0)
    p.set_defaults(func=cmd_delay_sweep)

    p = sub.add_parser("noise-report", help="thermal noise budget and sizing")
    common(p)
    p.add_argument("--snr-db", type=float, default=None,
                   help="target conversion SNR (default: expected SNR of the config)")
    p.add_argument("--temperature", type=float, default=300.0)
    p.set_defaults(func=cmd_noise_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InfeasibleDesign, SimulationDiverged) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
