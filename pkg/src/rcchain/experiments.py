"""End-to-end experiment protocols shared by the CLI and the test suite.

Every experiment is a pure function of its arguments and a master seed.
Fan-out over trials, grid cells or sweep points derives one child seed per
index, so results do not depend on worker scheduling or the degree of
parallelism.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .chain import ChainParameters, ElementValues, build_nominal_config, nominal_elements
from .designer import expected_snr, noise_transfer, size_components, snr_db_to_enob
from .errors import SimulationDiverged
from .metrics import InputCurrentStats, PsdEstimate, input_current_stats, snr_enob, welch_psd
from .recon import (
    FilterBank,
    TrainingReport,
    default_decimation,
    estimate,
    train_filters,
    training_reference,
)
from .simulator import (
    ComparatorModel,
    HeldRandom,
    NoiseSpec,
    Sine,
    SimRecord,
    perturb_elements,
    simulate,
)

RECORD_NYQUIST_PERIODS = 4096  # 2**12 Nyquist periods per run


def derive_seed(master: int, *key: int) -> int:
    """Stable child seed for one indexed unit of work."""
    ss = np.random.SeedSequence([int(master)] + [int(k) for k in key])
    return int(ss.generate_state(1, np.uint64)[0])


def _parallel_map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


@dataclass
class RunPairResult:
    """Artifacts of one train/test simulation pair."""

    params: ChainParameters
    elements: ElementValues
    training_record: SimRecord
    test_record: SimRecord
    bank: FilterBank
    training_report: TrainingReport
    u_hat: np.ndarray
    psd: PsdEstimate
    current_stats: InputCurrentStats
    metrics: dict


def test_tone(params: ChainParameters, decimation: int, n_out: int) -> Sine:
    """Full-scale sine near half the band edge on a coherent PSD bin.

    The bin is chosen coprime to the Welch segment length (n_out//8), the
    usual coherent-testing rule.  With the clocked loop being fully
    deterministic, a tone whose period divides the segment locks the whole
    converter into a short limit cycle and the conversion error collapses
    into a handful of harmonics instead of a noise floor; a coprime bin
    forces the joint period to span the entire segment.  The shift from
    exactly half-band is about 1.6 % for the default record length.
    """
    rate = params.f_s / decimation
    segment_len = max(16, n_out // 8)
    df = rate / segment_len
    ideal_bin = round(params.omega_b / (4.0 * math.pi) / df)
    sig_bin = ideal_bin
    for offset in range(segment_len):
        for cand in (ideal_bin - offset, ideal_bin + offset):
            if cand >= 1 and math.gcd(cand, segment_len) == 1:
                sig_bin = cand
                break
        else:
            continue
        break
    return Sine(amplitude=params.v_max, omega=2.0 * math.pi * sig_bin * df)


def run_pair(
    params: ChainParameters,
    elements: Optional[ElementValues] = None,
    seed: int = 0,
    cycles_scale: float = 1.0,
    substeps: int = 16,
    delay: float = 0.0,
    offsets: Optional[np.ndarray] = None,
    noise: Optional[NoiseSpec] = None,
    latency=16,
    ridge: float = 1e-10,
    r_value: float = 1.0,
) -> RunPairResult:
    """Training/test protocol for one configuration.

    First run: piecewise-constant input uniform over [-v_max, v_max],
    redrawn every Nyquist period, used to fit the reconstruction filters.
    Second run: full-scale sine at half the band edge; its reconstruction
    is scored by SNR/ENOB straight from the PSD.
    """
    if elements is None:
        elements = nominal_elements(params, r_value)
    n_nyquist = int(round(RECORD_NYQUIST_PERIODS * cycles_scale))
    n_cycles = n_nyquist * params.osr
    comp = ComparatorModel(
        offsets=np.zeros(params.n_stages) if offsets is None else np.asarray(offsets, float),
        delay=delay,
    )

    train_sig = HeldRandom(amplitude=params.v_max, hold_cycles=params.osr)
    training_record = simulate(
        elements, params, comp, train_sig, n_cycles,
        substeps=substeps, noise=noise, seed=derive_seed(seed, 0),
    )
    decimation = default_decimation(params.osr)
    reference = training_reference(training_record, decimation)
    bank, report = train_filters(
        training_record, reference, ridge=ridge, latency=latency,
    )

    n_out = (n_cycles - training_record.warmup_cycles) // decimation
    test_sig = test_tone(params, decimation, n_out)
    test_record = simulate(
        elements, params, comp, test_sig, n_cycles,
        substeps=substeps, noise=noise, seed=derive_seed(seed, 1),
    )
    u_hat = estimate(test_record, bank)

    psd = welch_psd(u_hat, sample_rate=params.f_s / decimation, full_scale=params.v_max)
    snr_db, enob = snr_enob(
        psd,
        signal_freq=test_sig.omega / (2.0 * math.pi),
        band=(0.0, params.omega_b / (2.0 * math.pi)),
    )

    bounds = params.swing_bounds
    margins = test_record.state_max_abs / bounds
    rms_last = float(
        np.sqrt(np.mean(test_record.post_warmup_states()[:, -1] ** 2))
    ) / params.v_max
    current = input_current_stats(test_record, elements, test_sig)
    expected_db = expected_snr(params)

    metrics = {
        "snr_db": snr_db,
        "enob": enob,
        "expected_snr_db": expected_db,
        "snr_gap_db": snr_db - expected_db,
        "rms_last_norm": rms_last,
        "swing_margins": [float(m) for m in margins],
        "swing_violations": int(np.sum(margins > 1.0)),
        "signal_freq_hz": test_sig.omega / (2.0 * math.pi),
        "residual_mse": report.residual_mse,
        "latency": bank.latency,
        "n_cycles": n_cycles,
        "input_current": {
            "nominal_rms": current.nominal_rms,
            "excess_max": current.excess_max,
            "excess_bound": current.excess_bound,
            "within_bound": current.within_bound,
        },
    }
    return RunPairResult(
        params=params,
        elements=elements,
        training_record=training_record,
        test_record=test_record,
        bank=bank,
        training_report=report,
        u_hat=u_hat,
        psd=psd,
        current_stats=current,
        metrics=metrics,
    )


# ---------------------------------------------------------------------------
# expected-vs-simulated surface validation


def _surface_cell(args: dict) -> dict:
    n, osr = args["n"], args["osr"]
    try:
        params = build_nominal_config(
            n, osr, args["delta_n"] ** (1.0 / n), args["omega_b"], args["v_max"]
        )
        expected = expected_snr(params)
        result = run_pair(
            params,
            seed=derive_seed(args["seed"], n, osr),
            cycles_scale=args["cycles_scale"],
        )
        return {
            "n": n,
            "osr": osr,
            "expected_db": expected,
            "simulated_db": result.metrics["snr_db"],
            "gap_db": result.metrics["snr_db"] - expected,
            "error": "",
        }
    except Exception as exc:  # per-cell failures are data, not fatal
        return {
            "n": n,
            "osr": osr,
            "expected_db": float("nan"),
            "simulated_db": float("nan"),
            "gap_db": float("nan"),
            "error": f"{type(exc).__name__}: {exc}",
        }


def validate_surface(
    n_values,
    osr_values,
    delta_n: float,
    omega_b: float,
    v_max: float = 1.0,
    cycles_scale: float = 1.0,
    seed: int = 0,
    jobs: int = 1,
) -> list[dict]:
    """Run the train/test protocol per grid cell; report expected-vs-simulated."""
    cells = [
        {
            "n": int(n),
            "osr": int(osr),
            "delta_n": delta_n,
            "omega_b": omega_b,
            "v_max": v_max,
            "cycles_scale": cycles_scale,
            "seed": seed,
        }
        for n in n_values
        for osr in osr_values
    ]
    return _parallel_map(_surface_cell, cells, jobs)


# ---------------------------------------------------------------------------
# Monte Carlo component/offset tolerance


def _mc_trial(args: dict) -> dict:
    params = ChainParameters.from_dict(args["params"])
    trial = args["trial"]
    # the unperturbed reference run carries trial index -1
    trial_seed = derive_seed(args["seed"], trial + 1)
    nominal = nominal_elements(params, args["r_value"])
    offsets = None
    elements = nominal
    if args["mode"] == "rc":
        if args["fraction"] > 0.0:
            elements = perturb_elements(
                nominal, args["fraction"], mode="per-element", seed=trial_seed
            )
    elif args["mode"] == "offset":
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([trial_seed, 4])))
        offsets = rng.uniform(
            -args["fraction"] * params.v_max,
            args["fraction"] * params.v_max,
            params.n_stages,
        )
    else:
        raise ValueError(f"unknown Monte Carlo mode {args['mode']!r}")
    try:
        result = run_pair(
            params,
            elements=elements,
            seed=trial_seed,
            cycles_scale=args["cycles_scale"],
            offsets=offsets,
        )
        return {
            "trial": trial,
            "enob": result.metrics["enob"],
            "snr_db": result.metrics["snr_db"],
            "diverged": False,
            "error": "",
        }
    except SimulationDiverged as exc:
        return {
            "trial": trial,
            "enob": float("nan"),
            "snr_db": float("nan"),
            "diverged": True,
            "error": str(exc),
        }


def montecarlo(
    params: ChainParameters,
    mode: str,
    trials: int,
    fraction: float,
    seed: int = 0,
    jobs: int = 1,
    cycles_scale: float = 1.0,
    r_value: float = 1.0,
) -> dict:
    """Tolerance study: per trial, perturb, re-train, re-measure ENOB.

    mode 'rc' draws every element within +-fraction of nominal; mode
    'offset' draws comparator input offsets within +-fraction*v_max.
    Returns the trial table plus a summary against the unperturbed run.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    nominal = _mc_trial(
        {
            "params": params.to_dict(),
            "trial": -1,
            "seed": seed,
            "mode": mode,
            "fraction": 0.0,
            "cycles_scale": cycles_scale,
            "r_value": r_value,
        }
    )
    work = [
        {
            "params": params.to_dict(),
            "trial": t,
            "seed": seed,
            "mode": mode,
            "fraction": fraction,
            "cycles_scale": cycles_scale,
            "r_value": r_value,
        }
        for t in range(trials)
    ]
    rows = _parallel_map(_mc_trial, work, jobs)
    enobs = np.array([r["enob"] for r in rows if not r["diverged"]])
    summary = {
        "mode": mode,
        "trials": trials,
        "fraction": fraction,
        "nominal_enob": nominal["enob"],
        "diverged": int(sum(r["diverged"] for r in rows)),
        "enob_min": float(np.min(enobs)) if enobs.size else float("nan"),
        "enob_max": float(np.max(enobs)) if enobs.size else float("nan"),
        "enob_mean": float(np.mean(enobs)) if enobs.size else float("nan"),
        "max_abs_deviation": float(np.max(np.abs(enobs - nominal["enob"])))
        if enobs.size
        else float("nan"),
    }
    return {"summary": summary, "trials": rows}


def enob_histogram(rows: list[dict], n_bins: int = 41) -> tuple[np.ndarray, np.ndarray]:
    enobs = np.array([r["enob"] for r in rows if not r["diverged"]])
    counts, edges = np.histogram(enobs, bins=n_bins)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return centers, counts


# ---------------------------------------------------------------------------
# digital loop delay sweep


def _delay_point(args: dict) -> dict:
    params = ChainParameters.from_dict(args["params"])
    try:
        result = run_pair(
            params,
            seed=args["seed"],
            cycles_scale=args["cycles_scale"],
            delay=args["delay_norm"] / params.f_s,
        )
        return {
            "delay_norm": args["delay_norm"],
            "enob": result.metrics["enob"],
            "snr_db": result.metrics["snr_db"],
            "error": "",
        }
    except SimulationDiverged as exc:
        return {
            "delay_norm": args["delay_norm"],
            "enob": float("nan"),
            "snr_db": float("nan"),
            "error": str(exc),
        }


def delay_sweep(
    params: ChainParameters,
    n_points: int = 17,
    seed: int = 0,
    jobs: int = 1,
    cycles_scale: float = 1.0,
) -> list[dict]:
    """ENOB as a function of the digital loop delay over [0, 1/f_s].

    All points share the same seed so the delay is the only variable; the
    delay lands on the substep grid inside the simulator.
    """
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    work = [
        {
            "params": params.to_dict(),
            "delay_norm": float(d),
            "seed": seed,
            "cycles_scale": cycles_scale,
        }
        for d in np.linspace(0.0, 1.0, n_points)
    ]
    return _parallel_map(_delay_point, work, jobs)


# ---------------------------------------------------------------------------
# thermal-noise report


def noise_report(
    params: ChainParameters,
    snr_db: float,
    temperature: float = 300.0,
    n_freqs: int = 256,
) -> dict:
    """Component sizing plus the per-stage noise-transfer sweep.

    The sweep covers omega/omega_b in [4e-2, 2] (log spaced) and reports
    20*log10(|G_bar_l|/R), which starts at exactly 0 dB for stage 1.
    """
    budget = size_components(params, snr_db, temperature)
    r_value = float(budget.r_ladder[0])
    omega_norm = np.logspace(math.log10(4e-2), math.log10(2.0), n_freqs)
    omega = omega_norm * params.omega_b
    sweep = np.empty((n_freqs, params.n_stages))
    for stage in range(1, params.n_stages + 1):
        mag = noise_transfer(params, stage, omega, budget.cap_value)
        sweep[:, stage - 1] = 20.0 * np.log10(mag / r_value)
    return {
        "budget": budget,
        "omega_norm": omega_norm,
        "transfer_db": sweep,
    }
