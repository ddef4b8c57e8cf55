"""Behavioral transient simulation of the clocked RC chain.

The analog path is propagated with the exact piecewise-constant step
operator (matrix exponential of the augmented system), the comparators
latch at clock edges, and the inverter outputs switch after a digital
loop delay that is snapped to the substep grid.  Runs are pure functions
of their arguments and seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.constants import k as BOLTZMANN
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from . import _kernels
from .chain import ChainParameters, ElementValues, StateSpace, build_state_space
from .errors import SimulationDiverged

DEFAULT_SUBSTEPS = 16
WARMUP_NYQUIST_PERIODS = 32

_INPUT_STREAM = 1
_NOISE_STREAM = 2


def _derived_rng(seed: int, stream: int) -> np.random.Generator:
    """Child generator for one named random stream of a run.

    The (seed, stream) pair feeds a SeedSequence, so every consumer that
    needs to reproduce a stream (e.g. the training reference) derives the
    identical generator.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), stream])))


def input_rng(seed: int) -> np.random.Generator:
    return _derived_rng(seed, _INPUT_STREAM)


def noise_rng(seed: int) -> np.random.Generator:
    return _derived_rng(seed, _NOISE_STREAM)


@dataclass(frozen=True)
class Sine:
    """Sinusoidal test input amplitude*sin(omega*t + phase)."""

    amplitude: float
    omega: float
    phase: float = 0.0

    def midpoint_values(self, n_cycles: int, substeps: int, f_s: float, rng) -> np.ndarray:
        h = 1.0 / (f_s * substeps)
        t = (np.arange(n_cycles * substeps) + 0.5) * h
        return self.amplitude * np.sin(self.omega * t + self.phase)

    def edge_values(self, n_cycles: int, f_s: float, rng) -> np.ndarray:
        t = np.arange(n_cycles) / f_s
        return self.amplitude * np.sin(self.omega * t + self.phase)

    def at_time(self, t):
        return self.amplitude * np.sin(self.omega * t + self.phase)

    def to_dict(self) -> dict:
        return {"kind": "sine", "amplitude": self.amplitude, "omega": self.omega, "phase": self.phase}


@dataclass(frozen=True)
class HeldRandom:
    """Piecewise-constant input, uniform in [-amplitude, amplitude].

    A fresh value is drawn every hold_cycles clock cycles (one Nyquist
    period when hold_cycles equals the OSR).  If seed is None the values
    come from the simulation seed's input stream.
    """

    amplitude: float
    hold_cycles: int
    seed: Optional[int] = None

    def _held_values(self, n_cycles: int, rng) -> np.ndarray:
        if self.hold_cycles < 1:
            raise ValueError("hold_cycles must be >= 1")
        if self.seed is not None:
            rng = input_rng(self.seed)
        n_holds = -(-n_cycles // self.hold_cycles)
        return rng.uniform(-self.amplitude, self.amplitude, n_holds)

    def midpoint_values(self, n_cycles: int, substeps: int, f_s: float, rng) -> np.ndarray:
        values = self._held_values(n_cycles, rng)
        return np.repeat(values, self.hold_cycles * substeps)[: n_cycles * substeps]

    def edge_values(self, n_cycles: int, f_s: float, rng) -> np.ndarray:
        values = self._held_values(n_cycles, rng)
        return np.repeat(values, self.hold_cycles)[:n_cycles]

    def to_dict(self) -> dict:
        return {
            "kind": "held_random",
            "amplitude": self.amplitude,
            "hold_cycles": self.hold_cycles,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class ZeroInput:
    """Grounded input."""

    def midpoint_values(self, n_cycles: int, substeps: int, f_s: float, rng) -> np.ndarray:
        return np.zeros(n_cycles * substeps)

    def edge_values(self, n_cycles: int, f_s: float, rng) -> np.ndarray:
        return np.zeros(n_cycles)

    def at_time(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def to_dict(self) -> dict:
        return {"kind": "zero"}


@dataclass(frozen=True)
class ExternalInput:
    """Caller-supplied samples at the substep rate, held over each substep."""

    samples: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.samples, dtype=float)
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    def midpoint_values(self, n_cycles: int, substeps: int, f_s: float, rng) -> np.ndarray:
        need = n_cycles * substeps
        if self.samples.shape[0] < need:
            raise ValueError(f"external input too short: {self.samples.shape[0]} < {need}")
        return self.samples[:need]

    def edge_values(self, n_cycles: int, f_s: float, rng) -> np.ndarray:
        raise ValueError("external input edge values depend on the substep count; "
                         "slice samples[::substeps] directly")

    def to_dict(self) -> dict:
        return {"kind": "external", "n_samples": int(self.samples.shape[0])}


InputSignal = Union[Sine, HeldRandom, ZeroInput, ExternalInput]


def input_from_dict(d: dict) -> InputSignal:
    kind = d["kind"]
    if kind == "sine":
        return Sine(amplitude=d["amplitude"], omega=d["omega"], phase=d.get("phase", 0.0))
    if kind == "held_random":
        return HeldRandom(amplitude=d["amplitude"], hold_cycles=d["hold_cycles"], seed=d.get("seed"))
    if kind == "zero":
        return ZeroInput()
    raise ValueError(f"cannot rebuild input of kind {kind!r}")


@dataclass(frozen=True)
class ComparatorModel:
    """Clocked comparator bank: static input offsets plus a digital delay.

    The delay is the latency between a clock edge and the corresponding
    inverter output change; it must not exceed one clock period (checked
    against f_s when the simulation is configured).  Ties resolve to +1.
    """

    offsets: np.ndarray
    delay: float = 0.0

    def __post_init__(self):
        off = np.asarray(self.offsets, dtype=float)
        off.setflags(write=False)
        object.__setattr__(self, "offsets", off)
        if self.delay < 0.0:
            raise ValueError("delay must be non-negative")

    @classmethod
    def ideal(cls, n_stages: int) -> "ComparatorModel":
        return cls(offsets=np.zeros(n_stages), delay=0.0)

    def to_dict(self) -> dict:
        return {"offsets": [float(o) for o in self.offsets], "delay": self.delay}


@dataclass(frozen=True)
class NoiseSpec:
    """Per-stage current-noise injection at the capacitors.

    psd holds single-sided current noise densities in A^2/Hz; disabled by
    default.
    """

    enabled: bool = False
    temperature: float = 300.0
    psd: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.enabled:
            if self.temperature <= 0.0:
                raise ValueError("temperature must be positive when noise is enabled")
            if self.psd is None:
                raise ValueError("enabled noise needs per-stage psd values")
            arr = np.asarray(self.psd, dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, "psd", arr)

    def to_dict(self) -> dict:
        return {
            "enabled": self.enabled,
            "temperature": self.temperature,
            "psd": None if self.psd is None else [float(p) for p in self.psd],
        }


def thermal_noise(elements: ElementValues, temperature: float) -> NoiseSpec:
    """Johnson current noise of all resistors attached to each node."""
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    n = elements.n_stages
    g = np.empty(n)
    for ell in range(n):
        g[ell] = 1.0 / elements.chain_r[ell] + 1.0 / elements.fb_r[ell]
        if ell < n - 1:
            g[ell] += 1.0 / elements.chain_r[ell + 1]
    return NoiseSpec(enabled=True, temperature=temperature, psd=4.0 * BOLTZMANN * temperature * g)


@dataclass(frozen=True)
class StepOperator:
    """Exact one-substep propagator for piecewise-constant drive."""

    a_d: np.ndarray
    b_u: np.ndarray
    b_c: np.ndarray
    h: float


def discretize(ss: StateSpace, h: float) -> StepOperator:
    """Exact discretization over a step of length h.

    Embeds [A, B; 0, 0] with B = [b_in | B_ctl] and exponentiates, so the
    input and control response blocks integrate the held drive exactly.
    """
    if h <= 0.0:
        raise ValueError("step length must be positive")
    n = ss.n_stages
    aug = np.zeros((2 * n + 1, 2 * n + 1))
    aug[:n, :n] = ss.a_matrix
    aug[:n, n] = ss.b_in
    aug[:n, n + 1 :] = ss.b_ctl
    phi = expm(aug * h)
    return StepOperator(
        a_d=np.ascontiguousarray(phi[:n, :n]),
        b_u=np.ascontiguousarray(phi[:n, n]),
        b_c=np.ascontiguousarray(phi[:n, n + 1 :]),
        h=h,
    )


@dataclass
class SimRecord:
    """One transient run: control bits, optional edge-state samples, config.

    bits is (N, n_cycles) in {-1, +1}; state_samples holds the capacitor
    voltages at each clock edge k/f_s; state_max_abs tracks the largest
    |v_x_l| seen at any substep.  The config snapshot plus seed fully
    reproduce the run.
    """

    bits: np.ndarray
    state_samples: Optional[np.ndarray]
    state_max_abs: np.ndarray
    config: dict
    seed: int
    substeps_per_cycle: int
    delay_substeps: int
    warmup_cycles: int

    @property
    def n_stages(self) -> int:
        return self.bits.shape[0]

    @property
    def n_cycles(self) -> int:
        return self.bits.shape[1]

    def post_warmup_bits(self) -> np.ndarray:
        return self.bits[:, self.warmup_cycles :]

    def post_warmup_states(self) -> np.ndarray:
        if self.state_samples is None:
            raise ValueError("record carries no state samples")
        return self.state_samples[self.warmup_cycles :, :]


def _delay_to_substeps(delay: float, f_s: float, substeps: int) -> int:
    if delay < 0.0 or delay > 1.0 / f_s * (1.0 + 1e-12):
        raise ValueError("comparator delay must lie in [0, 1/f_s]")
    return int(round(delay * f_s * substeps))


def simulate(
    elements: ElementValues,
    params: ChainParameters,
    comp: ComparatorModel,
    input_signal: InputSignal,
    n_cycles: int,
    substeps: int = DEFAULT_SUBSTEPS,
    noise: Optional[NoiseSpec] = None,
    seed: int = 0,
    record_states: bool = True,
    override_bits: Optional[np.ndarray] = None,
) -> SimRecord:
    """Run the clocked loop for n_cycles and return the full record.

    The digital delay is rounded to the substep grid (recorded in the
    result).  All randomness (held-random input draws, noise increments)
    derives from `seed`; identical arguments give bit-identical records.
    `override_bits` replaces the comparator decisions with a fixed (N,
    n_cycles) sequence, for analog-path linearity checks.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    if n_cycles < 1:
        raise ValueError("n_cycles must be >= 1")
    if elements.n_stages != params.n_stages:
        raise ValueError("elements and params disagree on the stage count")
    if comp.offsets.shape != (params.n_stages,):
        raise ValueError("comparator offsets must have one entry per stage")

    delay_substeps = _delay_to_substeps(comp.delay, params.f_s, substeps)
    ss = build_state_space(elements)
    step = discretize(ss, 1.0 / (params.f_s * substeps))

    u_mid = np.ascontiguousarray(
        input_signal.midpoint_values(n_cycles, substeps, params.f_s, input_rng(seed)),
        dtype=float,
    )

    use_noise = bool(noise is not None and noise.enabled)
    if use_noise:
        std = np.sqrt(noise.psd / (2.0 * elements.cap**2) * step.h)
        incr = noise_rng(seed).standard_normal((n_cycles * substeps, params.n_stages))
        incr *= std
        noise_arr = np.ascontiguousarray(incr)
    else:
        noise_arr = np.zeros((0, 0))

    use_forced = override_bits is not None
    if use_forced:
        forced = np.ascontiguousarray(override_bits, dtype=np.int8)
        if forced.shape != (params.n_stages, n_cycles):
            raise ValueError("override_bits must be shaped (n_stages, n_cycles)")
    else:
        forced = np.zeros((0, 0), dtype=np.int8)

    bits, edges, max_abs, diverged = _kernels.chain_loop(
        step.a_d,
        step.b_u,
        step.b_c,
        u_mid,
        np.ascontiguousarray(comp.offsets, dtype=float),
        params.v_max,
        delay_substeps,
        n_cycles,
        substeps,
        noise_arr,
        use_noise,
        np.zeros(params.n_stages),
        forced,
        use_forced,
    )
    if diverged >= 0:
        raise SimulationDiverged(int(diverged))

    config = {
        "params": params.to_dict(),
        "elements": elements.to_dict(),
        "comparator": comp.to_dict(),
        "input": input_signal.to_dict(),
        "noise": (noise or NoiseSpec()).to_dict(),
        "n_cycles": n_cycles,
    }
    return SimRecord(
        bits=bits,
        state_samples=edges if record_states else None,
        state_max_abs=max_abs,
        config=config,
        seed=int(seed),
        substeps_per_cycle=substeps,
        delay_substeps=delay_substeps,
        warmup_cycles=min(WARMUP_NYQUIST_PERIODS * params.osr, n_cycles),
    )


def oracle_integrate(
    elements: ElementValues,
    params: ChainParameters,
    comp: ComparatorModel,
    input_signal: InputSignal,
    n_cycles: int,
    noise: Optional[NoiseSpec] = None,
    seed: int = 0,
) -> SimRecord:
    """Reference integrator: adaptive high-order Runge-Kutta per interval.

    Same clocking and comparator semantics as `simulate`, but each segment
    between control events is integrated with DOP853 at 1e-12 tolerance
    and the sine input is evaluated exactly instead of midpoint-held.
    Test-only tool; noise injection is not supported here.
    """
    if noise is not None and noise.enabled:
        raise ValueError("the reference integrator does not model noise injection")
    if isinstance(input_signal, ExternalInput):
        raise ValueError("the reference integrator does not accept external sample streams")
    if elements.n_stages != params.n_stages:
        raise ValueError("elements and params disagree on the stage count")

    n = params.n_stages
    f_s = params.f_s
    # keep the delay on the same grid the stepper uses, for comparability
    delay_substeps = _delay_to_substeps(comp.delay, f_s, DEFAULT_SUBSTEPS)
    delay = delay_substeps / (f_s * DEFAULT_SUBSTEPS)
    ss = build_state_space(elements)

    continuous = isinstance(input_signal, Sine)
    edge_u = None
    if not continuous:
        edge_u = input_signal.edge_values(n_cycles, f_s, input_rng(seed))

    def rhs_factory(ctrl, k):
        if continuous:
            def rhs(t, x):
                return ss.a_matrix @ x + ss.b_in * input_signal.at_time(t) + ss.b_ctl @ ctrl
        else:
            uk = edge_u[k]
            def rhs(t, x):
                return ss.a_matrix @ x + ss.b_in * uk + ss.b_ctl @ ctrl
        return rhs

    bits = np.empty((n, n_cycles), dtype=np.int8)
    edges = np.empty((n_cycles, n))
    max_abs = np.zeros(n)
    x = np.zeros(n)
    c_active = np.zeros(n)

    def advance(t0, t1, ctrl, k):
        nonlocal x, max_abs
        if t1 <= t0:
            return
        sol = solve_ivp(
            rhs_factory(ctrl, k),
            (t0, t1),
            x,
            method="DOP853",
            rtol=1e-12,
            atol=1e-15,
            dense_output=True,
        )
        if not sol.success:
            raise RuntimeError(f"reference integration failed: {sol.message}")
        probe = sol.sol(np.linspace(t0, t1, 33))
        max_abs = np.maximum(max_abs, np.max(np.abs(probe), axis=1))
        x = sol.y[:, -1].copy()

    for k in range(n_cycles):
        edges[k] = x
        s = np.where(x + comp.offsets >= 0.0, 1, -1).astype(np.int8)
        bits[:, k] = s
        c_new = -s.astype(float) * params.v_max
        if k == 0:
            c_active = c_new.copy()
        t_edge = k / f_s
        t_next = (k + 1) / f_s
        t_switch = t_edge + delay
        if delay_substeps == 0:
            c_active = c_new.copy()
            advance(t_edge, t_next, c_active, k)
        elif t_switch < t_next:
            advance(t_edge, t_switch, c_active, k)
            c_active = c_new.copy()
            advance(t_switch, t_next, c_active, k)
        else:
            advance(t_edge, t_next, c_active, k)
            c_active = c_new.copy()

    config = {
        "params": params.to_dict(),
        "elements": elements.to_dict(),
        "comparator": comp.to_dict(),
        "input": input_signal.to_dict(),
        "noise": NoiseSpec().to_dict(),
        "n_cycles": n_cycles,
    }
    return SimRecord(
        bits=bits,
        state_samples=edges,
        state_max_abs=max_abs,
        config=config,
        seed=int(seed),
        substeps_per_cycle=0,
        delay_substeps=delay_substeps,
        warmup_cycles=min(WARMUP_NYQUIST_PERIODS * params.osr, n_cycles),
    )


def perturb_elements(
    nominal: ElementValues,
    fraction: float,
    mode: str = "per-element",
    seed: int = 0,
) -> ElementValues:
    """Random tolerance draw: each target scaled by U[1-fraction, 1+fraction].

    mode 'per-element' draws an independent factor for every resistor and
    capacitor (3N draws).  mode 'per-product' perturbs each RC product
    independently by scaling the resistors only (2N draws), leaving the
    capacitors nominal.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must be in [0, 1)")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), 3])))
    n = nominal.n_stages
    if mode == "per-element":
        factors = rng.uniform(1.0 - fraction, 1.0 + fraction, (3, n))
        return ElementValues(
            chain_r=nominal.chain_r * factors[0],
            fb_r=nominal.fb_r * factors[1],
            cap=nominal.cap * factors[2],
        )
    if mode == "per-product":
        factors = rng.uniform(1.0 - fraction, 1.0 + fraction, (2, n))
        return ElementValues(
            chain_r=nominal.chain_r * factors[0],
            fb_r=nominal.fb_r * factors[1],
            cap=nominal.cap.copy(),
        )
    raise ValueError(f"unknown perturbation mode {mode!r}")
