"""Architecture parameterization and circuit model of the RC-chain ADC.

The converter is a ladder of N identical RC low-pass sections.  Each node
carries a clocked comparator whose inverted decision feeds back through a
resistor R/kappa_l, successively shrinking the voltage swing from one
capacitor to the next by a factor delta per stage.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_EPSILON = 1.22e-3  # empirical constant tying swing statistics to SNR


def compute_kappas(delta: float, n_stages: int) -> np.ndarray:
    """Feedback strengths kappa_l = delta^(l-1) * (1 + delta^2 - delta).

    Sized so that a full-scale feedback voltage through R/kappa_l can hold
    node l inside its swing budget against worst-case neighbor voltages.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if n_stages < 1:
        raise ValueError(f"n_stages must be >= 1, got {n_stages}")
    head = 1.0 + delta * delta - delta
    return delta ** np.arange(n_stages) * head


def compute_tau(delta: float, omega_b: float, osr: int) -> float:
    """Time constant tau = RC keeping every node inside its swing budget.

    tau = pi * (2*(1 + delta^2) - delta) / (delta * omega_b * OSR); derived
    from the worst-case node slew over one clock period 1/f_s.
    """
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if omega_b <= 0.0:
        raise ValueError(f"omega_b must be positive, got {omega_b}")
    if osr < 1:
        raise ValueError(f"osr must be >= 1, got {osr}")
    return math.pi * (2.0 * (1.0 + delta * delta) - delta) / (delta * omega_b * osr)


@dataclass(frozen=True)
class ChainParameters:
    """Full architectural parameterization of one RC-chain converter.

    Immutable after construction.  `f_s` must equal osr * omega_b / pi in
    floating point, which is how ``build_nominal_config`` sets it.
    """

    n_stages: int
    osr: int
    delta: float
    omega_b: float
    v_max: float
    kappas: np.ndarray
    tau: float
    f_s: float
    epsilon: float = DEFAULT_EPSILON

    def __post_init__(self):
        kap = np.asarray(self.kappas, dtype=float)
        kap.setflags(write=False)
        object.__setattr__(self, "kappas", kap)
        if self.n_stages < 1:
            raise ValueError("n_stages must be >= 1")
        if self.osr < 1:
            raise ValueError("osr must be >= 1")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must be in (0, 1)")
        if self.omega_b <= 0.0 or self.v_max <= 0.0 or self.tau <= 0.0:
            raise ValueError("omega_b, v_max and tau must be positive")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if kap.shape != (self.n_stages,):
            raise ValueError("kappas must have one entry per stage")
        if not (np.all(kap > 0.0) and np.all(kap < 1.0)):
            raise ValueError("every kappa must lie in (0, 1)")
        if self.n_stages > 1 and not np.all(np.diff(kap) < 0.0):
            raise ValueError("kappas must be strictly decreasing")
        if self.f_s != self.osr * self.omega_b / math.pi:
            raise ValueError("f_s must equal osr * omega_b / pi")

    @property
    def xi(self) -> np.ndarray:
        """Dimensionless diagonal loads: kappa_l + 2, last stage kappa_N + 1."""
        xi = self.kappas + 2.0
        xi[-1] = self.kappas[-1] + 1.0
        return xi

    @property
    def swing_bounds(self) -> np.ndarray:
        """Guaranteed per-stage swing ceilings delta^l * v_max, l = 1..N."""
        return self.delta ** np.arange(1, self.n_stages + 1) * self.v_max

    def to_dict(self) -> dict:
        return {
            "n_stages": self.n_stages,
            "osr": self.osr,
            "delta": self.delta,
            "omega_b": self.omega_b,
            "v_max": self.v_max,
            "kappas": [float(k) for k in self.kappas],
            "tau": self.tau,
            "f_s": self.f_s,
            "epsilon": self.epsilon,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChainParameters":
        return cls(
            n_stages=int(d["n_stages"]),
            osr=int(d["osr"]),
            delta=float(d["delta"]),
            omega_b=float(d["omega_b"]),
            v_max=float(d["v_max"]),
            kappas=np.asarray(d["kappas"], dtype=float),
            tau=float(d["tau"]),
            f_s=float(d["f_s"]),
            epsilon=float(d.get("epsilon", DEFAULT_EPSILON)),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ChainParameters":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_nominal_config(
    n_stages: int,
    osr: int,
    delta: float,
    omega_b: float,
    v_max: float,
    epsilon: float = DEFAULT_EPSILON,
) -> ChainParameters:
    """Assemble a nominal configuration from the swing-reduction rules."""
    if v_max <= 0.0:
        raise ValueError(f"v_max must be positive, got {v_max}")
    kappas = compute_kappas(delta, n_stages)
    tau = compute_tau(delta, omega_b, osr)
    f_s = osr * omega_b / math.pi
    return ChainParameters(
        n_stages=n_stages,
        osr=osr,
        delta=delta,
        omega_b=omega_b,
        v_max=v_max,
        kappas=kappas,
        tau=tau,
        f_s=f_s,
        epsilon=epsilon,
    )


@dataclass(frozen=True)
class ElementValues:
    """Per-element netlist: series resistors, feedback resistors, capacitors.

    chain_r[l] sits between node l-1 and node l (node 0 is the input
    source), fb_r[l] connects the l-th inverter output to node l, cap[l]
    shunts node l to ground.  Indices are 0-based here.
    """

    chain_r: np.ndarray
    fb_r: np.ndarray
    cap: np.ndarray

    def __post_init__(self):
        for name in ("chain_r", "fb_r", "cap"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = self.chain_r.shape[0]
        if self.fb_r.shape != (n,) or self.cap.shape != (n,):
            raise ValueError("chain_r, fb_r and cap must have equal length")
        if n < 1:
            raise ValueError("need at least one stage")
        for name in ("chain_r", "fb_r", "cap"):
            if not np.all(getattr(self, name) > 0.0):
                raise ValueError(f"all {name} values must be strictly positive")

    @property
    def n_stages(self) -> int:
        return self.chain_r.shape[0]

    def to_dict(self) -> dict:
        return {
            "chain_r": [float(v) for v in self.chain_r],
            "fb_r": [float(v) for v in self.fb_r],
            "cap": [float(v) for v in self.cap],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ElementValues":
        return cls(
            chain_r=np.asarray(d["chain_r"], dtype=float),
            fb_r=np.asarray(d["fb_r"], dtype=float),
            cap=np.asarray(d["cap"], dtype=float),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ElementValues":
        return cls.from_dict(json.loads(Path(path).read_text()))


def nominal_elements(params: ChainParameters, r_value: float) -> ElementValues:
    """Nominal netlist: every chain resistor R, cap tau/R, feedback R/kappa_l."""
    if r_value <= 0.0:
        raise ValueError(f"r_value must be positive, got {r_value}")
    n = params.n_stages
    chain_r = np.full(n, r_value)
    cap = np.full(n, params.tau / r_value)
    fb_r = r_value / params.kappas
    return ElementValues(chain_r=chain_r, fb_r=fb_r, cap=cap)


@dataclass(frozen=True)
class StateSpace:
    """Continuous-time model dx/dt = A x + b_in v_u + B_ctl v_sbar.

    A is tridiagonal; b_in couples the input source into node 1 only;
    b_ctl is diagonal and couples each inverter output into its node.
    out_index selects the observed state (the last capacitor voltage).
    """

    a_matrix: np.ndarray
    b_in: np.ndarray
    b_ctl: np.ndarray
    out_index: int

    def __post_init__(self):
        for name in ("a_matrix", "b_in", "b_ctl"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = self.a_matrix.shape[0]
        if self.a_matrix.shape != (n, n) or self.b_ctl.shape != (n, n):
            raise ValueError("a_matrix and b_ctl must be square")
        if self.b_in.shape != (n,):
            raise ValueError("b_in must be a length-N vector")
        if not 0 <= self.out_index < n:
            raise ValueError("out_index out of range")

    @property
    def n_stages(self) -> int:
        return self.a_matrix.shape[0]

    def kcl_residual(self) -> np.ndarray:
        """Per-row residual of A*1 + b_in + b_ctl*1.

        With all node, input and feedback voltages equal no current flows,
        so the residual is zero.  Terms are summed in the same order used
        to build the diagonal, so the cancellation is exact in floating
        point, not merely within rounding error.
        """
        n = self.n_stages
        res = np.empty(n)
        for row in range(n):
            left = self.a_matrix[row, row - 1] if row > 0 else self.b_in[row]
            right = self.a_matrix[row, row + 1] if row < n - 1 else 0.0
            res[row] = ((left + right) + self.b_ctl[row, row]) + self.a_matrix[row, row]
        return res

    def is_hurwitz(self) -> bool:
        return bool(np.all(np.linalg.eigvals(self.a_matrix).real < 0.0))


def build_state_space(elements: ElementValues) -> StateSpace:
    """Nodal analysis of the ladder into (A, b_in, B_ctl).

    Node l obeys  cap[l] * dv_l/dt = (v_{l-1}-v_l)/chain_r[l]
                  + (v_{l+1}-v_l)/chain_r[l+1]   (interior nodes only)
                  + (v_sbar_l - v_l)/fb_r[l].
    The diagonal is accumulated from the identical conductance terms that
    fill the off-diagonals and input/control couplings, keeping the KCL
    row sum exactly zero.
    """
    n = elements.n_stages
    a = np.zeros((n, n))
    b_in = np.zeros(n)
    b_ctl = np.zeros((n, n))
    for row in range(n):
        g_prev = 1.0 / (elements.chain_r[row] * elements.cap[row])
        g_next = 1.0 / (elements.chain_r[row + 1] * elements.cap[row]) if row < n - 1 else 0.0
        g_fb = 1.0 / (elements.fb_r[row] * elements.cap[row])
        if row > 0:
            a[row, row - 1] = g_prev
        else:
            b_in[row] = g_prev
        if row < n - 1:
            a[row, row + 1] = g_next
        b_ctl[row, row] = g_fb
        a[row, row] = -((g_prev + g_next) + g_fb)
    return StateSpace(a_matrix=a, b_in=b_in, b_ctl=b_ctl, out_index=n - 1)
