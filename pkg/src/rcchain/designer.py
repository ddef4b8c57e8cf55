"""Analytical design machinery: transfer functions, expected SNR, grid search,
and thermal-noise budgeting.

All in-band integrals run on a fixed 1024-node Gauss-Legendre rule over
[0, omega_b] and are re-checked at 2048 nodes; the integrands are low-order
polynomials in omega so the rule is exact to rounding and the check is a
guard against misuse rather than a convergence knob.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.constants import k as BOLTZMANN
from scipy.special import roots_legendre

from .chain import ChainParameters, StateSpace, build_nominal_config, nominal_elements, build_state_space
from .errors import InfeasibleDesign, QuadratureError

QUAD_NODES = 1024
ENOB_OFFSET_DB = 1.76
ENOB_SLOPE_DB = 6.02


def snr_db_to_enob(snr_db: float) -> float:
    return (snr_db - ENOB_OFFSET_DB) / ENOB_SLOPE_DB


def enob_to_snr_db(enob: float) -> float:
    return ENOB_SLOPE_DB * enob + ENOB_OFFSET_DB


@lru_cache(maxsize=8)
def _gl_rule(n_nodes: int):
    x, w = roots_legendre(n_nodes)
    return x, w


def _gl_points(a: float, b: float, n_nodes: int):
    x, w = _gl_rule(n_nodes)
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w


def characteristic_minors(params: ChainParameters, omega) -> np.ndarray:
    """Leading principal minors D_0..D_N of the normalized chain matrix.

    The chain's dimensionless characteristic matrix has diagonal
    j*omega*tau + xi_l and off-diagonals -1, so the minors follow the
    three-term recursion D_l = (j*omega*tau + xi_l) D_{l-1} - D_{l-2}
    with D_0 = 1.  Shape: (len(omega), N+1).
    """
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    xi = params.xi
    n = params.n_stages
    z = 1j * w * params.tau
    d = np.empty((w.shape[0], n + 1), dtype=complex)
    d[:, 0] = 1.0
    prev2 = np.zeros(w.shape[0], dtype=complex)
    for ell in range(1, n + 1):
        d[:, ell] = (z + xi[ell - 1]) * d[:, ell - 1] - prev2
        prev2 = d[:, ell - 1]
    return d


def transfer_magnitude(params: ChainParameters, omega):
    """|G(omega)|: amplitude response from the input to the last capacitor.

    Equals 1/|det| of the normalized characteristic matrix, and matches the
    state-space resolvent transfer of the nominal netlist.
    """
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0.0):
        raise ValueError("omega must be non-negative")
    det = characteristic_minors(params, w)[:, -1]
    mag = 1.0 / np.abs(det)
    return float(mag[0]) if np.isscalar(omega) else mag.reshape(np.shape(omega))


def state_space_transfer(ss: StateSpace, omega) -> np.ndarray:
    """Resolvent transfer e_out^T (j*omega*I - A)^-1 b_in, complex valued.

    Independent route to |G|; used to cross-validate the determinant
    recursion.
    """
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    n = ss.n_stages
    m = 1j * w[:, None, None] * np.eye(n) - ss.a_matrix
    sol = np.linalg.solve(m, np.broadcast_to(ss.b_in[:, None], (w.shape[0], n, 1)).copy())
    out = sol[:, ss.out_index, 0]
    return out[0] if np.isscalar(omega) else out.reshape(np.shape(omega))


def _inband_inverse_gain_sq_integral(params: ChainParameters, n_nodes: int) -> float:
    """Integral of 1/|G(omega)|^2 = |det|^2 over [0, omega_b]."""
    pts, wts = _gl_points(0.0, params.omega_b, n_nodes)
    det = characteristic_minors(params, pts)[:, -1]
    return float(np.sum(wts * np.abs(det) ** 2))


RESIDUAL_VARIANCE_GAIN = 10.0 * math.pi  # residual variance = this * epsilon * (delta^N v_max)^2


def expected_snr(params: ChainParameters) -> float:
    """Predicted conversion SNR in dB for a full-scale sine input.

    Treats the last capacitor's residual swing as a white process of
    variance 10*pi*epsilon*(delta^N*v_max)^2 spread over the clock
    bandwidth and referred to the input through 1/|G(omega)|^2:

        SNR = OSR / (20*pi*epsilon * delta^(2N)/omega_b
                     * integral_0^omega_b |G|^-2 domega)

    The 10*pi*epsilon variance factor is calibrated once against
    behavioral transient measurements (the raw edge-sampled residual RMS
    fraction is around 0.26; the in-band effective value is smaller since
    the residual spectrum is not truly white).  Raises QuadratureError if
    doubling the node count moves the result by more than 0.1 dB.
    """
    integral = _inband_inverse_gain_sq_integral(params, QUAD_NODES)
    check = _inband_inverse_gain_sq_integral(params, 2 * QUAD_NODES)
    att = params.delta ** (2 * params.n_stages) / params.omega_b
    gain = params.osr / (2.0 * RESIDUAL_VARIANCE_GAIN * params.epsilon)
    snr_db = 10.0 * math.log10(gain / (att * integral))
    snr_check = 10.0 * math.log10(gain / (att * check))
    if abs(snr_db - snr_check) > 0.1:
        raise QuadratureError(
            f"in-band integral moved {abs(snr_db - snr_check):.3f} dB on refinement"
        )
    return snr_db


@dataclass(frozen=True)
class DesignTarget:
    """Search box for a resolution/bandwidth requirement.

    delta_n is the swing floor delta^N as a fraction of v_max, i.e. the
    smallest voltage the last comparator must resolve.  Ranges are
    inclusive (lo, hi) integer intervals.
    """

    target_snr_db: float
    omega_b: float
    delta_n: float
    n_range: tuple[int, int] = (2, 10)
    osr_range: tuple[int, int] = (10, 32)
    v_max: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.delta_n < 1.0:
            raise ValueError("delta_n must be in (0, 1)")
        if self.omega_b <= 0.0 or self.v_max <= 0.0:
            raise ValueError("omega_b and v_max must be positive")
        if self.n_range[0] > self.n_range[1] or self.osr_range[0] > self.osr_range[1]:
            raise ValueError("ranges must be non-empty")
        if self.n_range[0] < 1 or self.osr_range[0] < 1:
            raise ValueError("ranges must start at 1 or above")


@dataclass(frozen=True)
class SnrSurface:
    """Expected SNR over the (N, OSR) grid."""

    n_values: np.ndarray
    osr_values: np.ndarray
    snr_db: np.ndarray

    def __post_init__(self):
        if self.snr_db.shape != (self.n_values.shape[0], self.osr_values.shape[0]):
            raise ValueError("snr_db grid does not match axes")

    def to_csv(self, path: str | Path) -> None:
        lines = ["N,OSR,snr_db"]
        for i, n in enumerate(self.n_values):
            for j, osr in enumerate(self.osr_values):
                lines.append(f"{int(n)},{int(osr)},{self.snr_db[i, j]!r}")
        Path(path).write_text("\n".join(lines) + "\n")


def _cell_config(target: DesignTarget, n: int, osr: int) -> ChainParameters:
    delta = target.delta_n ** (1.0 / n)
    return build_nominal_config(n, osr, delta, target.omega_b, target.v_max)


def snr_surface(target: DesignTarget) -> SnrSurface:
    """Evaluate expected_snr on every (N, OSR) cell of the target box."""
    n_values = np.arange(target.n_range[0], target.n_range[1] + 1)
    osr_values = np.arange(target.osr_range[0], target.osr_range[1] + 1)
    grid = np.empty((n_values.shape[0], osr_values.shape[0]))
    for i, n in enumerate(n_values):
        for j, osr in enumerate(osr_values):
            grid[i, j] = expected_snr(_cell_config(target, int(n), int(osr)))
    return SnrSurface(n_values=n_values, osr_values=osr_values, snr_db=grid)


def design_search(target: DesignTarget) -> ChainParameters:
    """Pick the qualifying grid cell with the lowest OSR (ties: lowest N).

    Low OSR is preferred because it relaxes the comparator clock rate; at
    equal OSR fewer stages mean fewer comparators.
    """
    surface = snr_surface(target)
    best = None
    for j, osr in enumerate(surface.osr_values):
        for i, n in enumerate(surface.n_values):
            if surface.snr_db[i, j] >= target.target_snr_db:
                best = (int(n), int(osr))
                break
        if best is not None:
            break
    if best is None:
        i, j = np.unravel_index(np.argmax(surface.snr_db), surface.snr_db.shape)
        raise InfeasibleDesign(
            f"no feasible configuration: target {target.target_snr_db:.2f} dB, "
            f"max achievable {surface.snr_db[i, j]:.2f} dB at "
            f"N={int(surface.n_values[i])}, OSR={int(surface.osr_values[j])}"
        )
    return _cell_config(target, best[0], best[1])


def noise_transfer(params: ChainParameters, stage: int, omega, cap: float):
    """Input-referred magnitude |G_bar_l(omega)| in ohms for stage l (1-based).

    G_bar_l = H_l / G, where H_l is the transfer from a test current into
    capacitor l to the last node voltage, computed by a dense resolvent
    solve on the nominal state-space.  Stage 1 gives exactly the input
    resistance R at every frequency.
    """
    n = params.n_stages
    if not 1 <= stage <= n:
        raise ValueError(f"stage must be in 1..{n}, got {stage}")
    if cap <= 0.0:
        raise ValueError("cap must be positive")
    ss = build_state_space(nominal_elements(params, params.tau / cap))
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    m = 1j * w[:, None, None] * np.eye(n) - ss.a_matrix
    rhs = np.zeros((w.shape[0], n, 2), dtype=complex)
    rhs[:, stage - 1, 0] = 1.0 / cap        # test current into capacitor l
    rhs[:, :, 1] = ss.b_in                  # input route, for the ratio
    sol = np.linalg.solve(m, rhs)
    h_l = sol[:, ss.out_index, 0]
    g = sol[:, ss.out_index, 1]
    if np.any(np.abs(g) == 0.0) or np.any(~np.isfinite(sol[:, ss.out_index, :])):
        raise QuadratureError("resolvent solve ill-conditioned")
    mag = np.abs(h_l / g)
    return float(mag[0]) if np.isscalar(omega) else mag.reshape(np.shape(omega))


def _phi_integral(params: ChainParameters, n_nodes: int) -> float:
    pts, wts = _gl_points(0.0, params.omega_b, n_nodes)
    minors = characteristic_minors(params, pts)
    xi = params.xi
    total = 0.0
    for ell in range(1, params.n_stages + 1):
        # |G_bar_l / R| equals the principal minor D_{l-1} of the
        # characteristic matrix, so the normalized integrand is |D_{l-1}|^2.
        total += xi[ell - 1] / params.omega_b * float(
            np.sum(wts * np.abs(minors[:, ell - 1]) ** 2)
        )
    return total


def phi_factor(params: ChainParameters, cap: float = 1.0) -> float:
    """Dimensionless aggregate noise factor Phi.

    Phi = sum_l (xi_l / omega_b) * integral_0^omega_b |G_bar_l/R|^2 domega.
    The R normalization makes the value independent of the absolute
    impedance level, so `cap` only fixes the (irrelevant) scale of the
    intermediate transfer functions.
    """
    if cap <= 0.0:
        raise ValueError("cap must be positive")
    phi = _phi_integral(params, QUAD_NODES)
    check = _phi_integral(params, 2 * QUAD_NODES)
    if abs(phi - check) > 1e-3 * abs(check):
        raise QuadratureError("Phi integral did not converge on refinement")
    return phi


@dataclass(frozen=True)
class NoiseBudget:
    """Thermal-noise sizing result.

    r_ladder holds the input resistor R followed by the feedback resistors
    R/kappa_1..R/kappa_N.
    """

    phi: float
    v_bar_sq: float
    cap_value: float
    r_ladder: np.ndarray
    temperature: float

    def __post_init__(self):
        lad = np.asarray(self.r_ladder, dtype=float)
        lad.setflags(write=False)
        object.__setattr__(self, "r_ladder", lad)
        if self.phi <= 0 or self.v_bar_sq <= 0 or self.cap_value <= 0 or self.temperature <= 0:
            raise ValueError("all budget quantities must be positive")
        if not np.all(lad > 0.0):
            raise ValueError("resistor ladder must be positive")

    def to_dict(self) -> dict:
        return {
            "phi": self.phi,
            "v_bar_sq": self.v_bar_sq,
            "cap_value": self.cap_value,
            "r_ladder": [float(r) for r in self.r_ladder],
            "temperature": self.temperature,
        }


def size_components(
    params: ChainParameters, achieved_snr_db: float, temperature: float
) -> NoiseBudget:
    """Size C and the resistor ladder so thermal noise matches conversion error.

    The nominal conversion-error variance for a full-scale sine is
    sigma^2 = (v_max^2 / 2) * 10^(-SNR/10).  Setting the input-referred
    thermal noise v_bar^2 = 4 k T R (omega_b / 2 pi) Phi equal to sigma^2
    with R = tau/C fixes C; R follows from tau.
    """
    if temperature <= 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    phi = phi_factor(params)
    sigma_sq = (params.v_max**2 / 2.0) * 10.0 ** (-achieved_snr_db / 10.0)
    cap_value = 4.0 * BOLTZMANN * temperature * params.tau * (params.omega_b / (2.0 * math.pi)) * phi / sigma_sq
    r_value = params.tau / cap_value
    ladder = np.concatenate(([r_value], r_value / params.kappas))
    return NoiseBudget(
        phi=phi,
        v_bar_sq=sigma_sq,
        cap_value=cap_value,
        r_ladder=ladder,
        temperature=temperature,
    )
