"""Digital reconstruction: decimation, FIR-bank training, input estimation.

The converter output is u_hat[k] = sum_l (h_l * s_l)[k] over the decimated
control sequences, with one 32-tap FIR per channel running at the decimated
rate.  Filters are learned from a run with a known piecewise-constant
input, either by ridge-regularized block least squares (primary) or by an
LMS sweep (secondary, converges to the same solution on stationary data).

The default decimation keeps the output at twice the minimal rate
(D = OSR/2, so the signal band fills half the output Nyquist interval);
critical-rate output leaves no room for the anti-alias transition band and
costs several dB of in-band noise.  The anti-alias filter is a zero-phase
windowed-sinc polyphase kernel whose stopband sits ~80 dB down, deep
enough that folded control noise stays below the conversion noise floor.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Optional, Union

import numpy as np
import scipy.linalg
import scipy.signal
from numpy.lib.stride_tricks import sliding_window_view

from .errors import TrainingError
from .simulator import SimRecord, input_from_dict, input_rng

log = logging.getLogger(__name__)

DEFAULT_TAPS = 32
DEFAULT_RIDGE = 1e-10
DEFAULT_LATENCY = 16
AA_TAPS_PER_PHASE = 8
AA_KAISER_BETA = 8.0


def default_decimation(osr: int) -> int:
    """Half the oversampling ratio: output at twice the minimal rate."""
    return max(1, osr // 2)


@lru_cache(maxsize=32)
def antialias_kernel(decimation: int) -> np.ndarray:
    """Unity-DC-gain lowpass for decimation, cut at half the output rate."""
    ntaps = 2 * AA_TAPS_PER_PHASE * decimation + 1
    kernel = scipy.signal.firwin(
        ntaps, 1.0 / decimation, window=("kaiser", AA_KAISER_BETA)
    )
    kernel.setflags(write=False)
    return kernel


@dataclass
class FilterBank:
    """Per-channel reconstruction filters plus their rate bookkeeping.

    latency is the alignment between the reference input and the filter
    output, in Nyquist samples (0..taps-1).
    """

    taps: np.ndarray
    decimation: int
    pre_average: bool
    latency: int
    nyquist_rate: float

    def __post_init__(self):
        self.taps = np.asarray(self.taps, dtype=float)
        if self.taps.ndim != 2:
            raise ValueError("taps must be (n_channels, n_taps)")
        if self.decimation < 1:
            raise ValueError("decimation must be >= 1")
        if not 0 <= self.latency < self.taps.shape[1]:
            raise ValueError("latency must lie in [0, n_taps)")

    @property
    def n_channels(self) -> int:
        return self.taps.shape[0]

    def to_dict(self) -> dict:
        return {
            "n_channels": self.n_channels,
            "taps": [float(t) for t in self.taps.ravel()],
            "decimation": self.decimation,
            "pre_average": self.pre_average,
            "latency": self.latency,
            "nyquist_rate_hz": self.nyquist_rate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FilterBank":
        n = int(d["n_channels"])
        taps = np.asarray(d["taps"], dtype=float).reshape(n, -1)
        return cls(
            taps=taps,
            decimation=int(d["decimation"]),
            pre_average=bool(d["pre_average"]),
            latency=int(d["latency"]),
            nyquist_rate=float(d["nyquist_rate_hz"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "FilterBank":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class TrainingReport:
    residual_mse: float
    condition: float
    samples_used: int

    def to_dict(self) -> dict:
        return {
            "residual_mse": self.residual_mse,
            "condition": self.condition,
            "samples_used": self.samples_used,
        }


def decimate_controls(record: SimRecord, decimation: int, pre_average: bool = True) -> np.ndarray:
    """Post-warm-up control sequences brought down to rate f_s/decimation.

    With pre_average the +-1 streams pass through the zero-phase anti-alias
    kernel before subsampling at block centers, so output sample k
    represents the stream around cycle k*decimation + decimation//2.
    Without it, the first bit of each block is kept (cheap, but folds the
    full out-of-band control noise into the output).  A non-divisible tail
    is trimmed (logged).
    """
    if decimation < 1:
        raise ValueError("decimation must be >= 1")
    usable = record.n_cycles - record.warmup_cycles
    trimmed = usable % decimation
    if trimmed:
        log.warning("decimation trims %d trailing cycles", trimmed)
    k_out = usable // decimation
    if decimation == 1:
        return record.post_warmup_bits().astype(float)
    if not pre_average:
        post = record.post_warmup_bits().astype(float)
        return np.ascontiguousarray(post[:, : k_out * decimation : decimation])
    # filter the whole record so early outputs see real (warm-up) history
    bits = record.bits.astype(float)
    kernel = antialias_kernel(decimation)
    group_delay = (kernel.shape[0] - 1) // 2
    full = scipy.signal.fftconvolve(bits, kernel[None, :], mode="full")
    centers = record.warmup_cycles + np.arange(k_out) * decimation + decimation // 2
    return np.ascontiguousarray(full[:, centers + group_delay])


def training_reference(record: SimRecord, decimation: int) -> np.ndarray:
    """Known input values on the decimated grid, aligned to decimate_controls.

    Rebuilds the run's input from the record config and seed, evaluates it
    at the clock edges, and keeps the value at the start of each
    post-warm-up decimation block.  No latency shift is applied here.
    """
    sig = input_from_dict(record.config["input"])
    f_s = record.config["params"]["f_s"]
    edges = sig.edge_values(record.n_cycles, f_s, input_rng(record.seed))
    usable = edges[record.warmup_cycles :]
    usable = usable[: usable.shape[0] - usable.shape[0] % decimation]
    return usable[::decimation].copy()


def _regressor_matrix(s_dec: np.ndarray, taps: int) -> np.ndarray:
    """Row k holds [s_l[k], s_l[k-1], ..., s_l[k-taps+1]] for every channel."""
    n, k = s_dec.shape
    cols = []
    for ch in range(n):
        padded = np.concatenate([np.zeros(taps - 1), s_dec[ch]])
        cols.append(sliding_window_view(padded, taps)[:k, ::-1])
    return np.hstack(cols)


def train_filters(
    training: SimRecord,
    reference: np.ndarray,
    taps: int = DEFAULT_TAPS,
    ridge: float = DEFAULT_RIDGE,
    decimation: Optional[int] = None,
    pre_average: bool = True,
    latency: Union[int, str] = DEFAULT_LATENCY,
) -> tuple[FilterBank, TrainingReport]:
    """Block least-squares fit of the FIR bank against a delayed reference.

    Minimizes sum_k (u_hat[k] - reference[k - latency])^2 + ridge*|h|^2
    via the normal equations and a symmetric positive-definite solve.
    latency='auto' scans all alignments 0..taps-1 and keeps the residual
    minimizer.  Raises TrainingError for a rank-deficient system when
    ridge == 0.
    """
    if ridge < 0.0:
        raise ValueError("ridge must be >= 0")
    if decimation is None:
        decimation = default_decimation(int(training.config["params"]["osr"]))
    s_dec = decimate_controls(training, decimation, pre_average)
    reference = np.asarray(reference, dtype=float)
    k_total = s_dec.shape[1]
    if reference.shape[0] != k_total:
        raise ValueError(
            f"reference length {reference.shape[0]} does not match "
            f"decimated record length {k_total}"
        )
    n_params = s_dec.shape[0] * taps
    k0 = taps - 1
    samples_used = k_total - k0
    if samples_used < 10 * n_params:
        raise ValueError(
            f"record too short: {samples_used} usable samples for "
            f"{n_params} parameters (need >= {10 * n_params})"
        )

    phi = _regressor_matrix(s_dec, taps)[k0:]
    gram = phi.T @ phi + ridge * np.eye(n_params)
    condition = float(np.linalg.cond(gram))

    def solve_for(lat: int):
        target = np.zeros(k_total)
        target[lat:] = reference[: k_total - lat]
        target = target[k0:]
        try:
            h = scipy.linalg.solve(gram, phi.T @ target, assume_a="pos")
        except np.linalg.LinAlgError as exc:
            raise TrainingError(
                "normal equations are rank deficient; retrain with ridge > 0"
            ) from exc
        mse = float(np.mean((phi @ h - target) ** 2))
        return h, mse

    if latency == "auto":
        results = [(solve_for(lat), lat) for lat in range(taps)]
        (h, mse), lat = min(results, key=lambda item: item[0][1])
    else:
        lat = int(latency)
        if not 0 <= lat < taps:
            raise ValueError("latency must lie in [0, taps)")
        h, mse = solve_for(lat)

    nyquist_rate = training.config["params"]["f_s"] / decimation
    bank = FilterBank(
        taps=h.reshape(s_dec.shape[0], taps),
        decimation=decimation,
        pre_average=pre_average,
        latency=lat,
        nyquist_rate=nyquist_rate,
    )
    return bank, TrainingReport(residual_mse=mse, condition=condition, samples_used=samples_used)


def train_filters_lms(
    training: SimRecord,
    reference: np.ndarray,
    taps: int = DEFAULT_TAPS,
    step: float = 0.5,
    epochs: int = 10,
    decimation: Optional[int] = None,
    pre_average: bool = True,
    latency: int = DEFAULT_LATENCY,
) -> tuple[FilterBank, TrainingReport]:
    """Normalized-LMS alternative trainer over the same model.

    Sweeps the record `epochs` times with h += step * e[k] * phi[k]/|phi[k]|^2.
    On stationary data this converges to the least-squares solution.
    """
    if decimation is None:
        decimation = default_decimation(int(training.config["params"]["osr"]))
    s_dec = decimate_controls(training, decimation, pre_average)
    reference = np.asarray(reference, dtype=float)
    k_total = s_dec.shape[1]
    if reference.shape[0] != k_total:
        raise ValueError("reference length does not match decimated record length")
    k0 = taps - 1
    phi = _regressor_matrix(s_dec, taps)[k0:]
    target = np.zeros(k_total)
    target[latency:] = reference[: k_total - latency]
    target = target[k0:]

    h = np.zeros(phi.shape[1])
    for _ in range(epochs):
        for k in range(phi.shape[0]):
            row = phi[k]
            err = target[k] - row @ h
            h += step * err * row / (row @ row + 1e-12)
    mse = float(np.mean((phi @ h - target) ** 2))
    nyquist_rate = training.config["params"]["f_s"] / decimation
    bank = FilterBank(
        taps=h.reshape(s_dec.shape[0], taps),
        decimation=decimation,
        pre_average=pre_average,
        latency=latency,
        nyquist_rate=nyquist_rate,
    )
    return bank, TrainingReport(
        residual_mse=mse, condition=float("nan"), samples_used=phi.shape[0]
    )


def estimate(record: SimRecord, bank: FilterBank) -> np.ndarray:
    """Input estimate at the Nyquist rate: sum of per-channel convolutions.

    Causal convolution with zero initial history; output length equals the
    decimated record length.
    """
    if record.n_stages != bank.n_channels:
        raise ValueError("record channel count does not match the filter bank")
    s_dec = decimate_controls(record, bank.decimation, bank.pre_average)
    out = np.zeros(s_dec.shape[1])
    for ch in range(bank.n_channels):
        out += scipy.signal.lfilter(bank.taps[ch], [1.0], s_dec[ch])
    return out
