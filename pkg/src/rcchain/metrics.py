"""Spectral and statistical evaluation of reconstructed outputs and records."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
import scipy.signal

from .simulator import InputSignal, SimRecord, input_rng

# half-width of the window main lobe in bins; the signal always owns it
_MAIN_LOBE = {"hann": 1}


@dataclass
class PsdEstimate:
    """Single-sided Welch estimate in V^2/Hz.

    full_scale is the reference amplitude for the dBFS export: a sine of
    that amplitude carries 0 dBFS of integrated power.
    """

    freqs: np.ndarray
    power: np.ndarray
    window: str
    segment_len: int
    overlap: float
    full_scale: float
    sample_rate: float

    @property
    def bin_width(self) -> float:
        return float(self.freqs[1] - self.freqs[0])

    def dbfs(self) -> np.ndarray:
        ref = self.full_scale**2 / 2.0
        with np.errstate(divide="ignore"):
            return 10.0 * np.log10(self.power * self.bin_width / ref)

    def to_csv(self, path: str | Path) -> None:
        lines = ["freq_hz,psd_dbfs"]
        for f, db in zip(self.freqs, self.dbfs()):
            lines.append(f"{float(f)!r},{float(db)!r}")
        Path(path).write_text("\n".join(lines) + "\n")


def welch_psd(
    samples: np.ndarray,
    sample_rate: float,
    segment_len: Optional[int] = None,
    overlap: float = 0.5,
    window: str = "hann",
    full_scale: float = 1.0,
) -> PsdEstimate:
    """Averaged windowed periodogram (segment means removed).

    Defaults to eight segments' worth of resolution with 50 % overlap.
    """
    samples = np.asarray(samples, dtype=float)
    if segment_len is None:
        segment_len = max(16, samples.shape[0] // 8)
    if segment_len > samples.shape[0]:
        raise ValueError(
            f"segment_len {segment_len} exceeds record length {samples.shape[0]}"
        )
    if not 0.0 <= overlap < 1.0:
        raise ValueError("overlap must be in [0, 1)")
    freqs, power = scipy.signal.welch(
        samples,
        fs=sample_rate,
        window=window,
        nperseg=segment_len,
        noverlap=int(segment_len * overlap),
        detrend="constant",
        scaling="density",
    )
    return PsdEstimate(
        freqs=freqs,
        power=power,
        window=window,
        segment_len=segment_len,
        overlap=overlap,
        full_scale=full_scale,
        sample_rate=sample_rate,
    )


def snr_enob(
    psd: PsdEstimate,
    signal_freq: float,
    band: Optional[tuple[float, float]] = None,
    guard_bins: int = 2,
) -> tuple[float, float]:
    """SNR and ENOB from an averaged PSD.

    Signal power is summed over the bin nearest signal_freq plus the
    window main lobe plus guard_bins on each side; everything else inside
    the band counts as noise.  ENOB = (SNR_dB - 1.76)/6.02.
    """
    if band is None:
        band = (0.0, psd.sample_rate / 2.0)
    if not band[0] <= signal_freq <= band[1]:
        raise ValueError("signal frequency lies outside the analysis band")
    half_width = _MAIN_LOBE.get(psd.window, 1) + guard_bins
    df = psd.bin_width
    sig_bin = int(round(signal_freq / df))
    lo, hi = sig_bin - half_width, sig_bin + half_width
    in_band = (psd.freqs >= band[0] - 0.5 * df) & (psd.freqs <= band[1] + 0.5 * df)
    band_idx = np.nonzero(in_band)[0]
    if lo <= band_idx[0] or hi >= band_idx[-1]:
        raise ValueError("signal support touches the band edge; widen the band "
                         "or move the tone")
    support = np.zeros_like(in_band)
    support[lo : hi + 1] = True
    p_signal = float(np.sum(psd.power[support & in_band]))
    p_noise = float(np.sum(psd.power[in_band & ~support]))
    if p_noise <= 0.0 or p_signal <= 0.0:
        return float("inf"), float("inf")
    snr_db = 10.0 * np.log10(p_signal / p_noise)
    return snr_db, (snr_db - 1.76) / 6.02


def state_histogram(
    record: SimRecord,
    stage: int,
    n_bins: int = 61,
    normalized: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Histogram of the edge-sampled voltage of one stage (1-based).

    With normalized=True the samples are divided by the stage's swing
    ceiling delta^l * v_max before binning.
    """
    if record.state_samples is None:
        raise ValueError("record carries no state samples")
    if not 1 <= stage <= record.n_stages:
        raise ValueError(f"stage must be in 1..{record.n_stages}")
    samples = record.post_warmup_states()[:, stage - 1].copy()
    if normalized:
        params = record.config["params"]
        samples /= params["delta"] ** stage * params["v_max"]
    counts, edges = np.histogram(samples, bins=n_bins)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return centers, counts


class InputCurrentStats(NamedTuple):
    nominal_rms: float
    excess_max: float
    excess_bound: float

    @property
    def within_bound(self) -> bool:
        return self.excess_max <= self.excess_bound


def input_current_stats(
    record: SimRecord,
    elements,
    input_signal: InputSignal,
) -> InputCurrentStats:
    """Source loading: nominal current v_u/R and worst excess |v_x1|/R.

    Because the first node swings no further than delta*v_max, the excess
    current drawn on top of v_u/R stays below delta*v_max/R; the returned
    bound lets callers verify that on the actual trajectory.
    """
    if record.state_samples is None:
        raise ValueError("record carries no state samples")
    params = record.config["params"]
    r_in = float(elements.chain_r[0])
    edges = input_signal.edge_values(record.n_cycles, params["f_s"], input_rng(record.seed))
    usable = edges[record.warmup_cycles :]
    nominal_rms = float(np.sqrt(np.mean((usable / r_in) ** 2)))
    excess_max = float(np.max(np.abs(record.post_warmup_states()[:, 0])) / r_in)
    bound = params["delta"] * params["v_max"] / r_in
    return InputCurrentStats(nominal_rms=nominal_rms, excess_max=excess_max, excess_bound=bound)


def histogram_to_csv(centers: np.ndarray, counts: np.ndarray, path: str | Path) -> None:
    lines = ["bin_center,counts"]
    for c, n in zip(centers, counts):
        lines.append(f"{float(c)!r},{int(n)}")
    Path(path).write_text("\n".join(lines) + "\n")


def state_histograms_to_csv(record: SimRecord, path: str | Path, n_bins: int = 61) -> None:
    """All-stage histogram CSV with columns b_1,c_1,...,b_N,c_N (raw volts)."""
    cols = []
    for stage in range(1, record.n_stages + 1):
        centers, counts = state_histogram(record, stage, n_bins=n_bins)
        cols.append((centers, counts))
    header = ",".join(f"b_{s},c_{s}" for s in range(1, record.n_stages + 1))
    lines = [header]
    for row in range(n_bins):
        cells = []
        for centers, counts in cols:
            cells.append(repr(float(centers[row])))
            cells.append(str(int(counts[row])))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")
