"""Spectrogram transforms, Griffin-Lim inversion, and room-acoustic metrics.

STFT configuration is fixed package-wide: FFT 124, periodic Hann window 62
(zero-padded and centered in the FFT frame), hop 31, reflect center padding.
A 9600-sample waveform maps to a 63 x 310 log-magnitude grid.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateShiftError,
    EmptySignalError,
    MetricUndefinedError,
    ShapeError,
)

SAMPLE_RATE = 22050
WAVE_LENGTH = 9600
N_FFT = 124
WIN_LENGTH = 62
HOP = 31
LOG_FLOOR = 1e-8
N_FREQ = N_FFT // 2 + 1            # 63
N_FRAMES = 1 + WAVE_LENGTH // HOP  # 310

EDC_CLAMP_DB = -120.0
EDT_THRESHOLD_DB = 5.0
C50_SPLIT_S = 0.050
C50_CLAMP_DB = 60.0
C50_ENERGY_FLOOR = 1e-20
T60_FIT_HIGH_DB = -5.0
T60_FIT_LOW_DB = -25.0
T60_MIN_R2 = 0.5
# Truncation bias of the backward integral exceeds 1 dB within
# log10(1/(1-10^-0.1))/6 ~ 0.1144 decay times of the signal end; a -25 dB
# crossing inside that edge region cannot support a T20 estimate.
T60_EDGE_GUARD = float(np.log10(1.0 / (1.0 - 10.0 ** -0.1)) / 6.0)


@dataclass(frozen=True)
class Spectrogram:
    """Log-magnitude (natural log) time-frequency grid of one RIR."""

    values: np.ndarray   # (63, 310)
    sample_rate: int = SAMPLE_RATE
    hop: int = HOP

    def __post_init__(self):
        if self.values.shape != (N_FREQ, N_FRAMES):
            raise ShapeError(
                f"spectrogram must be {N_FREQ}x{N_FRAMES}, got {self.values.shape}")


@dataclass(frozen=True)
class EnergyDecayCurve:
    values: np.ndarray   # dB re total energy, one entry per sample
    sample_rate: int


@dataclass(frozen=True)
class AcousticMetrics:
    edt: float
    c50: float
    t60: float
    t60_valid: bool
    c50_clamped: bool = False


# ---------------------------------------------------------------------------
# STFT / inverse STFT
# ---------------------------------------------------------------------------

def _analysis_window() -> np.ndarray:
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(WIN_LENGTH) / WIN_LENGTH)
    padded = np.zeros(N_FFT)
    off = (N_FFT - WIN_LENGTH) // 2
    padded[off:off + WIN_LENGTH] = w
    return padded


_WINDOW = _analysis_window()


def stft_complex(waveform: np.ndarray) -> np.ndarray:
    """Complex STFT, shape (63, 310) for a 9600-sample input."""
    x = np.asarray(waveform, dtype=np.float64)
    if x.ndim != 1 or len(x) != WAVE_LENGTH:
        raise ShapeError(f"waveform must have exactly {WAVE_LENGTH} samples")
    xp = np.pad(x, N_FFT // 2, mode="reflect")
    n_frames = 1 + (len(xp) - N_FFT) // HOP
    starts = np.arange(n_frames) * HOP
    frames = xp[starts[:, None] + np.arange(N_FFT)[None, :]] * _WINDOW
    return np.fft.rfft(frames, axis=1).T


def stft_logmag(waveform: np.ndarray) -> Spectrogram:
    """Log-magnitude spectrogram with the package-wide 1e-8 floor."""
    mag = np.abs(stft_complex(waveform))
    return Spectrogram(values=np.log(np.maximum(mag, LOG_FLOOR)))


def istft(spec_complex: np.ndarray, length: int = WAVE_LENGTH) -> np.ndarray:
    """Weighted overlap-add inverse of stft_complex."""
    frames = np.fft.irfft(spec_complex.T, n=N_FFT, axis=1) * _WINDOW
    n_frames = frames.shape[0]
    total = (n_frames - 1) * HOP + N_FFT
    y = np.zeros(total)
    den = np.zeros(total)
    for m in range(n_frames):
        sl = slice(m * HOP, m * HOP + N_FFT)
        y[sl] += frames[m]
        den[sl] += _WINDOW * _WINDOW
    y /= np.maximum(den, 1e-12)
    return y[N_FFT // 2:N_FFT // 2 + length]


def griffin_lim(magnitude: np.ndarray, iterations: int = 60, seed: int = 0,
                return_history: bool = False):
    """Iterative phase retrieval from a linear-domain magnitude grid.

    Seed 0 starts from zero phase; other seeds draw uniform random phase.
    Returns a 9600-sample waveform, deterministic given the seed. With
    ``return_history`` also returns the per-iteration spectral-convergence
    residuals || |STFT(y)| - M || / ||M||.
    """
    mag = np.asarray(magnitude, dtype=np.float64)
    if mag.shape != (N_FREQ, N_FRAMES):
        raise ShapeError(f"magnitude must be {N_FREQ}x{N_FRAMES}, got {mag.shape}")
    if iterations < 1:
        raise ValueError("need at least one iteration")
    if seed == 0:
        phase = np.zeros_like(mag)
    else:
        phase = np.random.default_rng(seed).uniform(-np.pi, np.pi, mag.shape)
    denom = float(np.linalg.norm(mag))

    def residual(spec):
        return float(np.linalg.norm(np.abs(spec) - mag) / denom) if denom > 0 else 0.0

    y = istft(mag * np.exp(1j * phase))
    history = []
    for _ in range(iterations):
        spec = stft_complex(y)
        history.append(residual(spec))  # residual of the estimate entering this step
        y = istft(mag * np.exp(1j * np.angle(spec)))
    history.append(residual(stft_complex(y)))
    if return_history:
        return y, history
    return y


def spectral_convergence(waveform: np.ndarray, magnitude: np.ndarray) -> float:
    """|| |STFT(y)| - M ||_F / ||M||_F, the Griffin-Lim residual."""
    mag = np.asarray(magnitude, dtype=np.float64)
    denom = np.linalg.norm(mag)
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(np.abs(stft_complex(waveform)) - mag) / denom)


# ---------------------------------------------------------------------------
# Energy decay and metrics
# ---------------------------------------------------------------------------

def schroeder_edc(waveform: np.ndarray, sample_rate: int = SAMPLE_RATE) -> EnergyDecayCurve:
    """Backward-integrated energy decay in dB, clamped at -120 dB."""
    h = np.asarray(waveform, dtype=np.float64)
    energy = h * h
    total = energy.sum()
    if total <= 0.0:
        raise EmptySignalError("cannot integrate an all-zero waveform")
    tail = np.cumsum(energy[::-1])[::-1]
    with np.errstate(divide="ignore"):
        edc = 10.0 * np.log10(tail / total)
    return EnergyDecayCurve(values=np.maximum(edc, EDC_CLAMP_DB), sample_rate=sample_rate)


def _crossing_time(edc: EnergyDecayCurve, level_db: float) -> float:
    """First time the curve crosses below level_db, linearly interpolated."""
    v = edc.values
    below = np.where(v <= level_db)[0]
    if below.size == 0:
        raise MetricUndefinedError(f"decay never reaches {level_db} dB")
    i = int(below[0])
    if i == 0:
        return 0.0
    frac = (v[i - 1] - level_db) / (v[i - 1] - v[i])
    return (i - 1 + frac) / edc.sample_rate


def metric_edt(waveform: np.ndarray, sample_rate: int = SAMPLE_RATE,
               threshold_db: float = EDT_THRESHOLD_DB) -> float:
    """Time of the initial threshold_db decay (default 5 dB), seconds."""
    edc = schroeder_edc(waveform, sample_rate)
    return _crossing_time(edc, -threshold_db)


def metric_c50(waveform: np.ndarray, sample_rate: int = SAMPLE_RATE):
    """Early-to-late (50 ms) energy ratio in dB; returns (value, clamped)."""
    h = np.asarray(waveform, dtype=np.float64)
    split = int(round(C50_SPLIT_S * sample_rate))
    if len(h) <= split:
        raise ShapeError("waveform shorter than the 50 ms split")
    energy = h * h
    early = float(energy[:split].sum())
    late = float(energy[split:].sum())
    if early + late <= 0.0:
        raise EmptySignalError("cannot compute clarity of an all-zero waveform")
    if late < C50_ENERGY_FLOOR:
        return C50_CLAMP_DB, True
    value = 10.0 * np.log10(max(early, C50_ENERGY_FLOOR) / late)
    return float(min(value, C50_CLAMP_DB)), value > C50_CLAMP_DB


def metric_t60(waveform: np.ndarray, sample_rate: int = SAMPLE_RATE):
    """T20-based reverberation time: line fit of the EDC on [-25, -5] dB.

    Returns (t60_seconds, valid). Invalid when the -25 dB level is never
    reached outside the truncation edge region, when fewer than two EDC
    samples fall in the fit band, or when the fit has r^2 < 0.5.
    """
    edc = schroeder_edc(waveform, sample_rate)
    v = edc.values
    band = np.where((v <= T60_FIT_HIGH_DB) & (v >= T60_FIT_LOW_DB))[0]
    crossed = np.where(v <= T60_FIT_LOW_DB)[0]
    if crossed.size == 0 or band.size < 2:
        return 0.0, False
    t = band / edc.sample_rate
    y = v[band]
    A = np.column_stack([t, np.ones_like(t)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    if slope >= 0.0:
        return 0.0, False
    est = 60.0 / abs(float(slope))
    fitted = slope * t + intercept
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum((y - fitted) ** 2)) / ss_tot if ss_tot > 0 else 0.0
    t_cross = crossed[0] / edc.sample_rate
    t_end = len(v) / edc.sample_rate
    edge_ok = t_cross <= t_end - T60_EDGE_GUARD * est
    return est, bool(r2 >= T60_MIN_R2 and edge_ok)


def t60_pct_error(pred_t60: float, gt_t60: float,
                  pred_valid: bool = True, gt_valid: bool = True):
    """Percent error 100*|pred - gt|/gt, or None when either side is invalid."""
    if not gt_valid or not pred_valid:
        return None
    return 100.0 * abs(pred_t60 - gt_t60) / gt_t60


def compute_metrics(waveform: np.ndarray, sample_rate: int = SAMPLE_RATE) -> AcousticMetrics:
    edt = metric_edt(waveform, sample_rate)
    c50, clamped = metric_c50(waveform, sample_rate)
    t60, valid = metric_t60(waveform, sample_rate)
    return AcousticMetrics(edt=edt, c50=c50, t60=t60, t60_valid=valid,
                           c50_clamped=clamped)


def edc_freq(log_spec: np.ndarray) -> np.ndarray:
    """Per-frequency-bin backward energy integration of a log-mag grid, dB."""
    s = np.asarray(log_spec, dtype=np.float64)
    energy = np.exp(2.0 * s)
    tail = np.cumsum(energy[:, ::-1], axis=1)[:, ::-1]
    return 10.0 * np.log10(tail / tail[:, :1])


# ---------------------------------------------------------------------------
# Alignment
# ---------------------------------------------------------------------------

def time_shift_align(ref_waveform: np.ndarray, d_target: float, d_ref: float,
                     sample_rate: int = SAMPLE_RATE,
                     speed_of_sound: float = 343.0) -> np.ndarray:
    """Integer-sample shift matching the reference to the target distance.

    Positive shifts delay (zero-pad the front), negative shifts advance;
    length is preserved.
    """
    if d_target <= 0 or d_ref <= 0:
        raise ValueError("distances must be positive")
    x = np.asarray(ref_waveform)
    shift = int(round((d_target - d_ref) / speed_of_sound * sample_rate))
    n = len(x)
    if abs(shift) >= n:
        raise DegenerateShiftError(f"shift of {shift} samples exceeds the waveform")
    if shift == 0:
        return x.copy()
    out = np.zeros_like(x)
    if shift > 0:
        out[shift:] = x[:n - shift]
    else:
        out[:n + shift] = x[-shift:]
    return out


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_spectrogram(path, spec: Spectrogram) -> None:
    """Raw little-endian float32, frequency-major, plus a JSON sidecar."""
    path = Path(path)
    spec.values.astype("<f4").tofile(path)
    sidecar = {
        "sample_rate": spec.sample_rate,
        "n_fft": N_FFT,
        "win_length": WIN_LENGTH,
        "hop": spec.hop,
        "floor": LOG_FLOOR,
        "shape": [N_FREQ, N_FRAMES],
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2) + "\n")


def load_spectrogram(path) -> Spectrogram:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    values = np.fromfile(path, dtype="<f4").reshape(*meta["shape"])
    return Spectrogram(values=values.astype(np.float64),
                       sample_rate=meta["sample_rate"], hop=meta["hop"])
