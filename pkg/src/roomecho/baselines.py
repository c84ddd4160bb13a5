"""Non-learned predictors used as comparison points.

The nearest-neighbor and interpolation baselines apply the same
time-shift alignment as the model's preprocessing; evaluation records the
flag so unaligned variants can be reported separately.
"""

from dataclasses import dataclass

import numpy as np

from . import dsp
from .simulate import RIRRecord


@dataclass(frozen=True)
class ReferenceSet:
    """K reference records sharing one receiver position."""

    records: tuple[RIRRecord, ...]
    distances: np.ndarray  # source-receiver distance per record, meters

    def __post_init__(self):
        if len(self.records) < 1:
            raise ValueError("need at least one reference record")
        rcv = self.records[0].receiver
        for r in self.records[1:]:
            if np.linalg.norm(r.receiver - rcv) > 1e-9:
                raise ValueError("reference records must share the receiver")

    @property
    def receiver(self) -> np.ndarray:
        return self.records[0].receiver

    @classmethod
    def from_records(cls, records) -> "ReferenceSet":
        records = tuple(records)
        d = np.array([np.linalg.norm(r.source - r.receiver) for r in records])
        return cls(records=records, distances=d)


def predict_random_across(records, seed: int) -> RIRRecord:
    """Uniform pick over every record in the dataset."""
    records = list(records)
    if not records:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(seed)
    return records[int(rng.integers(len(records)))]


def predict_random_same(records, room_id: str, seed: int) -> RIRRecord:
    """Uniform pick restricted to one room."""
    pool = [r for r in records if r.room_id == room_id]
    if not pool:
        raise ValueError(f"no records for room {room_id!r}")
    rng = np.random.default_rng(seed)
    return pool[int(rng.integers(len(pool)))]


def predict_nearest(refs: ReferenceSet, target_src, align: bool = True,
                    sample_rate: int = dsp.SAMPLE_RATE,
                    speed_of_sound: float = 343.0) -> np.ndarray:
    """Reference whose source is spatially closest to the target source."""
    tgt = np.asarray(target_src, dtype=float)
    gaps = [np.linalg.norm(r.source - tgt) for r in refs.records]
    k = int(np.argmin(gaps))  # argmin breaks ties toward the lowest index
    wave = refs.records[k].waveform.astype(np.float64)
    if not align:
        return wave
    d_target = float(np.linalg.norm(tgt - refs.receiver))
    return dsp.time_shift_align(wave, d_target, float(refs.distances[k]),
                                sample_rate, speed_of_sound)


def predict_linear_interp(refs: ReferenceSet, target_src, align: bool = True,
                          sample_rate: int = dsp.SAMPLE_RATE,
                          speed_of_sound: float = 343.0) -> np.ndarray:
    """Inverse-distance weighted sum of (aligned) reference waveforms."""
    tgt = np.asarray(target_src, dtype=float)
    gaps = np.array([max(np.linalg.norm(r.source - tgt), 1e-6)
                     for r in refs.records])
    weights = (1.0 / gaps) / np.sum(1.0 / gaps)
    d_target = float(np.linalg.norm(tgt - refs.receiver))
    out = np.zeros(len(refs.records[0].waveform))
    for w, rec, d_ref in zip(weights, refs.records, refs.distances):
        wave = rec.waveform.astype(np.float64)
        if align:
            wave = dsp.time_shift_align(wave, d_target, float(d_ref),
                                        sample_rate, speed_of_sound)
        out += w * wave
    return out
