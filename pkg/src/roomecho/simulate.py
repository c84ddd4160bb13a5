"""Desk-scale RIR simulation: image-source method with a stochastic tail.

Shoebox rooms use the exact mirror lattice; extruded rooms use recursive
mirroring with per-receiver specular-path validation (unfolding) and
occlusion tests, which non-convex footprints require.

Amplitude conventions: free-field spreading 1/(4*pi*d); each bounce
multiplies the pressure amplitude by sqrt(1 - alpha). Output waveforms
are DC-blocked (~70 Hz one-pole high-pass) because a physical
source/receiver chain passes no DC.
"""

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .errors import (
    InfiniteReverberationError,
    InvalidGeometryError,
    InvalidPlacementError,
)
from .geometry import (
    SOURCE_RECEIVER_GAP,
    SURFACE_CLEARANCE,
    Room,
    _points_in_polygon_2d,
)

DEDUP_DECIMALS = 9  # image positions equal within 1e-9 m collapse to one


@dataclass(frozen=True)
class SimConfig:
    sample_rate: int = 22050
    rir_length: int = 9600
    speed_of_sound: float = 343.0
    max_reflection_order: int = 4
    tail_enabled: bool = True
    tail_rays: int = 5000
    seed: int = 0
    dc_block_pole: float = 0.98  # one-pole high-pass; 0 disables

    def __post_init__(self):
        if self.max_reflection_order < 0:
            raise ValueError("max_reflection_order must be >= 0")
        if self.rir_length <= 0 or self.sample_rate <= 0:
            raise ValueError("rir_length and sample_rate must be positive")

    @property
    def duration(self) -> float:
        return self.rir_length / self.sample_rate


@dataclass(frozen=True)
class RIRRecord:
    waveform: np.ndarray  # (rir_length,) float32
    room_id: str
    source: np.ndarray
    receiver: np.ndarray


@dataclass(frozen=True)
class ImageSource:
    position: np.ndarray
    order: int
    attenuation: float
    surface_seq: tuple[int, ...] = ()
    # mirror positions of every prefix of surface_seq, used for unfolding
    prefix_positions: np.ndarray = field(default=None, repr=False)


def _reflection_factors(room: Room) -> np.ndarray:
    return np.sqrt(1.0 - room.absorptions())


def _require_watertight(room: Room) -> None:
    if room.normals is None or room.areas is None:
        raise InvalidGeometryError("room lacks surface metadata")
    flux = (room.areas[:, None] * room.normals).sum(axis=0)
    if np.linalg.norm(flux) > 1e-6:
        raise InvalidGeometryError("room surface set is not watertight")


def _wall_index(room: Room, normal: np.ndarray) -> int:
    dots = room.normals @ normal
    idx = int(np.argmax(dots))
    if dots[idx] < 0.999:
        raise InvalidGeometryError("shoebox wall normals are not axis aligned")
    return idx


def _axis_images(length: float, coord: float, beta_lo: float, beta_hi: float,
                 max_order: int):
    """Per-axis mirror set: (coordinate, order, attenuation) triples."""
    out = []
    for n in range(-(max_order + 1), max_order + 2):
        for q in (0, 1):
            order = abs(n - q) + abs(n)
            if order > max_order:
                continue
            pos = 2.0 * n * length + (1 - 2 * q) * coord
            att = beta_lo ** abs(n - q) * beta_hi ** abs(n)
            out.append((pos, order, att))
    return out


def _shoebox_images(room: Room, source: np.ndarray, max_order: int) -> list[ImageSource]:
    dims = room.bbox_max - room.bbox_min
    beta = _reflection_factors(room)
    axes = []
    for ax, (n_lo, n_hi) in enumerate([
        ([1, 0, 0], [-1, 0, 0]),
        ([0, 1, 0], [0, -1, 0]),
        ([0, 0, 1], [0, 0, -1]),
    ]):
        lo = _wall_index(room, np.array(n_lo, dtype=float))
        hi = _wall_index(room, np.array(n_hi, dtype=float))
        axes.append(_axis_images(dims[ax], source[ax] - room.bbox_min[ax],
                                 beta[lo], beta[hi], max_order))
    images = []
    for px, ox, ax_att in axes[0]:
        for py, oy, ay_att in axes[1]:
            if ox + oy > max_order:
                continue
            for pz, oz, az_att in axes[2]:
                order = ox + oy + oz
                if order > max_order:
                    continue
                pos = room.bbox_min + np.array([px, py, pz])
                images.append(ImageSource(
                    position=pos, order=order,
                    attenuation=float(ax_att * ay_att * az_att)))
    return images


def _recursive_images(room: Room, source: np.ndarray, max_order: int,
                      dedupe: bool = True) -> list[ImageSource]:
    """Breadth-first mirror sequences with interior-side pruning.

    With ``dedupe`` the list collapses coincident positions (public
    contract). Arrival computation needs every candidate sequence: two
    sequences can share a position while only one unfolds validly for a
    particular receiver, so deduping there must wait until after the
    visibility test.
    """
    beta = _reflection_factors(room)
    normals, offsets = room.normals, room.offsets
    src = np.asarray(source, dtype=float)
    frontier = [(src, 1.0, (), src[None, :])]
    images = [ImageSource(position=src, order=0, attenuation=1.0,
                          surface_seq=(), prefix_positions=src[None, :])]
    seen = {tuple(np.round(src, DEDUP_DECIMALS))}
    for _ in range(max_order):
        nxt = []
        for pos, att, seq, prefix in frontier:
            last = seq[-1] if seq else -1
            for s in range(room.n_surfaces):
                if s == last:
                    continue
                n, off = normals[s], offsets[s]
                side = pos @ n - off
                if side <= 1e-12:
                    continue  # mirroring only from the interior side
                mirrored = pos - 2.0 * side * n
                if dedupe:
                    key = tuple(np.round(mirrored, DEDUP_DECIMALS))
                    if key in seen:
                        continue
                    seen.add(key)
                new_seq = seq + (s,)
                new_prefix = np.vstack([prefix, mirrored[None, :]])
                images.append(ImageSource(
                    position=mirrored, order=len(new_seq),
                    attenuation=float(att * beta[s]),
                    surface_seq=new_seq, prefix_positions=new_prefix))
                nxt.append((mirrored, att * beta[s], new_seq, new_prefix))
        frontier = nxt
    return images


def enumerate_image_sources(room: Room, source, order: int) -> list[ImageSource]:
    """All mirror images of the source up to the given reflection order."""
    _require_watertight(room)
    src = np.asarray(source, dtype=float)
    if not room.contains(src):
        raise InvalidPlacementError("source must be strictly inside the room")
    if order < 0:
        raise ValueError("order must be >= 0")
    if room.kind == "shoebox":
        return _shoebox_images(room, src, order)
    return _recursive_images(room, src, order)


# ---------------------------------------------------------------------------
# Visibility for extruded rooms
# ---------------------------------------------------------------------------

_SEG_EPS = 1e-9


def _surface_projection(room: Room, s: int):
    n = room.normals[s]
    ax = int(np.argmax(np.abs(n)))
    keep = [i for i in range(3) if i != ax]
    return keep, room.surfaces[s][:, keep]


def _segments_blocked(room: Room, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """True where the open segment a->b crosses any surface polygon."""
    blocked = np.zeros(len(a), dtype=bool)
    d = b - a
    for s in range(room.n_surfaces):
        n, off = room.normals[s], room.offsets[s]
        denom = d @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (off - a @ n) / denom
        cand = (np.abs(denom) > 1e-12) & (t > _SEG_EPS) & (t < 1.0 - _SEG_EPS) & ~blocked
        if not np.any(cand):
            continue
        pts = a[cand] + t[cand, None] * d[cand]
        keep, poly = _surface_projection(room, s)
        inside = _points_in_polygon_2d(pts[:, keep], poly)
        idx = np.where(cand)[0][inside]
        blocked[idx] = True
    return blocked


def _visible_mask(room: Room, images: list[ImageSource], receiver: np.ndarray) -> np.ndarray:
    """Specular-path validity per image for one receiver; batched unfolding."""
    rcv = np.asarray(receiver, dtype=float)
    visible = np.zeros(len(images), dtype=bool)
    by_depth: dict[int, list[int]] = {}
    for i, img in enumerate(images):
        by_depth.setdefault(len(img.surface_seq), []).append(i)
    for depth, idxs in by_depth.items():
        m = len(idxs)
        if depth == 0:
            a = np.tile(rcv, (m, 1))
            b = np.array([images[i].position for i in idxs])
            ok = ~_segments_blocked(room, a, b)
            visible[idxs] = ok
            continue
        prefix = np.array([images[i].prefix_positions for i in idxs])  # (m, depth+1, 3)
        seqs = np.array([images[i].surface_seq for i in idxs])          # (m, depth)
        x = np.tile(rcv, (m, 1))
        ok = np.ones(m, dtype=bool)
        for j in range(depth, 0, -1):
            target = prefix[:, j]
            sid = seqs[:, j - 1]
            n = room.normals[sid]
            off = room.offsets[sid]
            d = target - x
            denom = np.einsum("ij,ij->i", d, n)
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (off - np.einsum("ij,ij->i", x, n)) / denom
            ok &= np.isfinite(t) & (t > _SEG_EPS) & (t < 1.0 - _SEG_EPS)
            hit = x + t[:, None] * d
            # reflection point must land on the mirroring polygon
            for s in np.unique(sid):
                sel = ok & (sid == s)
                if not np.any(sel):
                    continue
                keep, poly = _surface_projection(room, int(s))
                inside = _points_in_polygon_2d(hit[sel][:, keep], poly)
                tmp = ok[sel]
                tmp &= inside
                ok[sel] = tmp
            live = np.where(ok)[0]
            if live.size:
                seg_block = _segments_blocked(room, x[live], hit[live])
                ok[live[seg_block]] = False
            x = np.where(ok[:, None], hit, x)
        live = np.where(ok)[0]
        if live.size:
            seg_block = _segments_blocked(room, x[live], prefix[live, 0])
            ok[live[seg_block]] = False
        visible[np.array(idxs)] = ok
    return visible


def image_arrivals(room: Room, source, receiver, cfg: SimConfig, images=None):
    """Visible-image arrival times (s) and pressure amplitudes.

    ``images`` lets batch callers reuse one enumeration for many receivers;
    it must come from the matching internal enumeration (all candidate
    sequences for extrusions).
    """
    src = np.asarray(source, dtype=float)
    rcv = np.asarray(receiver, dtype=float)
    if images is None:
        images = candidate_images(room, src, cfg.max_reflection_order)
    if room.kind == "shoebox":
        mask = np.ones(len(images), dtype=bool)
    else:
        mask = _visible_mask(room, images, rcv)
        # coincident positions are alternative unfoldings of one physical
        # ray; at most one validates, but collapse defensively
        kept = {}
        for i in np.where(mask)[0]:
            key = tuple(np.round(images[i].position, DEDUP_DECIMALS))
            if key in kept:
                mask[i] = False
            else:
                kept[key] = i
    pos = np.array([im.position for im in images])[mask]
    att = np.array([im.attenuation for im in images])[mask]
    if len(pos) == 0:
        return np.zeros(0), np.zeros(0)
    dist = np.linalg.norm(pos - rcv, axis=1)
    good = dist > 1e-9
    times = dist[good] / cfg.speed_of_sound
    amps = att[good] / (4.0 * np.pi * dist[good])
    order = np.argsort(times, kind="stable")
    return times[order], amps[order]


def candidate_images(room: Room, source, order: int) -> list[ImageSource]:
    """Enumeration suitable for arrival computation (see image_arrivals)."""
    _require_watertight(room)
    src = np.asarray(source, dtype=float)
    if not room.contains(src):
        raise InvalidPlacementError("source must be strictly inside the room")
    if room.kind == "shoebox":
        return _shoebox_images(room, src, order)
    return _recursive_images(room, src, order, dedupe=False)


# ---------------------------------------------------------------------------
# RIR synthesis
# ---------------------------------------------------------------------------

def _pair_rng(cfg: SimConfig, room_id: str, src: np.ndarray, rcv: np.ndarray):
    """Deterministic generator keyed by (seed, room, source, receiver)."""
    payload = room_id.encode() + struct.pack("<q6d", cfg.seed, *src, *rcv)
    digest = hashlib.sha256(payload).digest()
    words = [int.from_bytes(digest[i:i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence(words))


def _check_pair(room: Room, src: np.ndarray, rcv: np.ndarray) -> None:
    if np.linalg.norm(src - rcv) < SOURCE_RECEIVER_GAP - 1e-9:
        raise InvalidPlacementError(
            f"source and receiver must be >= {SOURCE_RECEIVER_GAP} m apart")
    for name, p in (("source", src), ("receiver", rcv)):
        if not room.contains(p):
            raise InvalidPlacementError(f"{name} is not inside room {room.id}")
        if np.min(room.surface_distance(p)) < SURFACE_CLEARANCE - 1e-9:
            raise InvalidPlacementError(
                f"{name} must be >= {SURFACE_CLEARANCE} m from every surface")


def _scatter_impulses(wave: np.ndarray, times_s: np.ndarray, amps: np.ndarray,
                      fs: float) -> None:
    """Place impulses with 2-tap linear interpolation on the sample grid."""
    idx = times_s * fs
    i0 = np.floor(idx).astype(int)
    frac = idx - i0
    n = len(wave)
    lo = i0[i0 < n]
    np.add.at(wave, lo, (amps * (1.0 - frac))[i0 < n])
    hi_ok = (i0 + 1) < n
    np.add.at(wave, i0[hi_ok] + 1, (amps * frac)[hi_ok])


def _tail_amplitude_fit(wave: np.ndarray, first: int, onset: int, t60: float,
                        fs: float) -> float:
    """Amplitude A of the Sabine energy envelope A^2 10^(-6t/T60).

    Fitted to the image-source energy with the decay rate held at the
    Sabine value. The truncated reflection orders deplete the trailing
    samples, so extrapolating this envelope (rather than matching the
    trailing RMS) keeps the late field at a physical level.
    """
    seg = wave[first:onset] ** 2
    n_bins = len(seg) // 64
    if n_bins < 1:
        rms = float(np.sqrt(np.mean(seg))) if len(seg) else 0.0
        return rms
    e_bin = seg[: n_bins * 64].reshape(n_bins, 64).mean(axis=1)
    t_bin = (first + (np.arange(n_bins) + 0.5) * 64) / fs
    ok = e_bin > 0
    if not np.any(ok):
        return 0.0
    ln_a2 = float(np.mean(np.log(e_bin[ok]) + (6.0 * np.log(10.0) / t60) * t_bin[ok]))
    return float(np.exp(ln_a2 / 2.0))


def simulate_rir(room: Room, source, receiver, cfg: SimConfig) -> RIRRecord:
    """Image-source RIR with an optional seeded diffuse tail."""
    src = np.asarray(source, dtype=float)
    rcv = np.asarray(receiver, dtype=float)
    _check_pair(room, src, rcv)
    times, amps = image_arrivals(room, src, rcv, cfg)
    wave = synthesize_waveform(room, src, rcv, cfg, times, amps)
    return RIRRecord(waveform=wave, room_id=room.id, source=src, receiver=rcv)


def synthesize_waveform(room: Room, source, receiver, cfg: SimConfig,
                        times: np.ndarray, amps: np.ndarray) -> np.ndarray:
    """Compose the float32 waveform from precomputed arrivals."""
    src = np.asarray(source, dtype=float)
    rcv = np.asarray(receiver, dtype=float)
    fs = float(cfg.sample_rate)
    n = cfg.rir_length
    wave = np.zeros(n, dtype=np.float64)
    _scatter_impulses(wave, times, amps, fs)

    if cfg.tail_enabled and len(times):
        t60 = sabine_t60(room)
        onset = int(np.floor(times[-1] * fs)) + 2  # 1 sample past the last tap
        if onset < n - 1:
            rng = _pair_rng(cfg, room.id, src, rcv)
            span = n - onset
            count = max(1, int(round(cfg.tail_rays * span / n)))
            t_rel = np.sort(rng.random(count)) * (span - 1) / fs
            g = rng.standard_normal(count)
            first = int(np.floor(times[0] * fs))
            amp = _tail_amplitude_fit(wave, first, onset, t60, fs)
            if amp > 0.0:
                sigma = amp * 10.0 ** (-3.0 * (onset / fs + t_rel) / t60)
                tail = np.zeros(span, dtype=np.float64)
                _scatter_impulses(tail, t_rel, sigma * g * np.sqrt(span / count), fs)
                wave[onset:] += tail

    if cfg.dc_block_pole > 0.0:
        wave = lfilter([1.0, -1.0], [1.0, -cfg.dc_block_pole], wave)

    return wave.astype(np.float32)


def sabine_t60(room: Room, absorptions=None) -> float:
    """T60 = 0.161 V / sum(alpha_i * S_i)."""
    alphas = room.absorptions() if absorptions is None else np.asarray(absorptions, float)
    total = float((alphas * room.areas).sum())
    if total <= 0.0:
        raise InfiniteReverberationError("zero total absorption: T60 diverges")
    return 0.161 * room.volume / total
