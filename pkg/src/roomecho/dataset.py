"""Dataset generation, on-disk layout, loading, and train/test splits.

Layout under the output directory:

    manifest.json
    rooms/<room_id>/geometry.json
    rooms/<room_id>/placement.json
    rooms/<room_id>/panoramas/<rcv>.f32  (+ .json sidecar)
    rooms/<room_id>/rirs.f32             (waveforms concatenated in index order)

The RIR index orders waveforms receiver-major within each room; byte
offsets point into that room's blob. Everything is deterministic given the
generator seed.
"""

import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import geometry as geo
from . import simulate
from .errors import PlacementInfeasibleError, SplitInfeasibleError

FORMAT_VERSION = 1
GEOMETRY_RETRIES = 20


def thread_count(override: int | None = None) -> int:
    """Worker cap: CLI override beats ROOMECHO_THREADS beats single-thread."""
    if override is not None and override > 0:
        return override
    env = os.environ.get("ROOMECHO_THREADS", "")
    if env.isdigit() and int(env) > 0:
        return int(env)
    return 1


@dataclass(frozen=True)
class CategorySpec:
    name: str
    kind: str                      # "shoebox" | "lshape"
    x_range: tuple[float, float]
    y_range: tuple[float, float]
    z_range: tuple[float, float]


DEFAULT_CATEGORIES = (
    CategorySpec("studio", "shoebox", (3.5, 4.8), (4.0, 5.5), (2.6, 3.0)),
    CategorySpec("office", "shoebox", (4.5, 7.0), (5.0, 8.5), (2.7, 3.4)),
    CategorySpec("lounge", "lshape", (5.0, 7.5), (5.0, 7.5), (2.7, 3.3)),
)


@dataclass(frozen=True)
class GenConfig:
    rooms_per_category: int = 5
    n_sources: int = 8
    n_receivers: int = 6
    n_ref_candidates: int = 10
    seed: int = 0
    categories: tuple[CategorySpec, ...] = DEFAULT_CATEGORIES
    sim: simulate.SimConfig = field(default_factory=simulate.SimConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["categories"] = [asdict(c) for c in self.categories]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GenConfig":
        d = dict(d)
        d["categories"] = tuple(CategorySpec(**c) for c in d["categories"])
        d["sim"] = simulate.SimConfig(**d["sim"])
        return cls(**d)


def config_hash(obj) -> str:
    return hashlib.sha256(
        json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def _sample_room(cat: CategorySpec, rng, room_id: str,
                 material_ids: list[str]) -> geo.Room:
    x = rng.uniform(*cat.x_range)
    y = rng.uniform(*cat.y_range)
    z = rng.uniform(*cat.z_range)
    if cat.kind == "shoebox":
        return geo.make_shoebox((x, y, z), material_ids[:6], room_id=room_id)
    if cat.kind == "lshape":
        nx = x * rng.uniform(0.35, 0.55)
        ny = y * rng.uniform(0.35, 0.55)
        fp = [(0, 0), (x, 0), (x, y - ny), (x - nx, y - ny), (x - nx, y), (0, y)]
        return geo.make_polygonal_room(fp, z, material_ids[:8], room_id=room_id)
    raise ValueError(f"unknown room kind {cat.kind!r}")


def _draw_materials(rng, count: int) -> list[str]:
    pool = [m.id for m in geo.MATERIAL_LIBRARY if m.category != "anechoic"]
    return [pool[int(rng.integers(len(pool)))] for _ in range(count)]


def generate_dataset(cfg: GenConfig, out_dir, threads: int | None = None,
                     log=None) -> dict:
    """Simulate the full dataset and write it under out_dir; returns the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log = log or (lambda *a, **k: None)
    workers = thread_count(threads)
    rooms_meta = []
    rir_index = []
    for ci, cat in enumerate(cfg.categories):
        for ri in range(cfg.rooms_per_category):
            room_id = f"{cat.name}_{ri:02d}"
            entry = _generate_room(cfg, cat, ci, ri, room_id, out, workers, log)
            if entry is None:
                log("room_skipped", room_id=room_id)
                continue
            room_meta, index_rows = entry
            rooms_meta.append(room_meta)
            rir_index.extend(index_rows)
    manifest = {
        "format_version": FORMAT_VERSION,
        "generator_seed": cfg.seed,
        "gen_config": cfg.to_dict(),
        "config_hash": config_hash(cfg.to_dict()),
        "rooms": rooms_meta,
        "rir_index": rir_index,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    log("dataset_written", rooms=len(rooms_meta), rirs=len(rir_index))
    return manifest


def _generate_room(cfg, cat, ci, ri, room_id, out, workers, log):
    scfg = cfg.sim
    for attempt in range(GEOMETRY_RETRIES):
        rng = np.random.default_rng([cfg.seed, ci, ri, attempt])
        mats = _draw_materials(rng, 8)
        room = _sample_room(cat, rng, room_id, mats)
        placement_seed = int(rng.integers(2 ** 31))
        try:
            placement = geo.sample_placements(
                room, cfg.n_sources, cfg.n_receivers, seed=placement_seed,
                n_ref=cfg.n_ref_candidates)
        except PlacementInfeasibleError:
            continue
        break
    else:
        return None

    rdir = out / "rooms" / room_id
    (rdir / "panoramas").mkdir(parents=True, exist_ok=True)
    (rdir / "geometry.json").write_text(
        json.dumps(geo.room_to_dict(room), indent=2) + "\n")
    (rdir / "placement.json").write_text(
        json.dumps(geo.placement_to_dict(placement), indent=2) + "\n")

    def render(i):
        return geo.render_panorama_depth(room, placement.receivers[i])

    with ThreadPoolExecutor(max_workers=workers) as pool:
        panos = list(pool.map(render, range(cfg.n_receivers)))
    pano_files = []
    for i, pano in enumerate(panos):
        path = rdir / "panoramas" / f"{i}.f32"
        geo.save_panorama(path, pano)
        pano_files.append(str(path.relative_to(out)))

    pairs = [(rcv, src) for rcv in range(cfg.n_receivers)
             for src in range(cfg.n_sources)]
    images_per_src = {
        src: simulate.candidate_images(room, placement.sources[src],
                                  scfg.max_reflection_order)
        for src in range(cfg.n_sources)
    }

    def run_pair(pair):
        rcv, src = pair
        times, amps = simulate.image_arrivals(
            room, placement.sources[src], placement.receivers[rcv], scfg,
            images=images_per_src[src])
        return simulate.synthesize_waveform(room, placement.sources[src],
                                       placement.receivers[rcv], scfg,
                                       times, amps)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        waveforms = list(pool.map(run_pair, pairs))

    index_rows = []
    with open(rdir / "rirs.f32", "wb") as fh:
        offset = 0
        for (rcv, src), wave in zip(pairs, waveforms):
            fh.write(wave.astype("<f4").tobytes())
            index_rows.append({
                "room_id": room_id,
                "receiver_idx": rcv,
                "source_idx": src,
                "byte_offset": offset,
            })
            offset += scfg.rir_length * 4

    room_meta = {
        "id": room_id,
        "category": cat.name,
        "kind": room.kind,
        "material_ids": list(room.material_ids),
        "geometry_file": str((rdir / "geometry.json").relative_to(out)),
        "placement_file": str((rdir / "placement.json").relative_to(out)),
        "panorama_files": pano_files,
        "rir_file": str((rdir / "rirs.f32").relative_to(out)),
        "n_sources": cfg.n_sources,
        "n_receivers": cfg.n_receivers,
        "reference_source_indices": list(placement.reference_source_indices),
    }
    log("room_done", room_id=room_id, rirs=len(index_rows))
    return room_meta, index_rows


class Dataset:
    """Read-side view over a generated dataset directory."""

    def __init__(self, root):
        self.root = Path(root)
        self.manifest = json.loads((self.root / "manifest.json").read_text())
        self.sim_config = simulate.SimConfig(**self.manifest["gen_config"]["sim"])
        self._rooms: dict[str, geo.Room] = {}
        self._placements: dict[str, geo.Placement] = {}
        self._blobs: dict[str, np.ndarray] = {}
        self._coord_cache: dict = {}
        self._spec_cache: dict = {}
        self._meta = {r["id"]: r for r in self.manifest["rooms"]}
        self._index = {}
        for row in self.manifest["rir_index"]:
            key = (row["room_id"], row["receiver_idx"], row["source_idx"])
            self._index[key] = row["byte_offset"]

    @property
    def room_ids(self) -> list[str]:
        return [r["id"] for r in self.manifest["rooms"]]

    def room_meta(self, room_id: str) -> dict:
        return self._meta[room_id]

    def categories(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for r in self.manifest["rooms"]:
            out.setdefault(r["category"], []).append(r["id"])
        return out

    def room(self, room_id: str) -> geo.Room:
        if room_id not in self._rooms:
            path = self.root / self._meta[room_id]["geometry_file"]
            self._rooms[room_id] = geo.room_from_dict(json.loads(path.read_text()))
        return self._rooms[room_id]

    def placement(self, room_id: str) -> geo.Placement:
        if room_id not in self._placements:
            path = self.root / self._meta[room_id]["placement_file"]
            self._placements[room_id] = geo.placement_from_dict(
                json.loads(path.read_text()))
        return self._placements[room_id]

    def reference_candidates(self, room_id: str) -> tuple[int, ...]:
        return tuple(self._meta[room_id]["reference_source_indices"])

    def bbox_diag(self, room_id: str) -> float:
        room = self.room(room_id)
        return float(np.linalg.norm(room.bbox_max - room.bbox_min))

    def panorama(self, room_id: str, receiver_idx: int) -> geo.PanoramaDepth:
        path = self.root / self._meta[room_id]["panorama_files"][receiver_idx]
        return geo.load_panorama(path)

    def coord_map_pooled(self, room_id: str, receiver_idx: int,
                         map_h: int, map_w: int) -> np.ndarray:
        """Camera-frame boundary coordinates, average-pooled and cached."""
        key = (room_id, receiver_idx, map_h, map_w)
        if key not in self._coord_cache:
            from .model import pool_map
            pano = self.panorama(room_id, receiver_idx)
            coords = geo.depth_to_coords(pano).values
            self._coord_cache[key] = pool_map(coords, map_h, map_w).astype(np.float32)
        return self._coord_cache[key]

    def _blob(self, room_id: str) -> np.ndarray:
        if room_id not in self._blobs:
            path = self.root / self._meta[room_id]["rir_file"]
            self._blobs[room_id] = np.fromfile(path, dtype="<f4")
        return self._blobs[room_id]

    def rir(self, room_id: str, receiver_idx: int, source_idx: int) -> simulate.RIRRecord:
        offset = self._index[(room_id, receiver_idx, source_idx)]
        n = self.sim_config.rir_length
        start = offset // 4
        wave = self._blob(room_id)[start:start + n]
        placement = self.placement(room_id)
        return simulate.RIRRecord(
            waveform=wave,
            room_id=room_id,
            source=placement.sources[source_idx],
            receiver=placement.receivers[receiver_idx],
        )

    def spectrogram(self, room_id: str, receiver_idx: int,
                    source_idx: int) -> np.ndarray:
        """Cached log-magnitude spectrogram of the unshifted waveform."""
        key = (room_id, receiver_idx, source_idx)
        if key not in self._spec_cache:
            from . import dsp
            wave = self.rir(*key).waveform.astype(np.float64)
            self._spec_cache[key] = dsp.stft_logmag(wave).values.astype(np.float32)
        return self._spec_cache[key]

    def all_examples(self) -> list[tuple[str, int, int]]:
        return sorted(self._index)

    def all_records(self) -> list[simulate.RIRRecord]:
        return [self.rir(*key) for key in self.all_examples()]


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    mode: str                               # "seen" | "unseen"
    train_rooms: tuple[str, ...]
    test_rooms: tuple[str, ...]
    train_receivers: dict                   # room_id -> receiver indices (seen)
    test_receivers: dict
    seed: int

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "seed": self.seed,
            "train_rooms": list(self.train_rooms),
            "test_rooms": list(self.test_rooms),
            "train_receivers": {k: list(v) for k, v in self.train_receivers.items()},
            "test_receivers": {k: list(v) for k, v in self.test_receivers.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        return cls(
            mode=d["mode"], seed=d["seed"],
            train_rooms=tuple(d["train_rooms"]),
            test_rooms=tuple(d["test_rooms"]),
            train_receivers={k: tuple(v) for k, v in d["train_receivers"].items()},
            test_receivers={k: tuple(v) for k, v in d["test_receivers"].items()},
        )

    def train_examples(self, dataset: Dataset) -> list[tuple[str, int, int]]:
        return self._examples(dataset, self.train_rooms, self.train_receivers)

    def test_examples(self, dataset: Dataset) -> list[tuple[str, int, int]]:
        return self._examples(dataset, self.test_rooms, self.test_receivers)

    def _examples(self, dataset, rooms, receivers):
        out = []
        for key in dataset.all_examples():
            room_id, rcv, src = key
            if room_id not in rooms:
                continue
            if self.mode == "seen" and rcv not in receivers[room_id]:
                continue
            out.append(key)
        return out


def make_split(dataset: Dataset, mode: str, seed: int) -> SplitSpec:
    """90/10 partition: receivers within rooms (seen) or rooms per category."""
    if mode == "seen":
        train_rcv, test_rcv = {}, {}
        for room_id in dataset.room_ids:
            n = dataset.room_meta(room_id)["n_receivers"]
            if n < 2:
                raise SplitInfeasibleError(
                    f"room {room_id} has {n} receiver(s); seen mode needs >= 2")
            rng = np.random.default_rng([seed, _stable_int(room_id)])
            order = rng.permutation(n)
            n_train = max(1, min(int(np.floor(0.9 * n)), n - 1))
            train_rcv[room_id] = tuple(sorted(int(i) for i in order[:n_train]))
            test_rcv[room_id] = tuple(sorted(int(i) for i in order[n_train:]))
        rooms = tuple(dataset.room_ids)
        return SplitSpec(mode="seen", train_rooms=rooms, test_rooms=rooms,
                         train_receivers=train_rcv, test_receivers=test_rcv,
                         seed=seed)
    if mode == "unseen":
        train_rooms, test_rooms = [], []
        for cat, rooms in sorted(dataset.categories().items()):
            if len(rooms) < 2:
                raise SplitInfeasibleError(
                    f"category {cat} has {len(rooms)} room(s); unseen mode needs >= 2")
            rng = np.random.default_rng([seed, _stable_int(cat)])
            order = rng.permutation(len(rooms))
            n_train = max(1, min(int(np.floor(0.9 * len(rooms))), len(rooms) - 1))
            train_rooms.extend(rooms[i] for i in order[:n_train])
            test_rooms.extend(rooms[i] for i in order[n_train:])
        return SplitSpec(mode="unseen",
                         train_rooms=tuple(sorted(train_rooms)),
                         test_rooms=tuple(sorted(test_rooms)),
                         train_receivers={}, test_receivers={}, seed=seed)
    raise ValueError(f"unknown split mode {mode!r}")


def _stable_int(text: str) -> int:
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "little")


def save_split(path, split: SplitSpec) -> None:
    Path(path).write_text(json.dumps(split.to_dict(), indent=2) + "\n")


def load_split(path) -> SplitSpec:
    return SplitSpec.from_dict(json.loads(Path(path).read_text()))
