"""Evaluation harness: per-example acoustic-metric errors, aggregate
reports, and dense clarity maps. Reports are written as JSON plus an
RFC-4180 CSV, with summary figures rendered alongside.
"""

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from . import baselines as bl
from . import dsp
from . import model as mdl
from . import simulate as sim
from .dataset import Dataset, SplitSpec, config_hash
from .errors import ConfigurationError

CSV_HEADER = ["example_id", "room_id", "method", "K",
              "edt_err_s", "c50_err_db", "t60_err_pct", "t60_valid"]

METHODS = ("oracle", "random-across", "random-same", "nearest", "linear", "model")

GRIFFIN_LIM_ITERS = 60
GRIFFIN_LIM_SEED = 0


@dataclass
class EvalReport:
    method: str
    k: int
    split_mode: str
    seed: int
    config_hash: str
    align: bool
    rows: list
    aggregates: dict

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "k": self.k,
            "split_mode": self.split_mode,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "align": self.align,
            "aggregates": self.aggregates,
            "rows": self.rows,
        }


def _choose_refs(candidates, exclude: int, k: int, rng):
    pool = [c for c in candidates if c != exclude]
    if len(pool) < k:
        raise ConfigurationError(f"only {len(pool)} candidates for K={k}")
    picked = rng.choice(len(pool), size=k, replace=False)
    return [pool[int(i)] for i in picked]


class ModelPredictor:
    """Checkpointed network + Griffin-Lim inversion to a waveform."""

    def __init__(self, checkpoint, dataset: Dataset):
        self.net, _ = mdl.load_checkpoint(checkpoint)
        self.net.eval()
        self.dataset = dataset

    def predict(self, room_id: str, rcv: int, src: int, refs) -> np.ndarray:
        data = self.dataset
        cfg = self.net.cfg
        placement = data.placement(room_id)
        coord = data.coord_map_pooled(room_id, rcv, cfg.map_h, cfg.map_w)
        scfg = data.sim_config
        ref_waves = [data.rir(room_id, rcv, r).waveform for r in refs]
        example = mdl.build_example(
            coord, placement.receivers[rcv], placement.sources[src],
            [placement.sources[r] for r in refs], ref_waves,
            bbox_diag=data.bbox_diag(room_id), cfg=cfg,
            sample_rate=scfg.sample_rate, speed_of_sound=scfg.speed_of_sound)
        with torch.no_grad():
            s_pred = self.net(mdl.collate([example]))[0].numpy().astype(np.float64)
        # cap the log magnitude so a divergent prediction cannot overflow exp
        return dsp.griffin_lim(np.exp(np.minimum(s_pred, 20.0)),
                               iterations=GRIFFIN_LIM_ITERS,
                               seed=GRIFFIN_LIM_SEED)


def _predict(method, dataset, all_records, room_id, rcv, src, refs, rng,
             align, model_predictor):
    placement = dataset.placement(room_id)
    if method == "oracle":
        return dataset.rir(room_id, rcv, src).waveform.astype(np.float64)
    if method == "random-across":
        return bl.predict_random_across(
            all_records, seed=int(rng.integers(2 ** 31))).waveform.astype(np.float64)
    if method == "random-same":
        return bl.predict_random_same(
            all_records, room_id, seed=int(rng.integers(2 ** 31))).waveform.astype(np.float64)
    refs_set = bl.ReferenceSet.from_records(
        [dataset.rir(room_id, rcv, r) for r in refs])
    scfg = dataset.sim_config
    target_src = placement.sources[src]
    if method == "nearest":
        return bl.predict_nearest(refs_set, target_src, align=align,
                                  sample_rate=scfg.sample_rate,
                                  speed_of_sound=scfg.speed_of_sound)
    if method == "linear":
        return bl.predict_linear_interp(refs_set, target_src, align=align,
                                        sample_rate=scfg.sample_rate,
                                        speed_of_sound=scfg.speed_of_sound)
    if method == "model":
        return model_predictor.predict(room_id, rcv, src, refs)
    raise ConfigurationError(f"unknown method {method!r}")


def metric_errors(pred_wave: np.ndarray, gt_wave: np.ndarray,
                  sample_rate: int) -> dict:
    edt_p = dsp.metric_edt(pred_wave, sample_rate)
    edt_g = dsp.metric_edt(gt_wave, sample_rate)
    c50_p, _ = dsp.metric_c50(pred_wave, sample_rate)
    c50_g, _ = dsp.metric_c50(gt_wave, sample_rate)
    t60_p, vp = dsp.metric_t60(pred_wave, sample_rate)
    t60_g, vg = dsp.metric_t60(gt_wave, sample_rate)
    t60_err = dsp.t60_pct_error(t60_p, t60_g, pred_valid=vp, gt_valid=vg)
    return {
        "edt_err_s": abs(edt_p - edt_g),
        "c50_err_db": abs(c50_p - c50_g),
        "t60_err_pct": t60_err,
        "t60_valid": t60_err is not None,
    }


def evaluate(dataset: Dataset, split: SplitSpec, method: str, k: int, seed: int,
             out_dir=None, checkpoint=None, align: bool = True,
             max_examples: int | None = None, log=None) -> EvalReport:
    """Score one predictor over the split's test side."""
    log = log or (lambda *a, **k_: None)
    if method not in METHODS:
        raise ConfigurationError(f"method must be one of {METHODS}")
    examples = split.test_examples(dataset)
    if not examples:
        raise ConfigurationError("split has an empty test side")
    if max_examples is not None and len(examples) > max_examples:
        rng = np.random.default_rng([seed, 31337])
        idx = sorted(rng.choice(len(examples), size=max_examples, replace=False))
        examples = [examples[int(i)] for i in idx]

    model_predictor = None
    if method == "model":
        if checkpoint is None:
            raise ConfigurationError("method 'model' needs a checkpoint")
        model_predictor = ModelPredictor(checkpoint, dataset)
        if model_predictor.net.cfg.n_refs != k:
            raise ConfigurationError(
                f"checkpoint was trained with K={model_predictor.net.cfg.n_refs}")
    needs_records = method in ("random-across", "random-same")
    all_records = dataset.all_records() if needs_records else None

    rows = []
    fs = dataset.sim_config.sample_rate
    for i, (room_id, rcv, src) in enumerate(examples):
        rng = np.random.default_rng([seed, 1009, i])
        refs = _choose_refs(dataset.reference_candidates(room_id), src, k, rng)
        gt = dataset.rir(room_id, rcv, src).waveform.astype(np.float64)
        pred = _predict(method, dataset, all_records, room_id, rcv, src, refs,
                        rng, align, model_predictor)
        errs = metric_errors(pred, gt, fs)
        rows.append({
            "example_id": f"{room_id}/r{rcv}/s{src}",
            "room_id": room_id,
            "method": method,
            "K": k,
            **errs,
        })
        if log and i % 50 == 0:
            log("eval_progress", done=i, total=len(examples))

    report = EvalReport(
        method=method, k=k, split_mode=split.mode, seed=seed,
        config_hash=config_hash(dataset.manifest["gen_config"]),
        align=align, rows=rows, aggregates=_aggregate(rows))
    if out_dir is not None:
        write_report(report, out_dir)
    log("eval_done", method=method,
        edt=report.aggregates["mean_edt_err_s"],
        c50=report.aggregates["mean_c50_err_db"],
        t60=report.aggregates["mean_t60_err_pct"])
    return report


def _aggregate(rows) -> dict:
    per_room: dict[str, list] = {}
    for r in rows:
        per_room.setdefault(r["room_id"], []).append(r)
    t60_rows = [r["t60_err_pct"] for r in rows if r["t60_err_pct"] is not None]
    return {
        "n_examples": len(rows),
        "mean_edt_err_s": float(np.mean([r["edt_err_s"] for r in rows])),
        "mean_c50_err_db": float(np.mean([r["c50_err_db"] for r in rows])),
        "mean_t60_err_pct": float(np.mean(t60_rows)) if t60_rows else None,
        "t60_included": len(t60_rows),
        "t60_excluded": len(rows) - len(t60_rows),
        "per_room_mean_edt_err_s": {
            room: float(np.mean([r["edt_err_s"] for r in rs]))
            for room, rs in sorted(per_room.items())},
        "per_room_mean_c50_err_db": {
            room: float(np.mean([r["c50_err_db"] for r in rs]))
            for room, rs in sorted(per_room.items())},
    }


def write_report(report: EvalReport, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(
        json.dumps(report.to_dict(), indent=2) + "\n")
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for r in report.rows:
            writer.writerow([
                r["example_id"], r["room_id"], r["method"], r["K"],
                repr(float(r["edt_err_s"])), repr(float(r["c50_err_db"])),
                "" if r["t60_err_pct"] is None else repr(float(r["t60_err_pct"])),
                "true" if r["t60_valid"] else "false",
            ])
    figures_dir = out / "figures"
    figures_dir.mkdir(exist_ok=True)
    from .figures import save_eval_summary
    save_eval_summary(report.to_dict(), figures_dir / "metric_histograms.png")
    return out


# ---------------------------------------------------------------------------
# Acoustic maps
# ---------------------------------------------------------------------------

def acoustic_map(dataset: Dataset, room_id: str, method: str, k: int, seed: int,
                 resolution: float = 0.5, receiver_idx: int = 0,
                 out_dir=None, checkpoint=None, log=None) -> dict:
    """Dense C50 grid over the room floor plan at the receiver's height.

    Grid sources violating placement distance rules are flagged invalid and
    not computed. Returns {xs, ys, c50_pred, c50_gt, valid}.
    """
    log = log or (lambda *a, **k_: None)
    room = dataset.room(room_id)
    placement = dataset.placement(room_id)
    receiver = placement.receivers[receiver_idx]
    scfg = dataset.sim_config
    rng = np.random.default_rng([seed, 4242])
    refs = _choose_refs(dataset.reference_candidates(room_id), -1, k, rng)

    model_predictor = ModelPredictor(checkpoint, dataset) if method == "model" else None
    refs_set = bl.ReferenceSet.from_records(
        [dataset.rir(room_id, receiver_idx, r) for r in refs])

    xs = np.arange(room.bbox_min[0] + resolution / 2, room.bbox_max[0], resolution)
    ys = np.arange(room.bbox_min[1] + resolution / 2, room.bbox_max[1], resolution)
    z = float(receiver[2])
    shape = (len(xs), len(ys))
    c50_pred = np.full(shape, np.nan)
    c50_gt = np.full(shape, np.nan)
    valid = np.zeros(shape, dtype=bool)

    n_done = 0
    for ix, x in enumerate(xs):
        for iy, y in enumerate(ys):
            p = np.array([x, y, z])
            if not room.contains(p):
                continue
            if np.min(room.surface_distance(p)) < 0.5 - 1e-9:
                continue
            if np.linalg.norm(p - receiver) < 1.0 - 1e-9:
                continue
            valid[ix, iy] = True
            gt = sim.simulate_rir(room, p, receiver, scfg).waveform.astype(np.float64)
            c50_gt[ix, iy] = dsp.metric_c50(gt, scfg.sample_rate)[0]
            if method == "oracle":
                pred = gt
            elif method == "nearest":
                pred = bl.predict_nearest(refs_set, p, sample_rate=scfg.sample_rate,
                                          speed_of_sound=scfg.speed_of_sound)
            elif method == "linear":
                pred = bl.predict_linear_interp(refs_set, p,
                                                sample_rate=scfg.sample_rate,
                                                speed_of_sound=scfg.speed_of_sound)
            elif method == "model":
                pred = _model_predict_position(model_predictor, dataset, room_id,
                                               receiver_idx, p, refs)
            else:
                raise ConfigurationError(f"unsupported map method {method!r}")
            c50_pred[ix, iy] = dsp.metric_c50(pred, scfg.sample_rate)[0]
            n_done += 1
    if n_done == 0:
        raise ConfigurationError(f"room {room_id}: no valid grid cells at "
                                 f"resolution {resolution}")
    result = {"xs": xs, "ys": ys, "c50_pred": c50_pred, "c50_gt": c50_gt,
              "valid": valid}
    if out_dir is not None:
        _write_map(result, room_id, method, out_dir)
    log("acoustic_map_done", room_id=room_id, cells=n_done)
    return result


def _model_predict_position(predictor: ModelPredictor, dataset: Dataset,
                            room_id: str, rcv: int, position, refs) -> np.ndarray:
    data = dataset
    cfg = predictor.net.cfg
    placement = data.placement(room_id)
    scfg = data.sim_config
    coord = data.coord_map_pooled(room_id, rcv, cfg.map_h, cfg.map_w)
    ref_waves = [data.rir(room_id, rcv, r).waveform for r in refs]
    example = mdl.build_example(
        coord, placement.receivers[rcv], position,
        [placement.sources[r] for r in refs], ref_waves,
        bbox_diag=data.bbox_diag(room_id), cfg=cfg,
        sample_rate=scfg.sample_rate, speed_of_sound=scfg.speed_of_sound)
    with torch.no_grad():
        s_pred = predictor.net(mdl.collate([example]))[0].numpy().astype(np.float64)
    return dsp.griffin_lim(np.exp(s_pred), iterations=GRIFFIN_LIM_ITERS,
                           seed=GRIFFIN_LIM_SEED)


def _write_map(result: dict, room_id: str, method: str, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "acoustic_map.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "c50_pred", "c50_gt", "valid"])
        for ix, x in enumerate(result["xs"]):
            for iy, y in enumerate(result["ys"]):
                ok = bool(result["valid"][ix, iy])
                writer.writerow([
                    repr(float(x)), repr(float(y)),
                    repr(float(result["c50_pred"][ix, iy])) if ok else "",
                    repr(float(result["c50_gt"][ix, iy])) if ok else "",
                    "true" if ok else "false",
                ])
    from .figures import save_acoustic_map
    save_acoustic_map(result["xs"], result["ys"], result["c50_pred"],
                      result["c50_gt"], result["valid"],
                      out / f"acoustic_map_{room_id}_{method}.png")
