"""Training loop: sampling, optimization, checkpointing, and loss logging.

Per-step example sampling uses a stateless generator keyed by
(seed, step), so resuming from a checkpoint replays the exact same stream.
"""

import json
import os
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from . import model as mdl
from .dataset import Dataset, SplitSpec, thread_count
from .errors import ConfigurationError


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 600
    batch_size: int = 16
    lr: float = 1e-4
    grad_clip: float = 1.0
    seed: int = 0
    k_refs: int = 4
    log_every: int = 10
    width: str = "desk"   # "tiny" | "desk" | "default"


_PRESETS = {
    "tiny": mdl.tiny_config,
    "desk": mdl.desk_config,
    "default": mdl.default_config,
}


def model_config_for(train_cfg: TrainConfig, **overrides) -> mdl.ModelConfig:
    if train_cfg.width not in _PRESETS:
        raise ConfigurationError(f"unknown width preset {train_cfg.width!r}")
    return _PRESETS[train_cfg.width](n_refs=train_cfg.k_refs, **overrides)


def sample_example(dataset: Dataset, split: SplitSpec, k: int, rng):
    """One (room, receiver, target source, reference sources) draw."""
    room_id = split.train_rooms[int(rng.integers(len(split.train_rooms)))]
    meta = dataset.room_meta(room_id)
    if split.mode == "seen":
        pool = split.train_receivers[room_id]
        rcv = int(pool[int(rng.integers(len(pool)))])
    else:
        rcv = int(rng.integers(meta["n_receivers"]))
    src = int(rng.integers(meta["n_sources"]))
    candidates = [c for c in dataset.reference_candidates(room_id) if c != src]
    if len(candidates) < k:
        raise ConfigurationError(
            f"room {room_id}: {len(candidates)} reference candidates for K={k}")
    picked = rng.choice(len(candidates), size=k, replace=False)
    refs = [candidates[int(i)] for i in picked]
    return room_id, rcv, src, refs


def build_training_example(dataset: Dataset, cfg: mdl.ModelConfig,
                           room_id: str, rcv: int, src: int, refs):
    placement = dataset.placement(room_id)
    scfg = dataset.sim_config
    coord = dataset.coord_map_pooled(room_id, rcv, cfg.map_h, cfg.map_w)
    ref_waves = [dataset.rir(room_id, rcv, r).waveform for r in refs]
    example = mdl.build_example(
        coord, placement.receivers[rcv], placement.sources[src],
        [placement.sources[r] for r in refs], ref_waves,
        bbox_diag=dataset.bbox_diag(room_id), cfg=cfg,
        sample_rate=scfg.sample_rate, speed_of_sound=scfg.speed_of_sound)
    s_gt = torch.as_tensor(dataset.spectrogram(room_id, rcv, src),
                           dtype=torch.float32)
    return example, s_gt


def train(dataset: Dataset, split: SplitSpec, model_cfg: mdl.ModelConfig,
          train_cfg: TrainConfig, out_dir, resume_from=None,
          threads: int | None = None, log=None) -> Path:
    """Run the loop and write checkpoint + loss log under out_dir.

    Returns the checkpoint path (without extension).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    log = log or (lambda *a, **k: None)
    if threads is not None or "ROOMECHO_THREADS" in os.environ:
        torch.set_num_threads(thread_count(threads))  # explicit caps only
    if model_cfg.n_refs != train_cfg.k_refs:
        raise ConfigurationError("model n_refs must match train k_refs")

    start_step = 0
    if resume_from is not None:
        model, extras = mdl.load_checkpoint(resume_from)
        if model.cfg != model_cfg:
            raise ConfigurationError("checkpoint config does not match")
        state = json.loads(Path(resume_from).with_suffix(".train.json").read_text())
        start_step = state["next_step"]
    else:
        torch.manual_seed(train_cfg.seed)
        model = mdl.RIRNet(model_cfg)
        extras = {}
    log("model_built", parameters=model.parameter_count)

    optim = torch.optim.Adam(model.parameters(), lr=train_cfg.lr)
    if extras:
        _load_optimizer_state(optim, model, extras, start_step)

    losses = []
    for step in range(start_step, start_step + train_cfg.steps):
        rng = np.random.default_rng([train_cfg.seed, 7919, step])
        examples, targets = [], []
        for _ in range(train_cfg.batch_size):
            room_id, rcv, src, refs = sample_example(
                dataset, split, train_cfg.k_refs, rng)
            ex, s_gt = build_training_example(
                dataset, model_cfg, room_id, rcv, src, refs)
            examples.append(ex)
            targets.append(s_gt)
        batch = mdl.collate(examples)
        s_gt = torch.stack(targets)
        optim.zero_grad(set_to_none=True)
        loss = mdl.loss_total(model(batch), s_gt, model_cfg.lambda_ed)
        if not torch.isfinite(loss):
            raise FloatingPointError(
                f"non-finite loss at step {step}; param norm "
                f"{sum(p.norm() for p in model.parameters()):.3e}")
        loss.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), train_cfg.grad_clip)
        optim.step()
        losses.append({"step": step, "loss": float(loss.item())})
        if train_cfg.log_every and (step % train_cfg.log_every == 0):
            log("train_step", step=step, loss=round(float(loss.item()), 6))

    ckpt = out / "checkpoint"
    extras_out = _dump_optimizer_state(optim, model)
    mdl.save_checkpoint(ckpt, model, extras=extras_out)
    ckpt.with_suffix(".train.json").write_text(json.dumps({
        "next_step": start_step + train_cfg.steps,
        "train_config": asdict(train_cfg),
    }, indent=2) + "\n")
    _write_loss_log(out, losses)
    log("train_done", steps=train_cfg.steps, final_loss=losses[-1]["loss"] if losses else None)
    return ckpt


def _dump_optimizer_state(optim, model) -> dict:
    names = [n for n, _ in model.named_parameters()]
    out = {}
    for name, p in zip(names, model.parameters()):
        state = optim.state.get(p, {})
        if "exp_avg" in state:
            out[f"optim.m.{name}"] = state["exp_avg"]
            out[f"optim.v.{name}"] = state["exp_avg_sq"]
            out[f"optim.t.{name}"] = torch.tensor([float(state["step"])])
    return out


def _load_optimizer_state(optim, model, extras: dict, step: int) -> None:
    for name, p in model.named_parameters():
        key = f"optim.m.{name}"
        if key in extras:
            optim.state[p] = {
                "step": torch.tensor(float(extras[f"optim.t.{name}"][0])),
                "exp_avg": extras[key].reshape(p.shape).clone(),
                "exp_avg_sq": extras[f"optim.v.{name}"].reshape(p.shape).clone(),
            }


def _write_loss_log(out: Path, losses) -> None:
    (out / "loss_log.json").write_text(json.dumps(losses, indent=2) + "\n")
    lines = ["step,loss"] + [f"{r['step']},{r['loss']!r}" for r in losses]
    (out / "loss_log.csv").write_text("\n".join(lines) + "\n")
    from .figures import save_loss_curve
    save_loss_curve(losses, out / "loss_curve.png")
