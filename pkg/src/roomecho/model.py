"""Cross-room RIR predictor: geometric features, reference encoding, and
attention-weighted composition of reference spectrograms.

The network consumes, per example, the target/reference source positions,
reflection-offset maps derived from the receiver's panorama, and the
time-aligned reference spectrograms; it emits a 63 x 310 log-magnitude
prediction as a per-reference, per-frame weighted sum.
"""

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from . import dsp
from .errors import ShapeError


@dataclass(frozen=True)
class ModelConfig:
    n_refs: int = 4
    pe_freqs_coord: int = 20
    pe_freqs_time: int = 10
    direct_dim: int = 256
    patch_dim: int = 512
    n_layers: int = 6
    n_heads: int = 8
    ref_feature_dim: int = 512
    map_h: int = 256
    map_w: int = 512
    patch_h: int = 16
    patch_w: int = 32
    n_freq: int = 63
    n_frames: int = 310
    ff_mult: int = 4
    lambda_ed: float = 0.01
    no_reference_rirs: bool = False
    no_direct_path: bool = False
    no_reflection_module: bool = False

    @property
    def n_patches(self) -> int:
        return (self.map_h // self.patch_h) * (self.map_w // self.patch_w)

    @property
    def fused_dim(self) -> int:
        return self.direct_dim + 2 * self.patch_dim + self.ref_feature_dim

    @property
    def target_concat_dim(self) -> int:
        return self.direct_dim + 2 * self.patch_dim

    def __post_init__(self):
        if self.map_h % self.patch_h or self.map_w % self.patch_w:
            raise ValueError("patch size must tile the map")
        if self.patch_dim % self.n_heads:
            raise ValueError("patch_dim must divide into heads")
        if self.ref_feature_dim % 8:
            raise ValueError("ref_feature_dim must be a multiple of 8")


def default_config(**overrides) -> ModelConfig:
    return ModelConfig(**overrides)


def tiny_config(**overrides) -> ModelConfig:
    """Small widths and 8x16 maps for finite-difference gradient checks."""
    base = dict(n_refs=2, direct_dim=16, patch_dim=16, n_layers=1, n_heads=2,
                ref_feature_dim=16, map_h=8, map_w=16, patch_h=4, patch_w=4)
    base.update(overrides)
    return ModelConfig(**base)


def desk_config(**overrides) -> ModelConfig:
    """Reduced-width preset for CPU training; maps pooled 4x, 64 patches."""
    base = dict(direct_dim=64, patch_dim=128, n_layers=2, n_heads=4,
                ref_feature_dim=128, map_h=64, map_w=128, patch_h=8, patch_w=16)
    base.update(overrides)
    return ModelConfig(**base)


def posenc(x: torch.Tensor, n_freqs: int) -> torch.Tensor:
    """Sinusoidal encoding: per component, (sin, cos) at frequencies 2^m pi."""
    freqs = (2.0 ** torch.arange(n_freqs, dtype=x.dtype, device=x.device)) * torch.pi
    scaled = x.unsqueeze(-1) * freqs            # (..., D, M)
    enc = torch.stack([torch.sin(scaled), torch.cos(scaled)], dim=-1)
    return enc.flatten(start_dim=-3)            # (..., D * M * 2)


class CoordEncoder(nn.Module):
    """Positional encoding of a source/receiver pair, projected by an MLP."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.n_freqs = cfg.pe_freqs_coord
        in_dim = 6 * 2 * cfg.pe_freqs_coord
        self.mlp = nn.Sequential(
            nn.Linear(in_dim, cfg.direct_dim),
            nn.GELU(),
            nn.Linear(cfg.direct_dim, cfg.direct_dim),
        )

    def forward(self, pairs: torch.Tensor) -> torch.Tensor:
        return self.mlp(posenc(pairs, self.n_freqs))


class SelfAttention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.scale = (dim // heads) ** -0.5
        self.qkv = nn.Linear(dim, dim * 3)
        self.proj = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        qkv = self.qkv(x).reshape(b, n, 3, self.heads, d // self.heads)
        q, k, v = qkv.permute(2, 0, 3, 1, 4)
        attn = torch.softmax(q @ k.transpose(-1, -2) * self.scale, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, n, d)
        return self.proj(out)


class TransformerBlock(nn.Module):
    def __init__(self, dim: int, heads: int, ff_mult: int):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(
            nn.Linear(dim, dim * ff_mult),
            nn.GELU(),
            nn.Linear(dim * ff_mult, dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        x = x + self.ff(self.norm2(x))
        return x


class PatchTransformer(nn.Module):
    """Patchify an offset map, attend over patches, project patches to one."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        patch_in = cfg.patch_h * cfg.patch_w * 3
        self.embed = nn.Linear(patch_in, cfg.patch_dim)
        self.pos = nn.Parameter(torch.randn(1, cfg.n_patches, cfg.patch_dim) * 0.02)
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.patch_dim, cfg.n_heads, cfg.ff_mult)
            for _ in range(cfg.n_layers))
        self.norm = nn.LayerNorm(cfg.patch_dim)
        self.patch_proj = nn.Linear(cfg.n_patches, 1)

    def patchify(self, maps: torch.Tensor) -> torch.Tensor:
        b, h, w, c = maps.shape
        cfg = self.cfg
        if (h, w, c) != (cfg.map_h, cfg.map_w, 3):
            raise ShapeError(f"map must be {cfg.map_h}x{cfg.map_w}x3, got {(h, w, c)}")
        gh, gw = h // cfg.patch_h, w // cfg.patch_w
        x = maps.reshape(b, gh, cfg.patch_h, gw, cfg.patch_w, c)
        return x.permute(0, 1, 3, 2, 4, 5).reshape(b, gh * gw, -1)

    def tokens(self, maps: torch.Tensor) -> torch.Tensor:
        """Per-patch features, shape (B, n_patches, patch_dim)."""
        x = self.embed(self.patchify(maps)) + self.pos
        for blk in self.blocks:
            x = blk(x)
        return self.norm(x)

    def forward(self, maps: torch.Tensor) -> torch.Tensor:
        g = self.tokens(maps)                    # (B, Np, Cp)
        return self.patch_proj(g.transpose(1, 2)).squeeze(-1)  # (B, Cp)


class ResidualBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1, bias=False)
        self.n1 = nn.GroupNorm(1, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1, bias=False)
        self.n2 = nn.GroupNorm(1, c_out)
        self.act = nn.GELU()
        if stride != 1 or c_in != c_out:
            self.skip = nn.Sequential(
                nn.Conv2d(c_in, c_out, 1, stride=stride, bias=False),
                nn.GroupNorm(1, c_out))
        else:
            self.skip = nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = self.act(self.n1(self.conv1(x)))
        y = self.n2(self.conv2(y))
        return self.act(y + self.skip(x))


class SpectroEncoder(nn.Module):
    """Four-stage residual conv encoder over one-channel spectrograms.

    GroupNorm in place of batch statistics keeps items independent.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        base = cfg.ref_feature_dim // 8
        widths = [base, base * 2, base * 4, base * 8]
        # norm-free stem: bias + GELU must see the raw input scale before any
        # normalization, or constant spectrograms of different levels collapse.
        # Stride-2 conv + pool downsample 4x before the stages, as in the
        # standard residual-encoder stem.
        self.stem = nn.Sequential(
            nn.Conv2d(1, base, 3, stride=2, padding=1, bias=True),
            nn.GELU(),
            nn.MaxPool2d(2, ceil_mode=True),
        )
        stages = []
        c_prev = base
        for i, c in enumerate(widths):
            stride = 1 if i == 0 else 2
            stages.append(ResidualBlock(c_prev, c, stride))
            stages.append(ResidualBlock(c, c, 1))
            c_prev = c
        self.stages = nn.Sequential(*stages)

    def forward(self, specs: torch.Tensor) -> torch.Tensor:
        if specs.dim() == 3:
            specs = specs.unsqueeze(1)
        x = self.stages(self.stem(specs))
        return x.mean(dim=(2, 3))                # global mean pool


class TimeBasis(nn.Module):
    """Per-frame basis vectors from encoded, [0,1]-normalized frame indices.

    The output layer starts near zero so the weighting matrix W = Z @ T_b^T
    begins at ~0 (silence in the log domain); unscaled init makes W large
    enough to overflow exp() in the losses.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        in_dim = 2 * cfg.pe_freqs_time
        self.mlp = nn.Sequential(
            nn.Linear(in_dim, cfg.fused_dim),
            nn.GELU(),
            nn.Linear(cfg.fused_dim, cfg.fused_dim),
        )
        nn.init.normal_(self.mlp[-1].weight, std=1e-3)
        nn.init.zeros_(self.mlp[-1].bias)

    def forward(self) -> torch.Tensor:
        p = next(self.parameters())
        t = torch.arange(self.cfg.n_frames, dtype=p.dtype, device=p.device)
        t = (t / (self.cfg.n_frames - 1)).unsqueeze(-1)   # (T, 1)
        return self.mlp(posenc(t, self.cfg.pe_freqs_time))  # (T, C)


class RIRNet(nn.Module):
    """Full predictor; see module docstring for the dataflow."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.coord_encoder = CoordEncoder(cfg)
        self.reflection = PatchTransformer(cfg)
        self.ref_encoder = SpectroEncoder(cfg)
        self.target_fusion = nn.Sequential(
            nn.Linear(cfg.target_concat_dim, cfg.fused_dim),
            nn.GELU(),
            nn.Linear(cfg.fused_dim, cfg.fused_dim),
        )
        self.time_basis_net = TimeBasis(cfg)
        self.parameter_count = sum(p.numel() for p in self.parameters())

    # --- individual operations -------------------------------------------

    def direct_path_feature(self, pairs: torch.Tensor) -> torch.Tensor:
        return self.coord_encoder(pairs)

    def reflection_feature(self, maps: torch.Tensor) -> torch.Tensor:
        return self.reflection(maps)

    def encode_reference_rir(self, specs: torch.Tensor) -> torch.Tensor:
        return self.ref_encoder(specs)

    def fuse(self, g_dir, g_ref_dir, g_s_rf, g_r_rf, g_ref_rf, f_a):
        """Concatenate per-reference and target features; project the target.

        Shapes: g_dir (B, Cd); g_ref_dir (B, K, Cd); g_s_rf, g_r_rf (B, Cp);
        g_ref_rf (B, K, Cp); f_a (B, K, Cr). Ablation flags zero their slot
        (fixed dims, so one parameter shape serves every variant).
        """
        cfg = self.cfg
        if cfg.no_direct_path:
            g_dir = torch.zeros_like(g_dir)
            g_ref_dir = torch.zeros_like(g_ref_dir)
        if cfg.no_reflection_module:
            g_s_rf = torch.zeros_like(g_s_rf)
            g_r_rf = torch.zeros_like(g_r_rf)
            g_ref_rf = torch.zeros_like(g_ref_rf)
        if cfg.no_reference_rirs:
            f_a = torch.zeros_like(f_a)
        k = g_ref_dir.shape[1]
        g_r_exp = g_r_rf.unsqueeze(1).expand(-1, k, -1)
        h_ref = torch.cat([g_ref_dir, g_ref_rf, g_r_exp, f_a], dim=-1)
        h_t = self.target_fusion(torch.cat([g_dir, g_s_rf, g_r_rf], dim=-1))
        return h_t, h_ref

    def attend(self, h_t: torch.Tensor, h_ref: torch.Tensor):
        """Scaled dot-product attention of references against the target."""
        scores = (h_ref @ h_t.unsqueeze(-1)).squeeze(-1) / np.sqrt(self.cfg.fused_dim)
        weights = torch.softmax(scores, dim=-1)          # (B, K)
        return weights.unsqueeze(-1) * h_ref, weights    # Z, a

    def time_basis(self) -> torch.Tensor:
        return self.time_basis_net()

    def predict_weights(self, z: torch.Tensor, t_b: torch.Tensor) -> torch.Tensor:
        return z @ t_b.T                                 # (B, K, T)

    @staticmethod
    def compose_prediction(w: torch.Tensor, spec_refs: torch.Tensor) -> torch.Tensor:
        """S_pred[f, t] = sum_k W[k, t] * S_ref_k[f, t]."""
        return (w.unsqueeze(2) * spec_refs).sum(dim=1)

    # --- full pass ---------------------------------------------------------

    def forward(self, batch: dict) -> torch.Tensor:
        cfg = self.cfg
        pair_t = batch["pair_target"]            # (B, 6)
        pair_r = batch["pair_refs"]              # (B, K, 6)
        spec_refs = batch["spec_refs"]           # (B, K, F, T)
        b, k = pair_r.shape[:2]

        g_dir = self.direct_path_feature(pair_t)
        g_ref_dir = self.direct_path_feature(pair_r.reshape(b * k, 6)).reshape(b, k, -1)

        if cfg.no_reflection_module:
            g_s_rf = g_dir.new_zeros(b, cfg.patch_dim)
            g_r_rf = g_dir.new_zeros(b, cfg.patch_dim)
            g_ref_rf = g_dir.new_zeros(b, k, cfg.patch_dim)
        else:
            stacked = torch.cat([
                batch["map_source"].unsqueeze(1),
                batch["map_receiver"].unsqueeze(1),
                batch["map_refs"],
            ], dim=1)                             # (B, K+2, H, W, 3)
            feats = self.reflection_feature(stacked.flatten(0, 1))
            feats = feats.reshape(b, k + 2, -1)
            g_s_rf, g_r_rf, g_ref_rf = feats[:, 0], feats[:, 1], feats[:, 2:]

        if cfg.no_reference_rirs:
            f_a = g_dir.new_zeros(b, k, cfg.ref_feature_dim)
        else:
            f_a = self.encode_reference_rir(
                spec_refs.reshape(b * k, *spec_refs.shape[2:])).reshape(b, k, -1)

        h_t, h_ref = self.fuse(g_dir, g_ref_dir, g_s_rf, g_r_rf, g_ref_rf, f_a)
        z, _ = self.attend(h_t, h_ref)
        w = self.predict_weights(z, self.time_basis())
        return self.compose_prediction(w, spec_refs)


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def edc_freq_torch(log_spec: torch.Tensor) -> torch.Tensor:
    """Differentiable twin of dsp.edc_freq over the trailing (F, T) dims."""
    energy = torch.exp(2.0 * log_spec)
    tail = torch.flip(torch.cumsum(torch.flip(energy, [-1]), dim=-1), [-1])
    return 10.0 * torch.log10(tail / tail[..., :1])


def loss_stft(s_pred: torch.Tensor, s_gt: torch.Tensor) -> torch.Tensor:
    return (torch.exp(s_pred) - torch.exp(s_gt)).abs().mean()


def loss_energy_decay(s_pred: torch.Tensor, s_gt: torch.Tensor) -> torch.Tensor:
    return (edc_freq_torch(s_pred) - edc_freq_torch(s_gt)).abs().mean()


def loss_total(s_pred: torch.Tensor, s_gt: torch.Tensor,
               lambda_ed: float = 0.01) -> torch.Tensor:
    if s_pred.shape != s_gt.shape:
        raise ShapeError(f"prediction {tuple(s_pred.shape)} vs target {tuple(s_gt.shape)}")
    if not (torch.isfinite(s_pred).all() and torch.isfinite(s_gt).all()):
        raise FloatingPointError("non-finite spectrogram entering the loss")
    return loss_stft(s_pred, s_gt) + lambda_ed * loss_energy_decay(s_pred, s_gt)


def gradients(model: RIRNet, batch: dict, s_gt: torch.Tensor) -> dict:
    """Reverse-mode gradients of loss_total for every named parameter."""
    model.zero_grad(set_to_none=True)
    loss = loss_total(model(batch), s_gt, model.cfg.lambda_ed)
    if not torch.isfinite(loss):
        raise FloatingPointError("non-finite loss")
    loss.backward()
    return {name: (torch.zeros_like(p) if p.grad is None else p.grad.detach().clone())
            for name, p in model.named_parameters()}


# ---------------------------------------------------------------------------
# Input preparation
# ---------------------------------------------------------------------------

def pool_map(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Average-pool an (H, W, 3) map down to (out_h, out_w, 3)."""
    h, w, c = values.shape
    if (h, w) == (out_h, out_w):
        return values
    if h % out_h or w % out_w:
        raise ShapeError(f"cannot pool {(h, w)} to {(out_h, out_w)}")
    fh, fw = h // out_h, w // out_w
    return values.reshape(out_h, fh, out_w, fw, c).mean(axis=(1, 3))


def build_example(coord_map_values: np.ndarray, receiver, target_src, ref_srcs,
                  ref_waveforms, bbox_diag: float, cfg: ModelConfig,
                  sample_rate: int = dsp.SAMPLE_RATE,
                  speed_of_sound: float = 343.0) -> dict:
    """Numpy-side preprocessing for one example (unbatched tensors).

    References are time-shift aligned to the target's source-receiver
    distance before their spectrograms are taken. Coordinates and maps are
    receiver-centered and scaled by the room bounding-box diagonal.
    ``coord_map_values`` may be pre-pooled to (cfg.map_h, cfg.map_w, 3);
    pooling commutes with the constant-offset subtractions.
    """
    rcv = np.asarray(receiver, dtype=float)
    tgt = np.asarray(target_src, dtype=float)
    d_t = float(np.linalg.norm(tgt - rcv))
    coord_n = pool_map(coord_map_values, cfg.map_h, cfg.map_w) / bbox_diag
    pair_target = np.concatenate([(tgt - rcv), np.zeros(3)]) / bbox_diag
    pair_refs, specs, ref_maps = [], [], []
    for pos, wave in zip(ref_srcs, ref_waveforms):
        pos = np.asarray(pos, dtype=float)
        d_k = float(np.linalg.norm(pos - rcv))
        aligned = dsp.time_shift_align(np.asarray(wave, dtype=np.float64), d_t, d_k,
                                       sample_rate, speed_of_sound)
        specs.append(dsp.stft_logmag(aligned).values)
        pair_refs.append(np.concatenate([(pos - rcv), np.zeros(3)]) / bbox_diag)
        ref_maps.append((pos - rcv)[None, None, :] / bbox_diag - coord_n)
    src_map = (tgt - rcv)[None, None, :] / bbox_diag - coord_n
    rcv_map = coord_n
    f32 = lambda a: torch.as_tensor(np.asarray(a), dtype=torch.float32)
    return {
        "pair_target": f32(pair_target),
        "pair_refs": f32(np.stack(pair_refs)),
        "map_source": f32(src_map),
        "map_receiver": f32(rcv_map),
        "map_refs": f32(np.stack(ref_maps)),
        "spec_refs": f32(np.stack(specs)),
    }


def collate(examples: list[dict]) -> dict:
    return {k: torch.stack([e[k] for e in examples]) for k in examples[0]}


# ---------------------------------------------------------------------------
# Checkpoints: JSON manifest + raw little-endian float32 blob
# ---------------------------------------------------------------------------

def save_checkpoint(path, model: RIRNet, extras: dict | None = None) -> None:
    """Write <path>.json (config, names, shapes, offsets) and <path>.f32."""
    path = Path(path)
    entries = []
    offset = 0
    blobs = []
    tensors = dict(model.named_parameters())
    if extras:
        tensors.update({f"extra.{k}": v for k, v in extras.items()})
    for name, tensor in tensors.items():
        arr = tensor.detach().cpu().numpy().astype("<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    manifest = {
        "format_version": 1,
        "config": asdict(model.cfg),
        "params": entries,
        "total_bytes": offset,
    }
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2) + "\n")
    path.with_suffix(".f32").write_bytes(b"".join(blobs))


def load_checkpoint(path) -> tuple[RIRNet, dict]:
    """Rebuild the model bit-exactly; returns (model, extras)."""
    path = Path(path)
    manifest = json.loads(path.with_suffix(".json").read_text())
    blob = path.with_suffix(".f32").read_bytes()
    cfg = ModelConfig(**manifest["config"])
    model = RIRNet(cfg)
    state = {}
    extras = {}
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(blob, dtype="<f4", count=count,
                            offset=entry["offset"]).reshape(shape)
        tensor = torch.from_numpy(arr.copy())
        if entry["name"].startswith("extra."):
            extras[entry["name"][6:]] = tensor
        else:
            state[entry["name"]] = tensor
    model.load_state_dict(state)
    return model, extras
