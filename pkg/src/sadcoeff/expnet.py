"""Audio-to-expression network and its training loop.

Architecture: a 4-stage strided convolutional residual encoder turns each
16x80 mel window into an embedding (global average pool over the last
stage), and a single affine head maps [embedding | reference expression
(64) | blink scalar] to the 64 expression coefficients of that frame.
Every frame is processed independently: frame t depends only on window t,
the reference expression, and blink value t.

Training distills a frozen lip oracle, adds a soft-label character-reading
cross entropy through a frozen reading map, and a landmark term that pins
non-eye landmarks to the teacher while steering the eye ratio toward the
blink signal.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import synthdata
from .core3dmm import (
    EXP_DIM,
    LIP_COEFF_INDICES,
    NON_EYE_LANDMARKS,
    eye_ratio_points,
    landmarks_from_beta,
)
from .errors import TrainingDivergedError
from .seeding import rng_for
from .synthdata import MEL_CENTER
from .training import history_path, load_checkpoint, restore_adam, save_checkpoint, write_history

MEL_SCALE = 3.0  # fixed input scaling applied inside the encoder
# Embeddings are scaled up after pooling so that the affine head reads
# them through small weights; with an adaptive per-weight optimizer at a
# tiny learning rate, weights can only travel a short distance over a
# training run, and this keeps the useful head configurations inside that
# reachable ball.
EMB_GAIN = 128.0

# The blink input is wired at init onto the two per-eye opening
# coefficients with the gain that makes d(eye_ratio)/d(blink) = 1, so
# z in [0, 1] spans the closed..open eye-ratio range; training only
# fine-tunes this mapping.
BLINK_GAIN = 1.0 / (2.0 * synthdata.EYE_RATIO_SLOPE)
BLINK_ROWS = (16, 17)

# The down-sampling convs start as smoothing kernels: a positive mean
# component on top of the usual fan-in-scaled noise, plus positive biases,
# so the stack begins in its (near-)linear regime over smooth inputs and
# its pooled features span the low-frequency content of the window that
# the targets live in.  Training reshapes them freely from there.
DOWN_CONV_DC = 9.0
DOWN_CONV_BIAS = 2.0


class ResBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, 1, 1)
        self.conv2 = nn.Conv2d(channels, channels, 3, 1, 1)

    def forward(self, x):
        h = self.conv2(torch.relu(self.conv1(x)))
        return torch.relu(x + h)


class AudioEncoder(nn.Module):
    """(B, 16, 80) mel windows -> (B, channels[-1]) embeddings.

    Pooled features are standardized by per-channel constants frozen at
    init (see init_expnet), then scaled by EMB_GAIN.
    """

    def __init__(self, channels=(32, 64, 128, 256), emb_gain: float = EMB_GAIN):
        super().__init__()
        stages = []
        cin = 1
        for c in channels:
            stages.append(nn.Conv2d(cin, c, 3, 2, 1))
            stages.append(ResBlock(c))
            cin = c
        self.stages = nn.Sequential(*stages)
        self.embed_dim = channels[-1]
        self.emb_gain = emb_gain
        self.register_buffer("emb_center", torch.zeros(self.embed_dim))
        self.register_buffer("emb_whiten", torch.eye(self.embed_dim))

    def forward(self, x):
        if x.ndim == 3:
            x = x[:, None]
        x = (x - MEL_CENTER) / MEL_SCALE
        pooled = self.stages(x).mean(dim=(2, 3))
        return (pooled - self.emb_center) @ self.emb_whiten.T * self.emb_gain


class ExpNet(nn.Module):
    def __init__(self, channels=(32, 64, 128, 256)):
        super().__init__()
        self.encoder = AudioEncoder(channels)
        self.head = nn.Linear(self.encoder.embed_dim + EXP_DIM + 1, EXP_DIM)

    def forward(self, windows, beta0, blink):
        """windows (B, T, 16, 80), beta0 (B, 64), blink (B, T) -> (B, T, 64)."""
        b, t = windows.shape[0], windows.shape[1]
        emb = self.encoder(windows.reshape(b * t, *windows.shape[2:])).reshape(b, t, -1)
        feats = torch.cat([emb, beta0[:, None, :].expand(b, t, EXP_DIM), blink[..., None]], dim=-1)
        return self.head(feats)


def init_audio_encoder(enc: AudioEncoder, rng) -> None:
    """Smoothing-kernel conv init, shared by every audio-conditioned model.

    Downsampling convs get a positive mean component (a blur) on top of
    scaled noise, plus a positive bias, which keeps the stack in its
    near-linear regime over log-mel input; residual-branch output convs
    start near zero.
    """
    with torch.no_grad():
        for name, p in enc.named_parameters():
            if name.endswith("bias"):
                if "conv2" in name:
                    p.zero_()
                else:
                    p.fill_(DOWN_CONV_BIAS)
            elif "conv2" in name:
                p.copy_(torch.as_tensor(rng.normal(scale=0.01, size=tuple(p.shape)), dtype=p.dtype))
            else:
                fan_in = int(np.prod(p.shape[1:]))
                w = rng.normal(scale=np.sqrt(2.0 / fan_in), size=tuple(p.shape))
                if "conv1" not in name:
                    w = w + DOWN_CONV_DC / fan_in
                p.copy_(torch.as_tensor(w, dtype=p.dtype))


def calibrate_audio_encoder(enc: AudioEncoder, seed: int) -> None:
    """Freeze embedding standardization against seeded probe audio.

    Centers and symmetrically whitens the pooled features so downstream
    layers train on decorrelated unit-scale inputs (before the encoder's
    own output gain).
    """
    with torch.no_grad():
        dtype = enc.emb_center.dtype
        probe = torch.as_tensor(synthdata._probe_windows(seed), dtype=dtype)
        pooled = enc.stages((probe[:, None] - MEL_CENTER) / MEL_SCALE).mean(dim=(2, 3))
        mu = pooled.mean(dim=0)
        centered = (pooled - mu).double().numpy()
        cov = centered.T @ centered / len(centered)
        cov += np.eye(cov.shape[0]) * (1e-4 * np.trace(cov) / cov.shape[0] + 1e-12)
        evals, evecs = np.linalg.eigh(cov)
        zca = evecs @ np.diag(1.0 / np.sqrt(evals)) @ evecs.T
        enc.emb_center.copy_(mu)
        enc.emb_whiten.copy_(torch.as_tensor(zca, dtype=dtype))


def init_expnet(model: ExpNet, seed: int) -> ExpNet:
    """Seeded deterministic init; independent of torch's global RNG."""
    rng = rng_for(seed, "expnet-init")
    init_audio_encoder(model.encoder, rng)
    with torch.no_grad():
        w = torch.zeros(tuple(model.head.weight.shape), dtype=model.head.weight.dtype)
        enc_dim = model.encoder.embed_dim
        # Non-lip coefficients start as a pass-through of the reference
        # expression (identity preservation); lip rows start free of it,
        # since their content is audio-driven.
        eye_w = torch.eye(EXP_DIM, dtype=w.dtype)
        eye_w[list(LIP_COEFF_INDICES)] = 0.0
        w[:, enc_dim:enc_dim + EXP_DIM] = eye_w
        bias = torch.zeros(EXP_DIM, dtype=w.dtype)
        for row in BLINK_ROWS:
            w[row, -1] = BLINK_GAIN
            bias[row] = -BLINK_GAIN / 2.0
        model.head.weight.copy_(w)
        model.head.bias.copy_(bias)
    calibrate_audio_encoder(model.encoder, seed)
    return model


# ---------------------------------------------------------------------------
# losses


def loss_distill(pred: torch.Tensor, teacher: torch.Tensor) -> torch.Tensor:
    """Mean squared coefficient error over frames and dimensions."""
    return ((pred - teacher) ** 2).mean()


def loss_read(pred_logits: torch.Tensor, target_logits: torch.Tensor) -> torch.Tensor:
    """Soft-label cross entropy between softmaxed logits, averaged over frames."""
    p = torch.softmax(target_logits, dim=-1)
    return -(p * torch.log_softmax(pred_logits, dim=-1)).sum(dim=-1).mean()


def loss_lks(pred_points: torch.Tensor, teacher_points: torch.Tensor,
             blink: torch.Tensor, lambda_eye: float) -> torch.Tensor:
    """lambda_eye * sum_t |ratio_t - blink_t|  +  mean_t mean_{non-eye} |P - P'|^2.

    The eye term sums over frames (per sample); the landmark term averages
    over frames and the 56 non-eye landmarks; both average over the batch.
    """
    ratios = eye_ratio_points(pred_points)
    l_eye = (ratios - blink).abs().sum(dim=-1).mean()
    idx = list(NON_EYE_LANDMARKS)
    sq = ((pred_points[..., idx, :] - teacher_points[..., idx, :]) ** 2).sum(dim=-1)
    l_pts = sq.mean()
    return lambda_eye * l_eye + l_pts


def combine_exp_losses(cfg, l_distill, l_read, l_lks):
    """Weighted total; the single place the three weights are wired."""
    return cfg.lambda_distill * l_distill + cfg.lambda_read * l_read + cfg.lambda_lks * l_lks


@dataclass
class ExpLossContext:
    """Float-typed frozen tensors the loss needs: landmark model and reading map."""

    lm_mean: torch.Tensor
    lm_basis: torch.Tensor
    read: synthdata.ReadingOracle

    @classmethod
    def build(cls, lmodel, read_oracle, dtype=torch.float32):
        return cls(lm_mean=lmodel.mean.to(dtype), lm_basis=lmodel.basis.to(dtype), read=read_oracle)


def expnet_loss(model: ExpNet, batch: dict, ctx: ExpLossContext, cfg):
    """Full training loss on a batch dict with keys windows, teacher, beta0,
    blink (torch tensors).  Returns (total, parts)."""
    pred = model(batch["windows"], batch["beta0"], batch["blink"])
    teacher = batch["teacher"]
    l_distill = loss_distill(pred, teacher)

    pred_pts = landmarks_from_beta(ctx.lm_mean, ctx.lm_basis, pred)
    with torch.no_grad():
        teach_pts = landmarks_from_beta(ctx.lm_mean, ctx.lm_basis, teacher)
    l_lks = loss_lks(pred_pts, teach_pts, batch["blink"], cfg.lambda_eye)

    pred_logits = ctx.read.logits(pred_pts[..., 48:68, :])
    with torch.no_grad():
        target_logits = ctx.read.logits(teach_pts[..., 48:68, :])
    l_read = loss_read(pred_logits, target_logits)

    total = combine_exp_losses(cfg, l_distill, l_read, l_lks)
    return total, {"distill": l_distill, "read": l_read, "lks": l_lks}


# ---------------------------------------------------------------------------
# typed inference and training


def expnet_forward(model: ExpNet, windows, beta0, blink) -> np.ndarray:
    """Run the net on one clip: windows (T, 16, 80), beta0 (64,), blink (T,)
    in [0, 1] -> (T, 64) float64 coefficients."""
    w = np.asarray(windows, dtype=np.float64)
    z = np.asarray(blink, dtype=np.float64)
    b0 = np.asarray(beta0, dtype=np.float64)
    if z.ndim != 1 or w.ndim != 3 or w.shape[0] != z.shape[0]:
        raise ValueError(f"windows {w.shape} and blink {z.shape} must share the frame count")
    if b0.shape != (EXP_DIM,):
        raise ValueError(f"beta0 must have shape ({EXP_DIM},), got {b0.shape}")
    if z.size and (z.min() < 0.0 or z.max() > 1.0):
        raise ValueError("blink values must lie in [0, 1]")
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        out = model(torch.as_tensor(w, dtype=dtype)[None],
                    torch.as_tensor(b0, dtype=dtype)[None],
                    torch.as_tensor(z, dtype=dtype)[None])[0]
    return out.double().numpy()


def sample_expnet_batch(corpus, cfg, step: int):
    """Deterministic batch for one step: windows, teacher targets, clip-start
    reference expressions, and fresh uniform blink values."""
    rng = rng_for(cfg.seed, "expnet-step", step)
    t_clip = corpus.windows.shape[1]
    idx = rng.integers(0, corpus.num_clips, size=cfg.batch)
    offs = rng.integers(0, t_clip - 5 + 1, size=cfg.batch)
    windows = np.stack([corpus.windows[i, o:o + 5] for i, o in zip(idx, offs)])
    teacher = np.stack([corpus.teacher[i, o:o + 5] for i, o in zip(idx, offs)])
    beta0 = corpus.teacher[idx, 0]
    blink = rng.uniform(0.0, 1.0, size=(cfg.batch, 5))
    return {
        "windows": torch.as_tensor(windows, dtype=torch.float32),
        "teacher": torch.as_tensor(teacher, dtype=torch.float32),
        "beta0": torch.as_tensor(beta0, dtype=torch.float32),
        "blink": torch.as_tensor(blink, dtype=torch.float32),
    }


def train_expnet(cfg, corpus, out_dir, resume_from=None):
    """Train on a loaded corpus; writes expnet checkpoint + history CSV into
    out_dir and returns the history as a list of dict rows."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = ExpNet(cfg.enc_channels)
    init_expnet(model, cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr_expnet)
    start_step = 0
    if resume_from is not None:
        arrays, start_step = load_checkpoint(resume_from)
        restore_adam(model, opt, arrays, start_step)

    lmodel = synthdata.gen_landmark_model(cfg.seed)
    ctx = ExpLossContext.build(lmodel, synthdata.gen_reading_oracle(cfg.seed, lmodel))

    rows = []
    ckpt = out / "expnet"
    for step in range(start_step, cfg.steps_expnet):
        batch = sample_expnet_batch(corpus, cfg, step)
        total, parts = expnet_loss(model, batch, ctx, cfg)
        if not torch.isfinite(total):
            raise TrainingDivergedError(f"expnet loss became non-finite at step {step}")
        opt.zero_grad()
        total.backward()
        opt.step()
        rows.append({"step": step, "loss": float(total.detach()),
                     "loss_distill": float(parts["distill"].detach()),
                     "loss_read": float(parts["read"].detach()),
                     "loss_lks": float(parts["lks"].detach())})
        if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(ckpt, model, opt, step + 1)
    save_checkpoint(ckpt, model, opt, cfg.steps_expnet)
    write_history(history_path(out, "expnet"), rows, ["step", "loss", "loss_distill", "loss_read", "loss_lks"],
                  append=resume_from is not None)
    return rows
