"""Stylized head-pose generation.

A conditional VAE over fixed-length windows of head-pose *residuals*: each
window of 32 pose frames is split into its first frame (the anchor) and the
per-frame offsets from it, and the VAE models the offsets conditioned on a
style label and on audio.  Sampling stitches overlapping decoded windows
into an arbitrarily long pose sequence around a single global anchor.

An optional least-squares patch discriminator over the residual sequences
sharpens the decoder; reconstruction and KL terms do the heavy lifting.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import synthdata
from .core3dmm import POSE_DIM
from .errors import DimensionError, TrainingDivergedError
from .expnet import AudioEncoder, calibrate_audio_encoder, init_audio_encoder
from .seeding import rng_for
from .training import (history_path, load_checkpoint, restore_adam,
                       save_checkpoint, write_history)

T_POSE = 32          # pose window length, in frames
NUM_STYLES = 46      # size of the style one-hot

# Init scale for the decoder's audio input columns.  Mean-pooling a clip's
# windows leaves the standardized audio features well below unit scale;
# reading them through amplified input columns keeps the hidden activations
# near unit scale, so the output layer's optimal weights stay within the
# distance Adam can travel at the default learning rate and step count.
# Only the decoder gets this: amplifying the encoder's view of the audio
# just feeds the posterior shortcut (see init_posevae).
DEC_AUDIO_SCALE = 0.7

# The critic trains slower than the generator (two-time-scale rule).  With
# matched rates the critic's early opinions shove the decoder away from
# the data before reconstruction has converged, and its growing input
# gradients later hold reconstruction at a noise floor; a slower critic
# still learns, but arrives after reconstruction has settled.
DISC_LR_SCALE = 0.1


# ---------------------------------------------------------------------------
# residual windows


def pose_residual(seq):
    """Split a (T, 6) pose sequence into (anchor (6,), offsets (T, 6)).

    The anchor is the first frame; offsets[0] is exactly zero.
    """
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[1] != POSE_DIM or seq.shape[0] < 1:
        raise DimensionError(f"pose sequence must be (T, {POSE_DIM}) with T >= 1, got {seq.shape}")
    anchor = seq[0].copy()
    return anchor, seq - anchor[None, :]


def recompose_poses(anchor, offsets):
    """Inverse of pose_residual: add the anchor back onto every frame."""
    anchor = np.asarray(anchor, dtype=np.float64)
    offsets = np.asarray(offsets, dtype=np.float64)
    if anchor.shape != (POSE_DIM,):
        raise DimensionError(f"anchor must be ({POSE_DIM},), got {anchor.shape}")
    if offsets.ndim != 2 or offsets.shape[1] != POSE_DIM:
        raise DimensionError(f"offsets must be (T, {POSE_DIM}), got {offsets.shape}")
    return offsets + anchor[None, :]


def style_onehot(style: int, num_styles: int = NUM_STYLES) -> np.ndarray:
    if not 0 <= style < num_styles:
        raise DimensionError(f"style index {style} outside [0, {num_styles})")
    v = np.zeros(num_styles)
    v[style] = 1.0
    return v


# ---------------------------------------------------------------------------
# model


class PoseVAE(nn.Module):
    """Two-affine-layer encoder and decoder around a diagonal Gaussian latent.

    Encoder input:  flattened offsets (32*6) | style one-hot | audio embedding
    Decoder input:  (z + style embedding) | audio embedding
    Both hidden layers are ReLU; the style embedding is a bias-free affine
    map of the one-hot added directly onto the latent sample.
    """

    def __init__(self, latent_dim: int = 64, hidden_dim: int = 256,
                 enc_channels=(32, 64, 128, 256), num_styles: int = NUM_STYLES):
        super().__init__()
        self.latent_dim = latent_dim
        self.num_styles = num_styles
        self.audio_enc = AudioEncoder(enc_channels, emb_gain=1.0)
        a = self.audio_enc.embed_dim
        flat = T_POSE * POSE_DIM
        self.enc_l1 = nn.Linear(flat + num_styles + a, hidden_dim)
        self.enc_l2 = nn.Linear(hidden_dim, 2 * latent_dim)
        self.style_proj = nn.Linear(num_styles, latent_dim, bias=False)
        self.dec_l1 = nn.Linear(latent_dim + a, hidden_dim)
        self.dec_l2 = nn.Linear(hidden_dim, flat)

    def audio_embed(self, windows: torch.Tensor) -> torch.Tensor:
        """Mean-pooled embedding of a bag of mel windows: (B, n, 16, 80) -> (B, A)."""
        b, n = windows.shape[0], windows.shape[1]
        emb = self.audio_enc(windows.reshape(b * n, *windows.shape[2:]))
        return emb.reshape(b, n, -1).mean(dim=1)


@dataclass
class PoseConds:
    """Conditioning bundle for the pose model: the sequence anchor, the
    style one-hot, and the clip's strided mel windows.

    The anchor never enters the networks (they work purely in offsets);
    it is carried so a decode can be recomposed into absolute poses, and
    its presence is still required - decoding is only meaningful relative
    to an anchor.
    """

    anchor: object
    style: object
    windows: object

    def check(self):
        missing = [n for n in ("anchor", "style", "windows") if getattr(self, n) is None]
        if missing:
            raise DimensionError(f"incomplete pose conditioning, missing: {', '.join(missing)}")
        return self


def _mlp_encode(model: PoseVAE, offsets: torch.Tensor, style: torch.Tensor,
                audio_emb: torch.Tensor):
    """Posterior parameters for a batch of offset windows.

    offsets (B, 32, 6), style (B, num_styles), audio_emb (B, A)
    -> (mu, logvar), each (B, latent_dim); logvar is clamped to [-20, 20].
    """
    if offsets.shape[-2] != T_POSE or offsets.shape[-1] != POSE_DIM:
        raise DimensionError(
            f"encoder takes ({T_POSE}, {POSE_DIM}) offset windows, got {tuple(offsets.shape[-2:])}")
    flat = offsets.reshape(offsets.shape[0], -1)
    h = torch.relu(model.enc_l1(torch.cat([flat, style, audio_emb], dim=-1)))
    out = model.enc_l2(h)
    mu, logvar = out.chunk(2, dim=-1)
    return mu, logvar.clamp(-20.0, 20.0)


def _mlp_decode(model: PoseVAE, z: torch.Tensor, style: torch.Tensor,
                audio_emb: torch.Tensor) -> torch.Tensor:
    """Decode latents to offset windows: (B, latent) -> (B, 32, 6)."""
    zc = z + model.style_proj(style)
    h = torch.relu(model.dec_l1(torch.cat([zc, audio_emb], dim=-1)))
    return model.dec_l2(h).reshape(z.shape[0], T_POSE, POSE_DIM)


def _conds_tensors(model: PoseVAE, conds: PoseConds):
    """Batched float tensors (style, audio_emb) from a conditioning bundle."""
    conds.check()
    style = torch.as_tensor(np.asarray(conds.style), dtype=torch.float32)
    if style.ndim == 1:
        style = style[None]
    wins = torch.as_tensor(np.asarray(conds.windows), dtype=torch.float32)
    if wins.ndim == 3:
        wins = wins[None]
    return style, model.audio_embed(wins)


def pvae_encode(model: PoseVAE, offsets, conds: PoseConds):
    """Posterior (mu, logvar) for one offset window under a conditioning
    bundle; each comes back as a (latent_dim,) numpy array."""
    style, emb = _conds_tensors(model, conds)
    off = torch.as_tensor(np.asarray(offsets), dtype=torch.float32)
    if off.ndim == 2:
        off = off[None]
    with torch.no_grad():
        mu, logvar = _mlp_encode(model, off, style, emb)
    return mu[0].double().numpy(), logvar[0].double().numpy()


def pvae_decode(model: PoseVAE, z, conds: PoseConds) -> np.ndarray:
    """Decode one latent vector to a (32, 6) offset window under a
    conditioning bundle (anchor, style, audio windows all required)."""
    style, emb = _conds_tensors(model, conds)
    zt = torch.as_tensor(np.asarray(z), dtype=torch.float32)
    if zt.ndim == 1:
        zt = zt[None]
    with torch.no_grad():
        res = _mlp_decode(model, zt, style, emb)
    return res[0].double().numpy()


def reparameterize(mu: torch.Tensor, logvar: torch.Tensor, noise: torch.Tensor) -> torch.Tensor:
    """mu + exp(logvar / 2) * noise, with caller-supplied unit normal noise."""
    return mu + torch.exp(0.5 * logvar) * noise


def kl_to_standard_normal(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """Per-sample KL(q || N(0, I)), summed over latent dimensions.

    0.5 * sum(mu^2 + exp(logvar) - 1 - logvar); returns shape (B,) for
    batched input, a scalar for a single vector.
    """
    return 0.5 * (mu ** 2 + torch.exp(logvar) - 1.0 - logvar).sum(dim=-1)


def init_posevae(model: PoseVAE, seed: int) -> PoseVAE:
    """Seeded init tuned so training starts from a quiet, stable point.

    The decoder output layer starts at zero (all-zero offsets, so sampled
    poses begin as the constant anchor), the posterior head starts small
    (near-standard posterior), and the affine hidden layers get plain
    1/sqrt(fan_in) noise.

    Two asymmetries steer which route the information takes.  The
    decoder's input columns for the latent sample start at zero: the
    encoder sees the window it is reconstructing, so the latent offers a
    tempting shortcut around the audio conditioning, but anything routed
    through it is noise at sampling time; starting the route closed means
    it only opens where reconstruction genuinely profits.  The decoder's
    audio columns instead start amplified (DEC_AUDIO_SCALE), which makes
    the honest route the fast one.
    """
    rng = rng_for(seed, "posevae-init")
    init_audio_encoder(model.audio_enc, rng)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.startswith("audio_enc"):
                continue
            if name.endswith("bias"):
                p.zero_()
            elif name.startswith("dec_l2"):
                p.zero_()
            elif name.startswith("enc_l2"):
                p.copy_(torch.as_tensor(rng.normal(scale=0.01, size=tuple(p.shape)), dtype=p.dtype))
            elif name.startswith("style_proj"):
                p.copy_(torch.as_tensor(rng.normal(scale=0.15, size=tuple(p.shape)), dtype=p.dtype))
            elif name.startswith("dec_l1"):
                w = rng.normal(scale=DEC_AUDIO_SCALE, size=tuple(p.shape))
                w[:, :model.latent_dim] = 0.0
                p.copy_(torch.as_tensor(w, dtype=p.dtype))
            else:
                fan_in = p.shape[1]
                p.copy_(torch.as_tensor(rng.normal(scale=np.sqrt(1.0 / fan_in), size=tuple(p.shape)),
                                        dtype=p.dtype))
    calibrate_audio_encoder(model.audio_enc, seed)
    return model


# ---------------------------------------------------------------------------
# discriminator and losses


class PoseDiscriminator(nn.Module):
    """1-D patch discriminator over offset sequences laid out as (B, 6, 32).

    Three convolutions (two stride-2, one stride-1) give eight patch scores
    per window, each seeing an 18-frame receptive field - local motion
    texture, never the whole window.
    """

    def __init__(self):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv1d(POSE_DIM, 64, 4, 2, 1), nn.LeakyReLU(0.2),
            nn.Conv1d(64, 128, 4, 2, 1), nn.LeakyReLU(0.2),
            nn.Conv1d(128, 1, 3, 1, 1),
        )

    def forward(self, offsets: torch.Tensor) -> torch.Tensor:
        """(B, 32, 6) offset windows -> (B, 1, 8) patch scores."""
        return self.net(offsets.transpose(1, 2))


def init_discriminator(disc: PoseDiscriminator, seed: int) -> PoseDiscriminator:
    """Seeded init with a zero final layer.

    A zero score head means the critic starts out silent: it backs no
    gradient into the generator until its own training has given it an
    actual opinion, so early optimization is carried by reconstruction
    alone instead of by an untrained critic's noise.
    """
    rng = rng_for(seed, "posevae-disc-init")
    with torch.no_grad():
        final = len(disc.net) - 1
        for name, p in disc.named_parameters():
            if name.endswith("bias") or name.startswith(f"net.{final}."):
                p.zero_()
            else:
                fan_in = int(np.prod(p.shape[1:]))
                p.copy_(torch.as_tensor(rng.normal(scale=0.02 * np.sqrt(2.0 / fan_in), size=tuple(p.shape)),
                                        dtype=p.dtype))
    return disc


def lsgan_d_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    """0.5 * [mean (D(real) - 1)^2 + mean D(fake)^2]."""
    return 0.5 * (((real_scores - 1.0) ** 2).mean() + (fake_scores ** 2).mean())


def lsgan_g_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    """mean (D(fake) - 1)^2."""
    return ((fake_scores - 1.0) ** 2).mean()


def pvae_loss(model: PoseVAE, disc, batch, cfg, noise: torch.Tensor):
    """Generator-side loss parts for one batch.

    batch: dict with float tensors "offsets" (B, 32, 6), "style"
    (B, num_styles), "windows" (B, n, 16, 80).  Returns (total, parts)
    where parts holds detached "mse", "kl", "gan" plus the live
    reconstruction for the discriminator step.
    """
    audio_emb = model.audio_embed(batch["windows"])
    mu, logvar = _mlp_encode(model, batch["offsets"], batch["style"], audio_emb)
    z = reparameterize(mu, logvar, noise)
    recon = _mlp_decode(model, z, batch["style"], audio_emb)
    l_mse = ((recon - batch["offsets"]) ** 2).mean()
    l_kl = kl_to_standard_normal(mu, logvar).mean()
    if disc is not None and cfg.lambda_gan > 0.0:
        l_gan = lsgan_g_loss(disc(recon))
    else:
        l_gan = torch.zeros((), dtype=l_mse.dtype)
    total = combine_pose_losses(cfg, l_mse, l_kl, l_gan)
    parts = {"mse": l_mse, "kl": l_kl, "gan": l_gan, "recon": recon}
    return total, parts


def combine_pose_losses(cfg, l_mse, l_kl, l_gan):
    """Weighted total; the single place the three weights are wired."""
    return cfg.lambda_mse * l_mse + cfg.lambda_kl * l_kl + cfg.lambda_gan * l_gan


# ---------------------------------------------------------------------------
# training


def sample_pose_batch(corpus, cfg, step: int):
    """Seeded batch of offset windows with matching style one-hots, strided
    audio windows, and reparameterization noise."""
    rng = rng_for(cfg.seed, "posevae-step", step)
    b = cfg.batch_posevae
    t_clip = corpus.poses.shape[1]
    idx = rng.integers(0, corpus.num_clips, size=b)
    offs = rng.integers(0, t_clip - T_POSE + 1, size=b)
    offsets = np.empty((b, T_POSE, POSE_DIM))
    windows = []
    for j, (i, o) in enumerate(zip(idx, offs)):
        seq = corpus.poses[i, o:o + T_POSE]
        offsets[j] = seq - seq[0]
        windows.append(corpus.windows[i, o:o + T_POSE:cfg.audio_stride_posevae])
    style = np.zeros((b, NUM_STYLES))
    style[np.arange(b), corpus.styles[idx] % NUM_STYLES] = 1.0
    noise = rng.normal(size=(b, cfg.latent_dim))
    f32 = lambda a: torch.as_tensor(np.asarray(a), dtype=torch.float32)
    return {"offsets": f32(offsets), "style": f32(style),
            "windows": f32(np.stack(windows)), "noise": f32(noise)}


def train_posevae(cfg, corpus, out_dir, resume_from=None):
    """Adversarially regularized VAE training; returns the history rows.

    Writes checkpoints (generator, discriminator, and both optimizers) under
    out_dir/posevae.* and a posevae_history.csv.  With lambda_gan == 0 the
    discriminator never updates and the generator trains on MSE + KL alone.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = PoseVAE(cfg.latent_dim, cfg.hidden_dim, cfg.enc_channels)
    init_posevae(model, cfg.seed)
    disc = PoseDiscriminator()
    init_discriminator(disc, cfg.seed)
    # The audio branch stays at its seeded calibration: it is a fixed
    # random conditioning feature bank.  Training it couples the decoder's
    # appetite for feature variance against the KL term's pressure to
    # flatten the posterior - through shared weights - and that tug of war
    # stalls reconstruction.
    gen_params = [p for n, p in model.named_parameters() if not n.startswith("audio_enc")]
    opt_g = torch.optim.Adam(gen_params, lr=cfg.lr_posevae)
    opt_d = torch.optim.Adam(disc.parameters(), lr=DISC_LR_SCALE * cfg.lr_posevae)
    start_step = 0
    if resume_from is not None:
        arrays, start_step = load_checkpoint(resume_from)
        restore_adam(model, opt_g, arrays, start_step, "pvae")
        restore_adam(disc, opt_d, arrays, start_step, "disc")

    models = {"pvae": model, "disc": disc}
    opts = {"pvae": opt_g, "disc": opt_d}
    ckpt = out / "posevae"
    rows = []
    for step in range(start_step, cfg.steps_posevae):
        batch = sample_pose_batch(corpus, cfg, step)
        use_gan = cfg.lambda_gan > 0.0
        total, parts = pvae_loss(model, disc if use_gan else None, batch, cfg, batch["noise"])
        d_loss = torch.zeros(())
        if use_gan:
            d_loss = lsgan_d_loss(disc(batch["offsets"]), disc(parts["recon"].detach()))
            opt_d.zero_grad()
            d_loss.backward()
            opt_d.step()
            # re-score the same reconstruction against the just-updated
            # critic; everything upstream of the critic is unchanged, so
            # only the cheap score head needs recomputing
            parts["gan"] = lsgan_g_loss(disc(parts["recon"]))
            total = combine_pose_losses(cfg, parts["mse"], parts["kl"], parts["gan"])
        if not torch.isfinite(total):
            raise TrainingDivergedError(f"posevae loss became non-finite at step {step}")
        opt_g.zero_grad()
        total.backward()
        opt_g.step()
        rows.append({"step": step, "loss": float(total.detach()),
                     "loss_mse": float(parts["mse"].detach()),
                     "loss_kl": float(parts["kl"].detach()),
                     "loss_gan": float(parts["gan"].detach()),
                     "loss_disc": float(d_loss.detach())})
        if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(ckpt, models, opts, step + 1)
    save_checkpoint(ckpt, models, opts, cfg.steps_posevae)
    write_history(history_path(out, "posevae"), rows,
                  ["step", "loss", "loss_mse", "loss_kl", "loss_gan", "loss_disc"],
                  append=resume_from is not None)
    return rows


# ---------------------------------------------------------------------------
# sampling


CHUNK_STRIDE = 28    # new frames per chunk; chunks overlap by 4
FADE = T_POSE - CHUNK_STRIDE


def sample_poses(model: PoseVAE, anchor, style: int, windows, num_frames: int,
                 seed: int, audio_stride: int = 4) -> np.ndarray:
    """Generate a (num_frames, 6) pose sequence around one global anchor.

    Decodes latent draws chunk by chunk (32 frames, advancing 28), each
    conditioned on the style and on that chunk's strided audio windows, and
    linearly cross-fades the 4-frame overlaps (the incoming chunk's weight
    ramps 0.2, 0.4, 0.6, 0.8).  Chunk k's latent comes from a stream keyed
    by (seed, "pose-z", k), so a prefix of the sequence never depends on
    how long the full sequence is.
    """
    anchor = np.asarray(anchor, dtype=np.float64)
    if anchor.shape != (POSE_DIM,):
        raise DimensionError(f"anchor must be ({POSE_DIM},), got {anchor.shape}")
    if num_frames < 1:
        raise DimensionError(f"num_frames must be positive, got {num_frames}")
    windows = np.asarray(windows)
    if windows.ndim != 3 or windows.shape[1:] != (16, 80):
        raise DimensionError(f"mel windows must be (T, 16, 80), got {windows.shape}")

    num_chunks = 1 + max(0, -(-(num_frames - T_POSE) // CHUNK_STRIDE))
    out = np.zeros((CHUNK_STRIDE * (num_chunks - 1) + T_POSE, POSE_DIM))
    style_t = torch.as_tensor(style_onehot(style, model.num_styles)[None], dtype=torch.float32)
    with torch.no_grad():
        for k in range(num_chunks):
            start = k * CHUNK_STRIDE
            frame_idx = np.minimum(start + np.arange(0, T_POSE, audio_stride), windows.shape[0] - 1)
            win = torch.as_tensor(windows[frame_idx][None], dtype=torch.float32)
            emb = model.audio_embed(win)
            z = torch.as_tensor(rng_for(seed, "pose-z", k).normal(size=(1, model.latent_dim)),
                                dtype=torch.float32)
            res = _mlp_decode(model, z, style_t, emb)[0].double().numpy()
            if k == 0:
                out[:T_POSE] = res
            else:
                w_new = (np.arange(FADE) + 1.0)[:, None] / (FADE + 1.0)
                out[start:start + FADE] = (1.0 - w_new) * out[start:start + FADE] + w_new * res[:FADE]
                out[start + FADE:start + T_POSE] = res[FADE:]
    return out[:num_frames] + anchor[None, :]
