"""Temporal coefficient windows to unsupervised-keypoint motion.

A small 1-D convolutional network reads a five-frame window of 70-dim
motion coefficients and emits a motion descriptor for the window's center
frame: three Euler angles, a translation, and a per-keypoint deformation.
Applying the descriptor to a frozen canonical keypoint set gives the
driven keypoints; training matches them, in L1, against a frozen smooth
oracle standing in for an external motion extractor.

Also home to the trace-map diagnostic: accumulated 2-D point trails
rasterized to a portable pixmap plus a CSV of the raw coordinates.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from . import synthdata
from .core3dmm import COEFF_DIM, euler_to_rotation
from .errors import DimensionError, EmptyInputError, TrainingDivergedError
from .seeding import rng_for
from .training import (history_path, load_checkpoint, restore_adam,
                       save_checkpoint, write_history)

WINDOW_LEN = 5   # frames per coefficient window, center frame at index 2


# ---------------------------------------------------------------------------
# windows


def coeff_window(seq: np.ndarray, t: int) -> np.ndarray:
    """Five-frame slice of a (T, 70) coefficient sequence centered on t,
    edge-clamped so boundary frames repeat the first/last frame."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[1] != COEFF_DIM:
        raise DimensionError(f"coefficient sequence must be (T, {COEFF_DIM}), got {seq.shape}")
    if not 0 <= t < seq.shape[0]:
        raise DimensionError(f"frame index {t} outside [0, {seq.shape[0]})")
    idx = np.clip(np.arange(t - 2, t + 3), 0, seq.shape[0] - 1)
    return seq[idx]


def coeff_windows(seq: np.ndarray) -> np.ndarray:
    """All edge-clamped windows of a sequence: (T, 70) -> (T, 5, 70)."""
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[1] != COEFF_DIM:
        raise DimensionError(f"coefficient sequence must be (T, {COEFF_DIM}), got {seq.shape}")
    t = seq.shape[0]
    idx = np.clip(np.arange(t)[:, None] + np.arange(-2, 3)[None, :], 0, t - 1)
    return seq[idx]


# ---------------------------------------------------------------------------
# model


@dataclass
class KeypointMotion:
    """Center-frame motion descriptor: Euler angles (radians), translation,
    and per-keypoint deformation."""

    rot: np.ndarray     # (3,) yaw, pitch, roll
    trans: np.ndarray   # (3,)
    delta: np.ndarray   # (K, 3)

    @property
    def yaw(self):
        return self.rot[0]

    @property
    def pitch(self):
        return self.rot[1]

    @property
    def roll(self):
        return self.rot[2]


class KeypointMapper(nn.Module):
    """Three 1-D convolutions over the window's time axis (kernels 3, 3, 1,
    no padding, collapsing five frames to one) followed by affine heads for
    rotation, translation, and deformation."""

    def __init__(self, channels=(128, 128, 128), num_keypoints: int = 15):
        super().__init__()
        c1, c2, c3 = channels
        self.num_keypoints = num_keypoints
        self.conv1 = nn.Conv1d(COEFF_DIM, c1, 3)
        self.conv2 = nn.Conv1d(c1, c2, 3)
        self.conv3 = nn.Conv1d(c2, c3, 1)
        self.act = nn.LeakyReLU(0.2)
        self.head_rot = nn.Linear(c3, 3)
        self.head_trans = nn.Linear(c3, 3)
        self.head_delta = nn.Linear(c3, 3 * num_keypoints)

    def forward(self, windows: torch.Tensor):
        """(B, 5, 70) -> (rot (B, 3), trans (B, 3), delta (B, K, 3))."""
        if windows.shape[-2:] != (WINDOW_LEN, COEFF_DIM):
            raise DimensionError(
                f"coefficient windows must end in ({WINDOW_LEN}, {COEFF_DIM}), got {tuple(windows.shape)}")
        x = windows.transpose(1, 2)              # (B, 70, 5)
        x = self.act(self.conv1(x))              # (B, c1, 3)
        x = self.act(self.conv2(x))              # (B, c2, 1)
        x = self.act(self.conv3(x))[..., 0]      # (B, c3)
        rot = self.head_rot(x)
        trans = self.head_trans(x)
        delta = self.head_delta(x).reshape(-1, self.num_keypoints, 3)
        return rot, trans, delta


def init_mapper(model: KeypointMapper, seed: int) -> KeypointMapper:
    """Seeded init: scaled-noise convolutions, zero heads (so the initial
    motion is exactly zero and driven keypoints start at canonical)."""
    rng = rng_for(seed, "mapper-init")
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("bias") or name.startswith("head_"):
                p.zero_()
            else:
                fan_in = int(np.prod(p.shape[1:]))
                p.copy_(torch.as_tensor(rng.normal(scale=np.sqrt(2.0 / fan_in), size=tuple(p.shape)),
                                        dtype=p.dtype))
    return model


def mapper_forward(model: KeypointMapper, window) -> KeypointMotion:
    """Motion descriptor for one (5, 70) window."""
    w = torch.as_tensor(np.asarray(window), dtype=next(model.parameters()).dtype)
    if w.ndim == 2:
        w = w[None]
    with torch.no_grad():
        rot, trans, delta = model(w)
    return KeypointMotion(rot=rot[0].double().numpy(), trans=trans[0].double().numpy(),
                          delta=delta[0].double().numpy())


# ---------------------------------------------------------------------------
# keypoint transform and loss


def _euler_batch(rot: torch.Tensor) -> torch.Tensor:
    """Batched (B, 3) Euler angles -> (B, 3, 3), same convention as the
    single-matrix helper: R = Rz(roll) @ Ry(yaw) @ Rx(pitch)."""
    yaw, pitch, roll = rot[:, 0], rot[:, 1], rot[:, 2]
    one = torch.ones_like(yaw)
    zero = torch.zeros_like(yaw)
    cy, sy = torch.cos(yaw), torch.sin(yaw)
    cp, sp = torch.cos(pitch), torch.sin(pitch)
    cr, sr = torch.cos(roll), torch.sin(roll)
    ry = torch.stack([cy, zero, sy, zero, one, zero, -sy, zero, cy], dim=-1).reshape(-1, 3, 3)
    rx = torch.stack([one, zero, zero, zero, cp, -sp, zero, sp, cp], dim=-1).reshape(-1, 3, 3)
    rz = torch.stack([cr, -sr, zero, sr, cr, zero, zero, zero, one], dim=-1).reshape(-1, 3, 3)
    return rz @ ry @ rx


def transform_points(xc: torch.Tensor, rot: torch.Tensor, trans: torch.Tensor,
                     delta: torch.Tensor) -> torch.Tensor:
    """Batched driven keypoints: (K, 3) canonical under (B, 3) angles,
    (B, 3) translation, (B, K, 3) deformation -> (B, K, 3)."""
    rmat = _euler_batch(rot)
    return xc[None] @ rmat.transpose(1, 2) + trans[:, None, :] + delta


def transform_keypoints(xc, motion: KeypointMotion) -> np.ndarray:
    """Driven keypoints for one motion descriptor: rotate the canonical
    set, translate, then add the per-keypoint deformation."""
    xc = np.asarray(xc, dtype=np.float64)
    if xc.ndim != 2 or xc.shape[1] != 3:
        raise DimensionError(f"canonical keypoints must be (K, 3), got {xc.shape}")
    rmat = euler_to_rotation(torch.as_tensor(motion.rot, dtype=torch.float64)).numpy()
    return xc @ rmat.T + np.asarray(motion.trans, dtype=np.float64) + np.asarray(motion.delta, dtype=np.float64)


def keypoint_l1(pred, target):
    """Mean over keypoints of the coordinate-wise absolute difference
    summed per point.  Works on numpy arrays or torch tensors of matching
    shape (..., K, 3); batched input averages over the batch too."""
    is_torch = isinstance(pred, torch.Tensor) or isinstance(target, torch.Tensor)
    if not is_torch:
        pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    if tuple(pred.shape) != tuple(target.shape):
        raise DimensionError(f"keypoint arrays differ in shape: {tuple(pred.shape)} vs {tuple(target.shape)}")
    diff = (pred - target).abs() if is_torch else np.abs(pred - target)
    return diff.sum(-1).mean() if is_torch else float(diff.sum(-1).mean())


# ---------------------------------------------------------------------------
# training


def _corpus_coeff_seqs(corpus) -> np.ndarray:
    """(N, T, 70) coefficient sequences: teacher expressions next to poses."""
    return np.concatenate([corpus.teacher, corpus.poses], axis=2)


def sample_mapper_batch(seqs: np.ndarray, cfg, step: int) -> np.ndarray:
    """Seeded (B, 5, 70) batch of edge-clamped windows."""
    rng = rng_for(cfg.seed, "mapper-step", step)
    n, t = seqs.shape[0], seqs.shape[1]
    idx = rng.integers(0, n, size=cfg.batch)
    ts = rng.integers(0, t, size=cfg.batch)
    frame_idx = np.clip(ts[:, None] + np.arange(-2, 3)[None, :], 0, t - 1)
    return seqs[idx[:, None], frame_idx]


def train_mapper(cfg, corpus, out_dir, resume_from=None):
    """L1 regression of driven keypoints onto the frozen oracle's keypoints.

    The canonical keypoints and the target oracle both come frozen from the
    config seed; only the mapper trains.  Returns the history rows.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = KeypointMapper(cfg.mapper_channels, cfg.num_keypoints)
    init_mapper(model, cfg.seed)
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr_mapper)
    start_step = 0
    if resume_from is not None:
        arrays, start_step = load_checkpoint(resume_from)
        restore_adam(model, opt, arrays, start_step)

    oracle = synthdata.gen_keypoint_oracle(cfg.seed, cfg.num_keypoints)
    xc = torch.as_tensor(synthdata.gen_canonical_keypoints(cfg.seed, cfg.num_keypoints),
                         dtype=torch.float32)
    seqs = _corpus_coeff_seqs(corpus)

    rows = []
    ckpt = out / "mapper"
    for step in range(start_step, cfg.steps_mapper):
        windows = sample_mapper_batch(seqs, cfg, step)
        t_rot, t_trans, t_delta = oracle.motion(windows)
        target = transform_points(xc.double(), torch.as_tensor(t_rot), torch.as_tensor(t_trans),
                                  torch.as_tensor(t_delta)).to(torch.float32)
        rot, trans, delta = model(torch.as_tensor(windows, dtype=torch.float32))
        pred = transform_points(xc, rot, trans, delta)
        l1 = keypoint_l1(pred, target)
        total = cfg.lambda_kp * l1
        if not torch.isfinite(total):
            raise TrainingDivergedError(f"mapper loss became non-finite at step {step}")
        opt.zero_grad()
        total.backward()
        opt.step()
        rows.append({"step": step, "loss": float(total.detach()), "loss_l1": float(l1.detach())})
        if cfg.checkpoint_every and (step + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(ckpt, model, opt, step + 1)
    save_checkpoint(ckpt, model, opt, cfg.steps_mapper)
    write_history(history_path(out, "mapper"), rows, ["step", "loss", "loss_l1"],
                  append=resume_from is not None)
    return rows


# ---------------------------------------------------------------------------
# trace maps


TRACE_SIZE = 512
# dot colors cycle per sequence: dark blue, red, green, purple, teal, orange
_TRACE_PALETTE = ((20, 40, 160), (200, 30, 30), (20, 140, 40),
                  (130, 40, 160), (0, 140, 140), (220, 120, 0))


def _trace_bounds(seqs):
    pts = np.concatenate([s.reshape(-1, 2) for s in seqs], axis=0)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    center = (lo + hi) / 2.0
    # square window over the larger span, 5% padded, never degenerate
    half = 0.5 * float(max(hi[0] - lo[0], hi[1] - lo[1])) * 1.05
    if half == 0.0:
        half = 1.0
    return center, half


def trace_pixel(p, center, half, size: int = TRACE_SIZE):
    """Map a 2-D point into pixel coordinates (column, row) of the trace
    image.  x grows rightward, y upward (row index decreases)."""
    col = int(np.floor((p[0] - center[0]) / half * (size / 2 - 1) + size / 2))
    row = int(np.floor((center[1] - p[1]) / half * (size / 2 - 1) + size / 2))
    return min(max(col, 0), size - 1), min(max(row, 0), size - 1)


def trace_map(sequences, ppm_path, csv_path, size: int = TRACE_SIZE):
    """Accumulate per-frame 2-D points over time into a dot-trail image.

    sequences: one (T, P, 2) array or a list of them (one color each).
    Writes a binary P6 pixmap plus a CSV of rows frame,point,x,y and
    returns the image as an (size, size, 3) uint8 array.  The view window
    is auto-fitted: a square centered on the data, spanning the larger
    coordinate extent plus 5% padding.
    """
    if isinstance(sequences, np.ndarray) and sequences.ndim == 3:
        sequences = [sequences]
    seqs = [np.asarray(s, dtype=np.float64) for s in sequences]
    if not seqs or any(s.size == 0 for s in seqs):
        raise EmptyInputError("trace_map needs at least one non-empty sequence")
    for s in seqs:
        if s.ndim != 3 or s.shape[2] != 2:
            raise DimensionError(f"trace sequences must be (T, P, 2), got {s.shape}")
    center, half = _trace_bounds(seqs)
    img = np.full((size, size, 3), 255, dtype=np.uint8)
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "point", "x", "y"])
        for si, s in enumerate(seqs):
            color = _TRACE_PALETTE[si % len(_TRACE_PALETTE)]
            for t in range(s.shape[0]):
                for p in range(s.shape[1]):
                    writer.writerow([t, p, "%.9e" % s[t, p, 0], "%.9e" % s[t, p, 1]])
                    col, row = trace_pixel(s[t, p], center, half, size)
                    img[row, col] = color
    with open(ppm_path, "wb") as fh:
        fh.write(b"P6\n%d %d\n255\n" % (size, size))
        fh.write(img.tobytes())
    return img
