"""Seeded synthetic data: a face-like landmark model, frozen teacher
oracles, style-keyed pose trajectories, and burst audio.

Everything here is a deterministic function of an integer seed.  The
oracles are fixed (never trained) affine-plus-squashing maps, built
low-rank over smooth feature patterns so that the small trainable networks
in this package can actually reach them.

Landmark model structure (see core3dmm for index conventions):

* expression coefficients 0..15 displace only mouth landmarks 48..67,
* coefficients 16..19 displace only eye landmarks 36..47, vertically, with
  upper and lower lids moving apart, so the eye ratio is strictly
  increasing in each eye coefficient over [-1, 1],
* coefficients 20..63 displace only landmarks 0..35.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.io.wavfile
import torch

from . import audio as audio_mod
from .core3dmm import (
    EXP_DIM,
    EYE_COEFF_INDICES,
    ID_DIM,
    LIP_COEFF_INDICES,
    NUM_LANDMARKS,
    BlendshapeLandmarkModel,
    BlendshapeModel,
)
from .errors import DimensionError
from .seeding import derive_seed, rng_for

# geometry constants of the canonical face
EYE_WIDTH = 0.15
LID_OFFSET = EYE_WIDTH / 8.0  # neutral eye ratio 0.5
# Per-coefficient lid amplitudes in units of LID_OFFSET.  The per-eye sum
# stays below 1 so the lid gap cannot close inside the [-1, 1] coefficient
# box (eye ratio strictly monotone there); the first two are near that
# limit so a unit of eye coefficient buys a lot of eye ratio, keeping the
# coefficient excursions a blink needs - and their footprint in coefficient
# losses - small.
_EYE_AMPS = (0.95, 0.95, 0.02, 0.02)
# d(eye_ratio)/d(beta_16): one eye's lids at amplitude a move the summed
# eye height by 2*a*LID_OFFSET against the fixed width 8*LID_OFFSET
EYE_RATIO_SLOPE = _EYE_AMPS[0] / 4.0

# oracle output scales; each generator normalizes its feature responses
# against seeded probe data so these hold regardless of raw input scale
MEL_CENTER = -5.0            # rough mean of log-mel cells, used to center oracle inputs
LIP_TEACHER_STD = 2.0        # target std of teacher lip coefficients
LIP_CLIP = 4.0               # clamp range of teacher lip coefficients
READ_LOGIT_STD = 2.0         # target logit std under teacher-scale mouth motion
KP_PRETANH_STD = 0.9         # pre-tanh std target for the keypoint oracle

NUM_CHARS = 28  # 26 letters + space + blank


def _smooth_profiles(rng: np.random.Generator, length: int, count: int) -> np.ndarray:
    """(count, length) smooth 1-D profiles: seeded mixtures of low-order
    polynomials, unit-normalized."""
    t = np.linspace(-1.0, 1.0, length)
    basis = np.stack([np.ones_like(t), t, t * t - 1.0 / 3.0])
    coeffs = rng.normal(size=(count, basis.shape[0]))
    prof = coeffs @ basis
    return prof / np.linalg.norm(prof, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# landmark model


def _mean_face(rng: np.random.Generator) -> np.ndarray:
    pts = np.zeros((NUM_LANDMARKS, 3))
    # jaw 0..16
    t = np.linspace(0.0, np.pi, 17)
    pts[0:17, 0] = -0.45 * np.cos(t)
    pts[0:17, 1] = 0.25 - 0.70 * np.sin(t)
    pts[0:17, 2] = 0.05 * (1.0 - np.sin(t))
    # brows 17..26
    bx = np.linspace(-0.35, -0.10, 5)
    arch = 0.03 * np.sin(np.linspace(0.0, np.pi, 5))
    pts[17:22] = np.stack([bx, 0.28 + arch, np.full(5, 0.10)], axis=1)
    pts[22:27] = np.stack([-bx[::-1], 0.28 + arch[::-1], np.full(5, 0.10)], axis=1)
    # nose 27..35
    pts[27:31] = np.stack([np.zeros(4), np.linspace(0.15, -0.02, 4), np.linspace(0.12, 0.22, 4)], axis=1)
    pts[31:36] = np.stack([np.linspace(-0.08, 0.08, 5), np.full(5, -0.06), np.full(5, 0.15)], axis=1)
    # eyes 36..47; upper/lower lid x positions match pairwise
    for base, cx in ((36, -0.20), (42, 0.20)):
        half = EYE_WIDTH / 2
        inner_x, outer_x = cx - half, cx + half
        lid_xs = (cx - 0.04, cx + 0.04)
        cy = 0.15
        # corners (index 0 and 3 of each eye block)
        pts[base + 0] = (inner_x, cy, 0.05)
        pts[base + 3] = (outer_x, cy, 0.05)
        # upper lids then lower lids (lower mirror the upper x positions)
        pts[base + 1] = (lid_xs[0], cy + LID_OFFSET, 0.05)
        pts[base + 2] = (lid_xs[1], cy + LID_OFFSET, 0.05)
        pts[base + 4] = (lid_xs[1], cy - LID_OFFSET, 0.05)
        pts[base + 5] = (lid_xs[0], cy - LID_OFFSET, 0.05)
    # mouth 48..67: outer 12-ring then inner 8-ring
    ang_out = np.pi - np.arange(12) * (2 * np.pi / 12)
    pts[48:60] = np.stack([0.14 * np.cos(ang_out), -0.25 + 0.06 * np.sin(ang_out), np.full(12, 0.08)], axis=1)
    ang_in = np.pi - np.arange(8) * (2 * np.pi / 8)
    pts[60:68] = np.stack([0.09 * np.cos(ang_in), -0.25 + 0.025 * np.sin(ang_in), np.full(8, 0.08)], axis=1)
    # seeded jitter: x/z everywhere, y only outside the eye block so the
    # lid-gap margins that guarantee eye-ratio monotonicity stay intact
    jitter = rng.uniform(-0.005, 0.005, size=(NUM_LANDMARKS, 3))
    jitter[36:48, 1] = 0.0
    return pts + jitter


def gen_landmark_model(seed: int) -> BlendshapeLandmarkModel:
    """Seeded landmark model with the documented coefficient structure."""
    rng = rng_for(seed, "landmark-model")
    mean = _mean_face(rng)
    basis = np.zeros((NUM_LANDMARKS, 3, EXP_DIM))
    # lip coefficients: dense seeded displacement of the 20 mouth points
    for k in LIP_COEFF_INDICES:
        basis[48:68, :, k] = rng.normal(scale=0.02, size=(20, 3))
    # eye coefficients: vertical, lid-opposing; coefficient -> (eyes, amplitude)
    eye_targets = ((36,), (42,), (36, 42), (36, 42))
    for k, amp_u, eyes in zip(EYE_COEFF_INDICES, _EYE_AMPS, eye_targets):
        amp = amp_u * LID_OFFSET
        for base in eyes:
            basis[base + 1, 1, k] = amp
            basis[base + 2, 1, k] = amp
            basis[base + 4, 1, k] = -amp
            basis[base + 5, 1, k] = -amp
    # remaining coefficients: landmarks 0..35 only
    for k in range(EXP_DIM):
        if k in LIP_COEFF_INDICES or k in EYE_COEFF_INDICES:
            continue
        basis[0:36, :, k] = rng.normal(scale=0.015, size=(36, 3))
    return BlendshapeLandmarkModel(mean=mean, basis=basis)


def gen_blendshape_model(seed: int, num_vertices: int = 300) -> BlendshapeModel:
    """Seeded dense blendshape model; basis columns unit Frobenius norm."""
    rng = rng_for(seed, "blendshape-model")
    direc = rng.normal(size=(num_vertices, 3))
    direc /= np.linalg.norm(direc, axis=1, keepdims=True)
    mean = direc * rng.uniform(0.4, 0.6, size=(num_vertices, 1))

    def _basis(dim):
        b = rng.normal(size=(num_vertices, 3, dim))
        norms = np.linalg.norm(b.reshape(-1, dim), axis=0)
        return b / norms

    return BlendshapeModel(mean=mean, id_basis=_basis(ID_DIM), exp_basis=_basis(EXP_DIM))


# ---------------------------------------------------------------------------
# oracles


@dataclass(frozen=True)
class LipTeacherOracle:
    """Frozen map from a 16x80 mel window into the 16 lip coefficients:
    clamp(U @ F @ (window - center) + b, +-LIP_CLIP), rank-4 smooth features."""

    features: np.ndarray  # (4, 16, 80), unit-norm smooth patterns
    mixing: np.ndarray    # (16, 4)
    bias: np.ndarray      # (16,)

    def lip_values(self, windows: np.ndarray) -> np.ndarray:
        w = np.asarray(windows, dtype=np.float64)
        squeeze = w.ndim == 2
        if squeeze:
            w = w[None]
        if w.shape[-2:] != (audio_mod.WINDOW_FRAMES, audio_mod.NUM_MEL):
            raise DimensionError(f"windows must end in (16, 80), got {w.shape}")
        feats = np.einsum("kij,tij->tk", self.features, w - MEL_CENTER)
        raw = feats @ self.mixing.T + self.bias
        out = np.clip(raw, -LIP_CLIP, LIP_CLIP)
        return out[0] if squeeze else out


def _probe_windows(seed: int) -> np.ndarray:
    """A small deterministic batch of mel windows from seeded burst audio,
    used to normalize oracle feature responses."""
    wins = []
    for i in range(12):
        wave = gen_audio_for_clip(derive_seed(seed, "probe-audio", i), 32, 25.0)
        mel = audio_mod.mel_spectrogram(wave)
        wins.append(audio_mod.frame_windows(mel, 32, 25.0))
    return np.concatenate(wins)


def gen_lip_oracle(seed: int) -> LipTeacherOracle:
    rng = rng_for(seed, "lip-oracle")
    tprof = _smooth_profiles(rng, audio_mod.WINDOW_FRAMES, 4)
    sprof = _smooth_profiles(rng, audio_mod.NUM_MEL, 4)
    features = np.einsum("ki,kj->kij", tprof, sprof)
    features /= np.linalg.norm(features.reshape(4, -1), axis=1)[:, None, None]
    # normalize feature responses on seeded probe audio, then scale so lip
    # coefficients come out with std ~= LIP_TEACHER_STD and rarely clamp
    probe = np.einsum("kij,tij->tk", features, _probe_windows(seed) - MEL_CENTER)
    mu, sigma = probe.mean(axis=0), probe.std(axis=0)
    raw_mix = rng.normal(size=(16, 4)) * (LIP_TEACHER_STD / 2.0)
    mixing = raw_mix / sigma[None, :]
    bias = rng.normal(scale=0.05, size=16) - mixing @ mu
    return LipTeacherOracle(features=features, mixing=mixing, bias=bias)


def teacher_beta(oracle: LipTeacherOracle, windows: np.ndarray) -> np.ndarray:
    """(T, 16, 80) windows -> (T, 64) expression targets, zero outside lips."""
    lips = oracle.lip_values(windows)
    single = lips.ndim == 1
    if single:
        lips = lips[None]
    out = np.zeros((lips.shape[0], EXP_DIM))
    out[:, list(LIP_COEFF_INDICES)] = lips
    return out[0] if single else out


@dataclass(frozen=True)
class ReadingOracle:
    """Frozen affine map from the 20 mouth-landmark coordinates (flattened
    x,y) to 28 character logits; zero logits at the neutral mouth."""

    weight: torch.Tensor  # (28, 40) float64
    bias: torch.Tensor    # (28,)

    def logits(self, mouth_xy: torch.Tensor) -> torch.Tensor:
        """(..., 20, 2) mouth coordinates -> (..., 28) logits; differentiable."""
        flat = mouth_xy.reshape(*mouth_xy.shape[:-2], 40)
        w = self.weight.to(flat.dtype)
        b = self.bias.to(flat.dtype)
        return flat @ w.T + b


def gen_reading_oracle(seed: int, lmodel: BlendshapeLandmarkModel) -> ReadingOracle:
    rng = rng_for(seed, "reading-oracle")
    w = rng.normal(size=(NUM_CHARS, 40))
    # scale each logit row so teacher-scale lip motion produces logits with
    # std READ_LOGIT_STD: var(logit_i) = lip_std^2 * sum_k (w_i . B_k)^2
    lip_cols = np.stack([lmodel.basis[48:68, :2, k].numpy().reshape(40) for k in lmodel.lip_indices], axis=1)
    per_row = LIP_TEACHER_STD * np.sqrt(((w @ lip_cols) ** 2).sum(axis=1))
    w = w * (READ_LOGIT_STD / per_row)[:, None]
    neutral = lmodel.mean[48:68, :2].numpy().reshape(40)
    b = -w @ neutral
    return ReadingOracle(weight=torch.as_tensor(w), bias=torch.as_tensor(b))


@dataclass(frozen=True)
class KeypointOracle:
    """Frozen map from a 5x70 coefficient window to keypoint motion:
    scale * tanh(U @ F @ window + b), rank-8 time-smooth features."""

    features: np.ndarray  # (8, 5, 70)
    mixing: np.ndarray    # (6 + 3K, 8)
    bias: np.ndarray      # (6 + 3K,)
    num_keypoints: int

    def motion(self, windows: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(..., 5, 70) -> (rot (..., 3), trans (..., 3), delta (..., K, 3))."""
        w = np.asarray(windows, dtype=np.float64)
        if w.shape[-2:] != (5, 70):
            raise DimensionError(f"coefficient windows must end in (5, 70), got {w.shape}")
        feats = np.einsum("kij,...ij->...k", self.features, w)
        raw = np.tanh(feats @ self.mixing.T + self.bias)
        rot = 0.5 * raw[..., 0:3]
        trans = 0.2 * raw[..., 3:6]
        delta = 0.05 * raw[..., 6:].reshape(*w.shape[:-2], self.num_keypoints, 3)
        return rot, trans, delta


def _probe_coeff_windows(seed: int) -> np.ndarray:
    """Deterministic coefficient windows matching corpus statistics: teacher
    scale lip content plus style-keyed poses."""
    rng = rng_for(seed, "probe-coeffs")
    rows = []
    for i in range(4):
        poses = gen_pose_trajectory(derive_seed(seed, "probe-pose", i), style=10 * i + 3, clip_tag=i, num_frames=32)
        beta = np.zeros((32, EXP_DIM))
        beta[:, list(LIP_COEFF_INDICES)] = np.clip(rng.normal(scale=LIP_TEACHER_STD, size=(32, 16)), -LIP_CLIP, LIP_CLIP)
        rows.append(np.concatenate([beta, poses], axis=1))
    seq = np.concatenate(rows)
    return np.stack([seq[j:j + 5] for j in range(seq.shape[0] - 5)])


def gen_keypoint_oracle(seed: int, num_keypoints: int = 15) -> KeypointOracle:
    rng = rng_for(seed, "keypoint-oracle")
    tprof = _smooth_profiles(rng, 5, 8)
    chan = rng.normal(size=(8, 70))
    features = np.einsum("ki,kj->kij", tprof, chan)
    features /= np.linalg.norm(features.reshape(8, -1), axis=1)[:, None, None]
    out_dim = 6 + 3 * num_keypoints
    # normalize feature responses on probe windows; keep pre-tanh std mild
    probe = np.einsum("kij,tij->tk", features, _probe_coeff_windows(seed))
    mu, sigma = probe.mean(axis=0), probe.std(axis=0)
    raw_mix = rng.normal(size=(out_dim, 8)) * (KP_PRETANH_STD / np.sqrt(8))
    mixing = raw_mix / sigma[None, :]
    bias = rng.normal(scale=0.1, size=out_dim) - mixing @ mu
    return KeypointOracle(features=features, mixing=mixing, bias=bias, num_keypoints=num_keypoints)


def gen_canonical_keypoints(seed: int, num_keypoints: int = 15) -> np.ndarray:
    """(K, 3) seeded keypoints with exactly zero centroid."""
    rng = rng_for(seed, "canonical-keypoints")
    pts = rng.uniform(-0.5, 0.5, size=(num_keypoints, 3))
    return pts - pts.mean(axis=0, keepdims=True)


# ---------------------------------------------------------------------------
# pose and audio corpora


def _style_params(seed: int, style: int) -> dict:
    rng = rng_for(seed, "style", style)
    base = 0.06 + 0.24 * style / 45.0
    amp_scale = np.concatenate([np.ones(3), np.full(3, 0.3)])
    params = {"freq": np.empty((3, 6)), "amp": np.empty((3, 6)), "phase": np.empty((3, 6))}
    for i in range(3):
        params["freq"][i] = rng.uniform(0.5, 1.5, size=6)
        params["amp"][i] = rng.uniform(0.5, 1.0, size=6) * base * rng.uniform(0.75, 1.25, size=6) * amp_scale
        params["phase"][i] = rng.uniform(0.0, 2.0 * np.pi, size=6)
    return params


def gen_pose_trajectory(seed: int, style: int, clip_tag, num_frames: int, fps: float = 25.0) -> np.ndarray:
    """(num_frames, 6) style-keyed pose sequence: fixed per-style sinusoids
    plus a per-clip base offset and smoothed per-clip noise."""
    sp = _style_params(seed, style)
    rng = rng_for(seed, "clip", clip_tag)
    t = np.arange(num_frames) / fps
    traj = np.zeros((num_frames, 6))
    for i in range(3):
        traj += sp["amp"][i] * np.sin(2.0 * np.pi * np.outer(t, sp["freq"][i]) + sp["phase"][i])
    offset = np.concatenate([rng.uniform(-0.3, 0.3, size=3), rng.uniform(-0.1, 0.1, size=3)])
    white = rng.normal(size=(num_frames + 4, 6)) * np.concatenate([np.full(3, 0.01), np.full(3, 0.004)])
    kernel = np.ones(5) / 5.0
    smooth = np.stack([np.convolve(white[:, d], kernel, mode="valid") for d in range(6)], axis=1)
    traj = traj + offset + smooth
    traj[:, :3] = np.clip(traj[:, :3], -(np.pi / 2 - 1e-3), np.pi / 2 - 1e-3)
    return traj


def gen_pose_corpus(seed: int, num_styles: int = 46, clips_per_style: int = 2,
                    num_frames: int = 32, fps: float = 25.0) -> tuple[np.ndarray, np.ndarray]:
    """All clips' pose sequences: (num_styles*clips_per_style, T, 6) plus
    the per-clip style index array."""
    clips = []
    styles = []
    for s in range(num_styles):
        for c in range(clips_per_style):
            clip_id = s * clips_per_style + c
            clips.append(gen_pose_trajectory(seed, s, clip_id, num_frames, fps))
            styles.append(s)
    return np.stack(clips), np.array(styles, dtype=np.int64)


# Burst carriers come from a small fixed palette rather than a continuous
# range: the mel windows then live near a low-dimensional set of spectral
# patterns, which keeps the teacher within reach of a small encoder.
_CARRIER_HZ = (300.0, 700.0, 1200.0, 2000.0, 3000.0)


def gen_audio_for_clip(seed: int, num_frames: int, fps: float = 25.0) -> audio_mod.Waveform:
    """Seeded amplitude-modulated tone bursts covering num_frames / fps
    seconds at 16 kHz."""
    rng = rng_for(seed, "clip-audio")
    n = int(round(num_frames / fps * audio_mod.RATE))
    duration = n / audio_mod.RATE
    x = rng.normal(scale=0.002, size=n)
    num_bursts = max(3, int(round(duration * 6)))
    for _ in range(num_bursts):
        onset = rng.uniform(0.0, max(duration - 0.05, 0.01))
        length = int(rng.uniform(0.05, 0.2) * audio_mod.RATE)
        s = int(onset * audio_mod.RATE)
        length = min(length, n - s)
        if length < 8:
            continue
        tt = np.arange(length) / audio_mod.RATE
        freq = _CARRIER_HZ[rng.integers(0, len(_CARRIER_HZ))]
        carrier = np.sin(2.0 * np.pi * freq * tt + rng.uniform(0, 2 * np.pi))
        x[s:s + length] += rng.uniform(0.3, 0.9) * np.hanning(length) * carrier
    peak = np.abs(x).max()
    if peak > 0.95:
        x = x * (0.95 / peak)
    return audio_mod.Waveform(samples=x)


# ---------------------------------------------------------------------------
# corpus on disk


@dataclass(frozen=True)
class CorpusClip:
    clip_id: str
    style: int
    num_frames: int
    wav_path: Path
    poses_path: Path
    teacher_path: Path


def build_corpus(config, out_dir) -> list[CorpusClip]:
    """Generate the full synthetic corpus into out_dir and write manifest.csv.

    Per clip: WAV audio, a (T, 6) pose COEF, and a (T, 64) teacher
    expression COEF produced by the lip oracle on the clip's mel windows.
    """
    from .coefio import write_coef

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    oracle = gen_lip_oracle(config.seed)
    poses, styles = gen_pose_corpus(config.seed, config.num_styles, config.clips_per_style,
                                    config.frames_per_clip, config.fps)
    clips = []
    for idx in range(poses.shape[0]):
        clip_id = f"clip_{idx:04d}"
        wav_path = out / f"{clip_id}.wav"
        poses_path = out / f"{clip_id}.poses.coef"
        teacher_path = out / f"{clip_id}.teacher.coef"
        wave = gen_audio_for_clip(derive_seed(config.seed, "audio", idx), config.frames_per_clip, config.fps)
        scipy.io.wavfile.write(wav_path, audio_mod.RATE, wave.samples.astype(np.float32))
        mel = audio_mod.mel_spectrogram(wave)
        windows = audio_mod.frame_windows(mel, config.frames_per_clip, config.fps)
        write_coef(teacher_path, teacher_beta(oracle, windows))
        write_coef(poses_path, poses[idx])
        clips.append(CorpusClip(clip_id=clip_id, style=int(styles[idx]), num_frames=config.frames_per_clip,
                                wav_path=wav_path, poses_path=poses_path, teacher_path=teacher_path))
    with open(out / "manifest.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["clip_id", "style", "frames", "wav", "poses", "teacher"])
        for c in clips:
            writer.writerow([c.clip_id, c.style, c.num_frames, c.wav_path.name, c.poses_path.name, c.teacher_path.name])
    return clips


@dataclass
class LoadedCorpus:
    """In-memory corpus: windows (N, T, 16, 80), teacher (N, T, 64),
    poses (N, T, 6), styles (N,)."""

    windows: np.ndarray
    teacher: np.ndarray
    poses: np.ndarray
    styles: np.ndarray
    clip_ids: list
    wav_paths: list

    @property
    def num_clips(self) -> int:
        return self.windows.shape[0]


def load_corpus(corpus_dir, fps: float = 25.0) -> LoadedCorpus:
    """Read a corpus directory back, recomputing mel windows from the WAVs."""
    from .coefio import read_coef
    from .errors import FormatError

    root = Path(corpus_dir)
    manifest = root / "manifest.csv"
    if not manifest.exists():
        raise FormatError(f"{corpus_dir}: no manifest.csv, not a corpus directory")
    windows, teacher, poses, styles, ids, wavs = [], [], [], [], [], []
    with open(manifest, newline="") as f:
        for row in csv.DictReader(f):
            frames = int(row["frames"])
            wav = root / row["wav"]
            wave = audio_mod.ingest_wav(wav)
            mel = audio_mod.mel_spectrogram(wave)
            windows.append(audio_mod.frame_windows(mel, frames, fps))
            teacher.append(read_coef(root / row["teacher"]).astype(np.float64))
            poses.append(read_coef(root / row["poses"]).astype(np.float64))
            styles.append(int(row["style"]))
            ids.append(row["clip_id"])
            wavs.append(wav)
    return LoadedCorpus(windows=np.stack(windows), teacher=np.stack(teacher),
                        poses=np.stack(poses), styles=np.array(styles, dtype=np.int64),
                        clip_ids=ids, wav_paths=wavs)
