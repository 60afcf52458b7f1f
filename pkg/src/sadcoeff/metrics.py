"""Motion quality metrics.

Pure, deterministic functions over pose sequences, beat-time sets, and
landmark sequences: spread of head motion across a set of generated
sequences, alignment of motion rests to audio onsets, and how faithfully
a blink control signal survives into the rendered eye landmarks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .core3dmm import eye_ratio_points
from .errors import ConfigError, DegenerateInputError, DimensionError

POSE_DIM = 6
MIN_BEAT_GAP_S = 0.1


@dataclass(frozen=True)
class BeatAlignConfig:
    """Width of the alignment kernel, in seconds."""

    sigma: float = 0.1

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError(f"beat alignment sigma must be positive, got {self.sigma}")


def pose_diversity(sequences) -> float:
    """Mean over the six pose dimensions of the population standard
    deviation pooled across every (sequence, frame) pair.

    All sequences must share one shape (T, 6) and there must be at least
    two of them; identical constant sequences give exactly 0.
    """
    seqs = [np.asarray(s, dtype=np.float64) for s in sequences]
    if len(seqs) < 2:
        raise DimensionError(f"pose diversity needs >= 2 sequences, got {len(seqs)}")
    shape = seqs[0].shape
    if len(shape) != 2 or shape[1] != POSE_DIM:
        raise DimensionError(f"pose sequences must be (T, {POSE_DIM}), got {shape}")
    for s in seqs[1:]:
        if s.shape != shape:
            raise DimensionError(f"pose sequences differ in shape: {shape} vs {s.shape}")
    pooled = np.concatenate(seqs, axis=0)           # (N*T, 6)
    # correctly-rounded sums make the result independent of sequence order
    stds = []
    for d in range(POSE_DIM):
        col = pooled[:, d]
        mean = math.fsum(col) / col.size
        stds.append(math.sqrt(math.fsum((col - mean) ** 2) / col.size))
    return math.fsum(stds) / POSE_DIM


def motion_beats(seq, fps: float) -> np.ndarray:
    """Rest instants of a pose sequence, in seconds, strictly increasing.

    Frame-to-frame speed s_t = |rho_{t+1} - rho_t|_2 is scanned for local
    minima dipping below mean - 0.5 std; each sits between two frames, at
    time (t + 0.5) / fps.  Of any cluster closer than 100 ms, only the
    deepest minimum survives.  A constant sequence has no beats.
    """
    s = np.asarray(seq, dtype=np.float64)
    if s.ndim != 2 or s.shape[1] != POSE_DIM:
        raise DimensionError(f"pose sequence must be (T, {POSE_DIM}), got {s.shape}")
    if s.shape[0] < 3:
        raise DimensionError(f"motion beats need >= 3 frames, got {s.shape[0]}")
    if not fps > 0:
        raise DimensionError(f"fps must be positive, got {fps}")
    speed = np.linalg.norm(np.diff(s, axis=0), axis=1)
    thr = speed.mean() - 0.5 * speed.std()
    dips = [t for t in range(1, speed.size - 1)
            if speed[t] < thr and speed[t] < speed[t - 1] and speed[t] <= speed[t + 1]]
    dips.sort(key=lambda t: (speed[t], t))
    kept: list[int] = []
    min_gap = MIN_BEAT_GAP_S * fps
    for t in dips:
        if all(abs(t - k) >= min_gap for k in kept):
            kept.append(t)
    return np.array(sorted((t + 0.5) / fps for t in kept), dtype=np.float64)


def beat_align(audio_beats, motion_beats, cfg: BeatAlignConfig = BeatAlignConfig()) -> float:
    """Mean Gaussian affinity of each audio beat to its nearest motion
    beat: (1/|A|) sum_a exp(-min_m (a - m)^2 / (2 sigma^2)).

    Perfectly coincident beat sets score exactly 1; an empty audio set, or
    an empty motion set against a non-empty audio set, scores 0.
    """
    a = np.asarray(audio_beats, dtype=np.float64).reshape(-1)
    m = np.asarray(motion_beats, dtype=np.float64).reshape(-1)
    if a.size == 0 or m.size == 0:
        return 0.0
    d2 = np.min((a[:, None] - m[None, :]) ** 2, axis=1)
    return float(np.mean(np.exp(-d2 / (2.0 * cfg.sigma ** 2))))


def blink_recovery(pred_lms, blink) -> float:
    """Pearson correlation between the per-frame eye open/close ratio of a
    landmark sequence (T, 68, 2) and a blink control signal (T,).

    Either series being constant makes the correlation undefined and is
    rejected rather than silently returning NaN.
    """
    lms = np.asarray(pred_lms, dtype=np.float64)
    z = np.asarray(blink, dtype=np.float64).reshape(-1)
    if lms.ndim != 3 or lms.shape[1:] != (68, 2):
        raise DimensionError(f"landmark sequence must be (T, 68, 2), got {lms.shape}")
    if lms.shape[0] != z.size:
        raise DimensionError(f"landmark and blink lengths differ: {lms.shape[0]} vs {z.size}")
    if z.size < 3:
        raise DimensionError(f"blink recovery needs >= 3 frames, got {z.size}")
    ratios = eye_ratio_points(torch.as_tensor(lms)).numpy()
    rc = ratios - ratios.mean()
    zc = z - z.mean()
    rn, zn = np.linalg.norm(rc), np.linalg.norm(zc)
    if rn == 0.0 or zn == 0.0:
        raise DegenerateInputError("constant series, blink correlation undefined")
    return float(np.dot(rc, zc) / (rn * zn))
