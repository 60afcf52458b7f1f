"""Blendshape face model: coefficient containers, shape assembly, rigid pose,
orthographic landmark projection, and eye-opening geometry.

Conventions fixed here and relied on everywhere else:

* A full motion state is 70 numbers: 64 expression coefficients followed by
  6 pose numbers (Euler angles yaw, pitch, roll in radians, then a 3-D
  translation).  Inputs of length 73 (a layout that appends 3 alignment
  coefficients) are rejected explicitly.
* Rotations compose as ``R = Rz(roll) @ Ry(yaw) @ Rx(pitch)`` with
  right-handed elementary rotations; points are rows, transformed as
  ``p @ R.T + t``.
* Projection is orthographic: drop z, keep (x, y) at unit scale.
* 68-point landmark layout: 0-35 jaw/brows/nose, 36-47 eyes, 48-67 mouth.

All operations are written in torch and are differentiable wherever that is
meaningful; containers default to float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import DegenerateGeometryError, DimensionError

ID_DIM = 80
EXP_DIM = 64
POSE_DIM = 6
COEFF_DIM = EXP_DIM + POSE_DIM  # 70
NUM_LANDMARKS = 68

# landmark index sets
EYE_LANDMARKS = tuple(range(36, 48))
MOUTH_LANDMARKS = tuple(range(48, 68))
NON_EYE_LANDMARKS = tuple(range(0, 36)) + MOUTH_LANDMARKS

# expression-coefficient sub-spaces used by the synthetic landmark models
LIP_COEFF_INDICES = tuple(range(0, 16))
EYE_COEFF_INDICES = tuple(range(16, 20))


def _to_tensor(x, name: str, shape: tuple) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        t = x if x.is_floating_point() else x.to(torch.float64)
    else:
        t = torch.as_tensor(np.asarray(x), dtype=torch.float64)
    if tuple(t.shape) != shape:
        raise DimensionError(f"{name}: expected shape {shape}, got {tuple(t.shape)}")
    if not bool(torch.isfinite(t.detach()).all()):
        raise ValueError(f"{name}: non-finite entries")
    return t


@dataclass(frozen=True)
class IdentityCoeffs:
    alpha: torch.Tensor

    def __post_init__(self):
        object.__setattr__(self, "alpha", _to_tensor(self.alpha, "alpha", (ID_DIM,)))


@dataclass(frozen=True)
class ExpressionCoeffs:
    beta: torch.Tensor

    def __post_init__(self):
        object.__setattr__(self, "beta", _to_tensor(self.beta, "beta", (EXP_DIM,)))


@dataclass(frozen=True)
class PoseCoeffs:
    """rot = (yaw, pitch, roll) radians; trans = (tx, ty, tz)."""

    rot: torch.Tensor
    trans: torch.Tensor

    def __post_init__(self):
        object.__setattr__(self, "rot", _to_tensor(self.rot, "rot", (3,)))
        object.__setattr__(self, "trans", _to_tensor(self.trans, "trans", (3,)))

    def as_vector(self) -> torch.Tensor:
        return torch.cat([self.rot, self.trans])

    @classmethod
    def from_vector(cls, vec) -> "PoseCoeffs":
        v = _to_tensor(vec, "pose vector", (POSE_DIM,))
        return cls(rot=v[:3], trans=v[3:])


@dataclass(frozen=True)
class MotionCoeffs:
    """Expression plus pose; concatenates to the canonical 70-vector."""

    exp: ExpressionCoeffs
    pose: PoseCoeffs

    def as_vector(self) -> torch.Tensor:
        return torch.cat([self.exp.beta, self.pose.as_vector()])

    @classmethod
    def from_vector(cls, vec) -> "MotionCoeffs":
        v = torch.as_tensor(np.asarray(vec)) if not isinstance(vec, torch.Tensor) else vec
        if v.ndim != 1:
            raise DimensionError(f"motion vector must be 1-D, got shape {tuple(v.shape)}")
        if v.shape[0] == 73:
            raise DimensionError(
                "motion vector of length 73 looks like a layout with 3 trailing "
                "alignment coefficients; this pipeline works on 70 numbers "
                "(64 expression + 3 rotation + 3 translation) and does not "
                "accept alignment coefficients"
            )
        if v.shape[0] != COEFF_DIM:
            raise DimensionError(f"motion vector must have length {COEFF_DIM}, got {v.shape[0]}")
        v = _to_tensor(v, "motion vector", (COEFF_DIM,))
        return cls(exp=ExpressionCoeffs(v[:EXP_DIM]), pose=PoseCoeffs(rot=v[EXP_DIM:EXP_DIM + 3], trans=v[EXP_DIM + 3:]))


@dataclass(frozen=True)
class BlendshapeModel:
    """Dense shape model: mean (V,3), identity basis (V,3,80), expression basis (V,3,64)."""

    mean: torch.Tensor
    id_basis: torch.Tensor
    exp_basis: torch.Tensor

    def __post_init__(self):
        mean = self.mean if isinstance(self.mean, torch.Tensor) else torch.as_tensor(np.asarray(self.mean), dtype=torch.float64)
        if mean.ndim != 2 or mean.shape[1] != 3:
            raise DimensionError(f"mean shape must be (V, 3), got {tuple(mean.shape)}")
        v = mean.shape[0]
        object.__setattr__(self, "mean", _to_tensor(mean, "mean", (v, 3)))
        object.__setattr__(self, "id_basis", _to_tensor(self.id_basis, "id_basis", (v, 3, ID_DIM)))
        object.__setattr__(self, "exp_basis", _to_tensor(self.exp_basis, "exp_basis", (v, 3, EXP_DIM)))

    @property
    def num_vertices(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class BlendshapeLandmarkModel:
    """68-point landmark model driven by the 64 expression coefficients.

    ``basis[:, :, k]`` is the displacement field of coefficient k.  The eye
    coefficients (16..19) displace only eye landmarks and only along y, in
    lid-opposing directions; the lip coefficients (0..15) displace only
    mouth landmarks; the remaining coefficients displace only landmarks
    0..35.
    """

    mean: torch.Tensor
    basis: torch.Tensor
    lip_indices: tuple = LIP_COEFF_INDICES
    eye_indices: tuple = EYE_COEFF_INDICES

    def __post_init__(self):
        object.__setattr__(self, "mean", _to_tensor(self.mean, "mean", (NUM_LANDMARKS, 3)))
        object.__setattr__(self, "basis", _to_tensor(self.basis, "basis", (NUM_LANDMARKS, 3, EXP_DIM)))
        object.__setattr__(self, "lip_indices", tuple(int(i) for i in self.lip_indices))
        object.__setattr__(self, "eye_indices", tuple(int(i) for i in self.eye_indices))
        if set(self.lip_indices) & set(self.eye_indices):
            raise ValueError("lip and eye coefficient index sets must be disjoint")


@dataclass(frozen=True)
class Landmarks2D:
    """68 projected points, (x, y) rows.  Carries gradients when built from
    tensors that require them."""

    points: torch.Tensor

    def __post_init__(self):
        object.__setattr__(self, "points", _to_tensor(self.points, "points", (NUM_LANDMARKS, 2)))


# ---------------------------------------------------------------------------
# operations


def assemble_shape(model: BlendshapeModel, identity: IdentityCoeffs, expression: ExpressionCoeffs) -> torch.Tensor:
    """S = mean + id_basis . alpha + exp_basis . beta, shape (V, 3)."""
    dtype = model.mean.dtype
    alpha = identity.alpha.to(dtype)
    beta = expression.beta.to(dtype)
    return model.mean + torch.einsum("vck,k->vc", model.id_basis, alpha) + torch.einsum("vck,k->vc", model.exp_basis, beta)


def euler_to_rotation(rot: torch.Tensor) -> torch.Tensor:
    """(yaw, pitch, roll) -> 3x3 rotation, R = Rz(roll) @ Ry(yaw) @ Rx(pitch)."""
    if not isinstance(rot, torch.Tensor):
        rot = torch.as_tensor(np.asarray(rot), dtype=torch.float64)
    if rot.shape != (3,):
        raise DimensionError(f"rot must have shape (3,), got {tuple(rot.shape)}")
    yaw, pitch, roll = rot[0], rot[1], rot[2]
    one = torch.ones((), dtype=rot.dtype)
    zero = torch.zeros((), dtype=rot.dtype)
    cy, sy = torch.cos(yaw), torch.sin(yaw)
    cp, sp = torch.cos(pitch), torch.sin(pitch)
    cr, sr = torch.cos(roll), torch.sin(roll)
    ry = torch.stack([cy, zero, sy, zero, one, zero, -sy, zero, cy]).reshape(3, 3)
    rx = torch.stack([one, zero, zero, zero, cp, -sp, zero, sp, cp]).reshape(3, 3)
    rz = torch.stack([cr, -sr, zero, sr, cr, zero, zero, zero, one]).reshape(3, 3)
    return rz @ ry @ rx


def rigid_transform(points: torch.Tensor, pose: PoseCoeffs) -> torch.Tensor:
    """Rotate-then-translate rows of (N, 3) points."""
    if points.ndim != 2 or points.shape[1] != 3:
        raise DimensionError(f"points must be (N, 3), got {tuple(points.shape)}")
    rmat = euler_to_rotation(pose.rot.to(points.dtype))
    return points @ rmat.T + pose.trans.to(points.dtype)


def project_landmarks(lmodel: BlendshapeLandmarkModel, motion: MotionCoeffs) -> Landmarks2D:
    """Deform the landmark model by the expression, pose it, drop z."""
    pts3 = lmodel.mean + torch.einsum("vck,k->vc", lmodel.basis, motion.exp.beta.to(lmodel.mean.dtype))
    pts3 = rigid_transform(pts3, motion.pose)
    return Landmarks2D(points=pts3[:, :2])


def landmarks_from_beta(mean: torch.Tensor, basis: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
    """Batched pose-free projection: beta (..., 64) -> landmarks (..., 68, 2).

    Raw-tensor path used inside training losses; ``mean``/``basis`` must
    already be on the wanted dtype.
    """
    disp = torch.einsum("vck,...k->...vc", basis, beta)
    return (mean + disp)[..., :2]


def eye_ratio_points(points: torch.Tensor) -> torch.Tensor:
    """Eye open/close ratio of (..., 68, 2) landmark tensors.

    width  = (|P39-P36| + |P45-P42|) / 2
    height = |P37+P38-P40-P41| / 2 + |P43+P44-P46-P47| / 2
    ratio  = height / width
    """
    p = points
    width = (torch.linalg.vector_norm(p[..., 39, :] - p[..., 36, :], dim=-1)
             + torch.linalg.vector_norm(p[..., 45, :] - p[..., 42, :], dim=-1)) / 2
    h1 = torch.linalg.vector_norm(p[..., 37, :] + p[..., 38, :] - p[..., 40, :] - p[..., 41, :], dim=-1) / 2
    h2 = torch.linalg.vector_norm(p[..., 43, :] + p[..., 44, :] - p[..., 46, :] - p[..., 47, :], dim=-1) / 2
    return (h1 + h2) / width


def eye_ratio(landmarks: Landmarks2D) -> torch.Tensor:
    """Scalar eye ratio of one landmark set; 0-width eyes are an error."""
    p = landmarks.points
    width = (torch.linalg.vector_norm(p[39] - p[36]) + torch.linalg.vector_norm(p[45] - p[42])) / 2
    if float(width.detach()) == 0.0:
        raise DegenerateGeometryError("eye corner width is zero, eye ratio undefined")
    return eye_ratio_points(p)
