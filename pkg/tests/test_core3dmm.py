"""Shape assembly, rotations, projection, and eye-geometry math."""

from __future__ import annotations

import numpy as np
import pytest
import torch

from sadcoeff.core3dmm import (
    COEFF_DIM,
    EXP_DIM,
    ID_DIM,
    BlendshapeModel,
    ExpressionCoeffs,
    IdentityCoeffs,
    Landmarks2D,
    MotionCoeffs,
    PoseCoeffs,
    assemble_shape,
    euler_to_rotation,
    eye_ratio,
    eye_ratio_points,
    landmarks_from_beta,
    project_landmarks,
    rigid_transform,
)
from sadcoeff.errors import DegenerateGeometryError, DimensionError
from sadcoeff.seeding import rng_for
from sadcoeff.synthdata import gen_blendshape_model, gen_landmark_model


def _random_model(rng, num_vertices: int = 5) -> BlendshapeModel:
    return BlendshapeModel(
        mean=rng.normal(size=(num_vertices, 3)),
        id_basis=rng.normal(size=(num_vertices, 3, ID_DIM)),
        exp_basis=rng.normal(size=(num_vertices, 3, EXP_DIM)),
    )


def _assemble_oracle(model: BlendshapeModel, alpha, beta) -> np.ndarray:
    mean = model.mean.numpy()
    idb = model.id_basis.numpy()
    expb = model.exp_basis.numpy()
    out = np.array(mean, dtype=np.float64, copy=True)
    for v in range(mean.shape[0]):
        for c in range(3):
            acc = 0.0
            for k in range(ID_DIM):
                acc += idb[v, c, k] * alpha[k]
            for k in range(EXP_DIM):
                acc += expb[v, c, k] * beta[k]
            out[v, c] += acc
    return out


# ---------------------------------------------------------------------------
# shape assembly


def test_assemble_zero_coefficients_returns_mean():
    model = _random_model(rng_for(31, "assemble-zero"))
    s = assemble_shape(model, IdentityCoeffs(np.zeros(ID_DIM)), ExpressionCoeffs(np.zeros(EXP_DIM)))
    np.testing.assert_array_equal(s.numpy(), model.mean.numpy())


def test_assemble_unit_coefficient_adds_one_basis_column():
    model = _random_model(rng_for(31, "assemble-unit"))
    for k in (0, 7, 63):
        beta = np.zeros(EXP_DIM)
        beta[k] = 1.0
        s = assemble_shape(model, IdentityCoeffs(np.zeros(ID_DIM)), ExpressionCoeffs(beta))
        expect = model.mean.numpy() + model.exp_basis.numpy()[:, :, k]
        np.testing.assert_allclose(s.numpy(), expect, rtol=0, atol=1e-12)
    for k in (0, 79):
        alpha = np.zeros(ID_DIM)
        alpha[k] = 1.0
        s = assemble_shape(model, IdentityCoeffs(alpha), ExpressionCoeffs(np.zeros(EXP_DIM)))
        expect = model.mean.numpy() + model.id_basis.numpy()[:, :, k]
        np.testing.assert_allclose(s.numpy(), expect, rtol=0, atol=1e-12)


def test_assemble_is_linear_in_the_coefficients():
    rng = rng_for(31, "assemble-linear")
    model = _random_model(rng)
    a1, a2 = rng.normal(size=(2, ID_DIM))
    b1, b2 = rng.normal(size=(2, EXP_DIM))
    s_sum = assemble_shape(model, IdentityCoeffs(a1 + a2), ExpressionCoeffs(b1 + b2)).numpy()
    s1 = assemble_shape(model, IdentityCoeffs(a1), ExpressionCoeffs(b1)).numpy()
    s2 = assemble_shape(model, IdentityCoeffs(a2), ExpressionCoeffs(b2)).numpy()
    np.testing.assert_allclose(s_sum, s1 + s2 - model.mean.numpy(), rtol=0, atol=1e-10)


def test_assemble_matches_triple_loop_oracle():
    rng = rng_for(31, "assemble-oracle")
    for _ in range(5):
        model = _random_model(rng, num_vertices=4)
        alpha = rng.normal(size=ID_DIM)
        beta = rng.normal(size=EXP_DIM)
        got = assemble_shape(model, IdentityCoeffs(alpha), ExpressionCoeffs(beta)).numpy()
        want = _assemble_oracle(model, alpha, beta)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


def test_dense_model_generator_normalizes_basis_columns():
    model = gen_blendshape_model(17)
    assert model.num_vertices == 300
    for basis in (model.id_basis, model.exp_basis):
        norms = np.linalg.norm(basis.numpy().reshape(-1, basis.shape[-1]), axis=0)
        np.testing.assert_allclose(norms, 1.0, rtol=0, atol=1e-12)


# ---------------------------------------------------------------------------
# rotations and rigid motion


def test_zero_angles_give_identity():
    r = euler_to_rotation(torch.zeros(3, dtype=torch.float64))
    np.testing.assert_array_equal(r.numpy(), np.eye(3))


def test_single_axis_rotations_map_axes_as_documented():
    # yaw pi/2 swings +x to -z
    r = euler_to_rotation(torch.tensor([np.pi / 2, 0.0, 0.0], dtype=torch.float64))
    np.testing.assert_allclose(r.numpy() @ [1.0, 0.0, 0.0], [0.0, 0.0, -1.0], atol=1e-15)
    # pitch pi/2 swings +y to +z
    r = euler_to_rotation(torch.tensor([0.0, np.pi / 2, 0.0], dtype=torch.float64))
    np.testing.assert_allclose(r.numpy() @ [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], atol=1e-15)
    # roll pi/2 swings +x to +y
    r = euler_to_rotation(torch.tensor([0.0, 0.0, np.pi / 2], dtype=torch.float64))
    np.testing.assert_allclose(r.numpy() @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-15)


def test_rotation_composition_order_is_roll_yaw_pitch():
    rng = rng_for(31, "euler-order")
    for _ in range(10):
        yaw, pitch, roll = rng.uniform(-np.pi, np.pi, size=3)
        full = euler_to_rotation(torch.tensor([yaw, pitch, roll], dtype=torch.float64)).numpy()
        rz = euler_to_rotation(torch.tensor([0.0, 0.0, roll], dtype=torch.float64)).numpy()
        ry = euler_to_rotation(torch.tensor([yaw, 0.0, 0.0], dtype=torch.float64)).numpy()
        rx = euler_to_rotation(torch.tensor([0.0, pitch, 0.0], dtype=torch.float64)).numpy()
        np.testing.assert_allclose(full, rz @ ry @ rx, rtol=0, atol=1e-12)


def test_rotations_are_orthonormal_with_unit_determinant():
    rng = rng_for(31, "euler-orthonormal")
    eye = np.eye(3)
    for _ in range(1000):
        r = euler_to_rotation(torch.as_tensor(rng.uniform(-np.pi, np.pi, size=3))).numpy()
        np.testing.assert_allclose(r.T @ r, eye, rtol=0, atol=1e-12)
        assert abs(np.linalg.det(r) - 1.0) <= 1e-12


def test_rigid_transform_pure_translation():
    rng = rng_for(31, "rigid-translate")
    pts = torch.as_tensor(rng.normal(size=(9, 3)))
    t = np.array([0.5, -1.25, 2.0])
    pose = PoseCoeffs(rot=np.zeros(3), trans=t)
    np.testing.assert_allclose(rigid_transform(pts, pose).numpy(), pts.numpy() + t,
                               rtol=0, atol=1e-15)


def test_rigid_transform_preserves_pairwise_distances():
    rng = rng_for(31, "rigid-distance")
    pts = torch.as_tensor(rng.normal(size=(12, 3)))
    pose = PoseCoeffs(rot=rng.uniform(-1.0, 1.0, size=3), trans=rng.normal(size=3))
    moved = rigid_transform(pts, pose).numpy()
    d0 = np.linalg.norm(pts.numpy()[:, None] - pts.numpy()[None], axis=-1)
    d1 = np.linalg.norm(moved[:, None] - moved[None], axis=-1)
    np.testing.assert_allclose(d1, d0, rtol=0, atol=1e-10)


def test_rigid_transform_rotates_before_translating():
    pts = torch.tensor([[1.0, 0.0, 0.0]], dtype=torch.float64)
    pose = PoseCoeffs(rot=np.array([np.pi / 2, 0.0, 0.0]), trans=np.array([0.0, 0.0, 1.0]))
    # rotate first: (1,0,0) -> (0,0,-1), then translate -> (0,0,0);
    # translating first would land at (0, 0, -2) + ... anything but zero.
    np.testing.assert_allclose(rigid_transform(pts, pose).numpy(), [[0.0, 0.0, 0.0]], atol=1e-15)


def test_rigid_transform_validates_shape():
    with pytest.raises(DimensionError):
        rigid_transform(torch.zeros(5), PoseCoeffs(rot=np.zeros(3), trans=np.zeros(3)))


# ---------------------------------------------------------------------------
# landmark projection


def test_neutral_projection_returns_mean_xy():
    lmodel = gen_landmark_model(17)
    motion = MotionCoeffs.from_vector(np.zeros(COEFF_DIM))
    lms = project_landmarks(lmodel, motion)
    np.testing.assert_array_equal(lms.points.numpy(), lmodel.mean.numpy()[:, :2])


def test_eye_coefficient_moves_only_eye_landmarks_vertically():
    lmodel = gen_landmark_model(17)
    base = project_landmarks(lmodel, MotionCoeffs.from_vector(np.zeros(COEFF_DIM))).points.numpy()
    for k in (16, 17, 18, 19):
        vec = np.zeros(COEFF_DIM)
        vec[k] = 1.0
        moved = project_landmarks(lmodel, MotionCoeffs.from_vector(vec)).points.numpy()
        diff = moved - base
        outside = np.delete(diff, np.arange(36, 48), axis=0)
        np.testing.assert_array_equal(outside, 0.0)
        np.testing.assert_array_equal(diff[36:48, 0], 0.0)  # no x motion
        assert np.abs(diff[36:48, 1]).max() > 0.0


def test_batched_landmarks_match_single_projection():
    lmodel = gen_landmark_model(17)
    rng = rng_for(31, "landmarks-batch")
    betas = rng.normal(scale=0.5, size=(4, EXP_DIM))
    batched = landmarks_from_beta(lmodel.mean, lmodel.basis, torch.as_tensor(betas)).numpy()
    for i, beta in enumerate(betas):
        vec = np.concatenate([beta, np.zeros(6)])
        single = project_landmarks(lmodel, MotionCoeffs.from_vector(vec)).points.numpy()
        np.testing.assert_allclose(batched[i], single, rtol=0, atol=1e-12)


# ---------------------------------------------------------------------------
# eye geometry


def _golden_eye_points(height: float = 1.0) -> np.ndarray:
    """Hand-built landmark set: both eyes 4 wide; lids sit ``height`` above
    and below the corner line, so the open ratio is exactly ``height``."""
    pts = np.zeros((68, 2))
    h = height
    left = [(0, 0), (1, h), (3, h), (4, 0), (3, -h), (1, -h)]
    for i, (x, y) in enumerate(left):
        pts[36 + i] = (x, y)
        pts[42 + i] = (x + 10, y)
    return pts


def test_eye_golden_configuration_is_exact():
    pts = _golden_eye_points()
    p = torch.as_tensor(pts)
    width = (float(torch.linalg.vector_norm(p[39] - p[36]))
             + float(torch.linalg.vector_norm(p[45] - p[42]))) / 2
    h1 = float(torch.linalg.vector_norm(p[37] + p[38] - p[40] - p[41])) / 2
    h2 = float(torch.linalg.vector_norm(p[43] + p[44] - p[46] - p[47])) / 2
    assert width == 4.0
    assert h1 + h2 == 4.0
    assert float(eye_ratio(Landmarks2D(pts))) == 1.0


def test_closed_eyes_score_zero():
    pts = _golden_eye_points(height=0.0)
    assert float(eye_ratio(Landmarks2D(pts))) == 0.0


def test_eye_ratio_scale_invariance():
    pts = _golden_eye_points(height=0.625)
    base = float(eye_ratio(Landmarks2D(pts)))
    for c in (0.5, 2.0, 3.7):
        scaled = float(eye_ratio(Landmarks2D(pts * c)))
        np.testing.assert_allclose(scaled, base, rtol=1e-12)


def test_eye_ratio_rotation_invariance():
    pts = _golden_eye_points(height=0.625)
    base = float(eye_ratio(Landmarks2D(pts)))
    theta = 0.83
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    rotated = float(eye_ratio(Landmarks2D(pts @ rot.T)))
    np.testing.assert_allclose(rotated, base, rtol=1e-12)


def test_zero_eye_width_rejected():
    pts = np.zeros((68, 2))  # all corners coincide
    with pytest.raises(DegenerateGeometryError):
        eye_ratio(Landmarks2D(pts))


def test_eye_ratio_points_matches_scalar_path_batched():
    rng = rng_for(31, "eye-batch")
    frames = np.stack([_golden_eye_points(h) for h in rng.uniform(0.1, 1.0, size=6)])
    batched = eye_ratio_points(torch.as_tensor(frames)).numpy()
    singles = [float(eye_ratio(Landmarks2D(f))) for f in frames]
    np.testing.assert_allclose(batched, singles, rtol=0, atol=1e-15)


def test_eye_ratio_gradient_matches_finite_differences():
    lmodel = gen_landmark_model(17)
    rng = rng_for(31, "eye-gradient")
    step = 1e-6
    worst = 0.0
    for _ in range(100):
        beta = rng.normal(scale=0.4, size=EXP_DIM)
        rot = rng.uniform(-0.3, 0.3, size=3)
        trans = rng.normal(scale=0.2, size=3)
        k = int(rng.integers(0, EXP_DIM))

        def ratio_of(b):
            vec = torch.cat([b, torch.as_tensor(np.concatenate([rot, trans]))])
            return eye_ratio(project_landmarks(lmodel, MotionCoeffs.from_vector(vec)))

        b = torch.as_tensor(beta).clone().requires_grad_(True)
        (grad,) = torch.autograd.grad(ratio_of(b), b)
        bp, bm = beta.copy(), beta.copy()
        bp[k] += step
        bm[k] -= step
        fd = (float(ratio_of(torch.as_tensor(bp))) - float(ratio_of(torch.as_tensor(bm)))) / (2 * step)
        a = float(grad[k])
        rel = abs(a - fd) / max(abs(a), abs(fd), 1e-8)
        worst = max(worst, rel)
    assert worst < 1e-4, f"worst relative gradient error {worst:.3e}"


# ---------------------------------------------------------------------------
# coefficient containers


def test_motion_coeffs_round_trip():
    rng = rng_for(31, "motion-roundtrip")
    vec = rng.normal(size=COEFF_DIM)
    m = MotionCoeffs.from_vector(vec)
    np.testing.assert_array_equal(m.as_vector().numpy(), vec)
    np.testing.assert_array_equal(m.exp.beta.numpy(), vec[:64])
    np.testing.assert_array_equal(m.pose.rot.numpy(), vec[64:67])
    np.testing.assert_array_equal(m.pose.trans.numpy(), vec[67:])


def test_73_dim_vector_rejected_with_specific_message():
    with pytest.raises(DimensionError) as exc:
        MotionCoeffs.from_vector(np.zeros(73))
    msg = str(exc.value)
    assert "alignment" in msg
    assert "70" in msg


def test_other_bad_motion_vectors_rejected():
    with pytest.raises(DimensionError):
        MotionCoeffs.from_vector(np.zeros(69))
    with pytest.raises(DimensionError):
        MotionCoeffs.from_vector(np.zeros((2, 70)))


def test_pose_coeffs_round_trip_and_validation():
    vec = np.array([0.1, -0.2, 0.3, 1.0, 2.0, 3.0])
    p = PoseCoeffs.from_vector(vec)
    np.testing.assert_array_equal(p.as_vector().numpy(), vec)
    with pytest.raises(DimensionError):
        PoseCoeffs.from_vector(np.zeros(5))


def test_model_shape_validation():
    rng = rng_for(31, "model-validate")
    with pytest.raises(DimensionError):
        BlendshapeModel(mean=rng.normal(size=(5, 2)),
                        id_basis=rng.normal(size=(5, 3, ID_DIM)),
                        exp_basis=rng.normal(size=(5, 3, EXP_DIM)))
    with pytest.raises(DimensionError):
        BlendshapeModel(mean=rng.normal(size=(5, 3)),
                        id_basis=rng.normal(size=(5, 3, ID_DIM - 1)),
                        exp_basis=rng.normal(size=(5, 3, EXP_DIM)))
    with pytest.raises(DimensionError):
        Landmarks2D(points=np.zeros((67, 2)))
