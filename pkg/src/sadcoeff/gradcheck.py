"""Finite-difference verification of the three training objectives.

Each suite builds a tiny float64 model, nudges every parameter off its
init to a generic point (several inits zero whole layers, which would
turn the comparison into 0 vs 0), then compares autograd gradients with
central finite differences on a seeded sample of entries per parameter
group.  The per-group worst relative error must stay below 1e-3.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import synthdata
from .config import RunConfig
from .expnet import (MEL_CENTER, MEL_SCALE, ExpLossContext, ExpNet,
                     expnet_loss, init_expnet)
from .kpmapper import KeypointMapper, init_mapper, keypoint_l1, transform_points
from .posevae import NUM_STYLES, PoseVAE, init_posevae, pvae_loss
from .seeding import rng_for

TOLERANCE = 1e-3
TAU = 1e-6          # relative-error floor, absorbs zero-gradient entries
STEP = 1e-5         # central-difference step
SAMPLES = 16        # checked entries per parameter group
JITTER = 0.05

TINY_EXP_CHANNELS = (4, 4, 8, 8)
TINY_POSE_LATENT = 8
TINY_POSE_HIDDEN = 16
TINY_MAPPER_CHANNELS = (8, 8, 8)
TINY_MAPPER_KEYPOINTS = 3

MODULES = ("expnet", "posevae", "mapper")


@dataclass(frozen=True)
class GroupReport:
    """Worst sampled analytic-vs-numeric error for one parameter tensor."""

    module: str
    group: str
    max_rel_err: float

    @property
    def ok(self) -> bool:
        return self.max_rel_err < TOLERANCE

    def line(self) -> str:
        return f"{self.module}/{self.group}: max rel err {self.max_rel_err:.3e} {'ok' if self.ok else 'FAIL'}"


def _jitter(model: torch.nn.Module, seed: int, module: str) -> None:
    rng = rng_for(seed, "gradcheck-jitter", module)
    with torch.no_grad():
        for p in model.parameters():
            p.add_(torch.as_tensor(rng.normal(scale=JITTER, size=tuple(p.shape)), dtype=p.dtype))


def _check_groups(module: str, named_params, loss_fn, seed: int, corrupt=None):
    """Central finite differences against autograd, group by group."""
    names = [n for n, _ in named_params]
    params = [p for _, p in named_params]
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    reports = []
    for name, p, g in zip(names, params, grads):
        g = torch.zeros_like(p) if g is None else g
        if corrupt is not None and (corrupt == "*" or name.startswith(corrupt)):
            g = g * 1.5 + 1e-3   # the negative-control hook: a wrong gradient
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        rng = rng_for(seed, "gradcheck-entries", module, name)
        picks = rng.choice(flat.numel(), size=min(SAMPLES, flat.numel()), replace=False)
        worst = 0.0
        for i in sorted(int(i) for i in picks):
            orig = float(flat[i])
            with torch.no_grad():
                flat[i] = orig + STEP
                lp = float(loss_fn())
                flat[i] = orig - STEP
                lm = float(loss_fn())
                flat[i] = orig
            fd = (lp - lm) / (2.0 * STEP)
            a = float(gflat[i])
            worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), TAU))
        reports.append(GroupReport(module=module, group=name, max_rel_err=worst))
    return reports


def check_expnet(seed: int, corrupt=None):
    cfg = RunConfig()
    model = ExpNet(TINY_EXP_CHANNELS).double()
    init_expnet(model, seed)
    _jitter(model, seed, "expnet")
    lmodel = synthdata.gen_landmark_model(seed)
    ctx = ExpLossContext.build(lmodel, synthdata.gen_reading_oracle(seed, lmodel), dtype=torch.float64)
    rng = rng_for(seed, "gradcheck-data", "expnet")
    batch = {
        "windows": torch.as_tensor(MEL_CENTER + MEL_SCALE * rng.normal(size=(2, 5, 16, 80))),
        "teacher": torch.as_tensor(0.1 * rng.normal(size=(2, 5, 64))),
        "beta0": torch.as_tensor(0.1 * rng.normal(size=(2, 64))),
        "blink": torch.as_tensor(rng.uniform(size=(2, 5))),
    }
    return _check_groups("expnet", list(model.named_parameters()),
                         lambda: expnet_loss(model, batch, ctx, cfg)[0], seed, corrupt)


def check_posevae(seed: int, corrupt=None):
    cfg = RunConfig().replace(lambda_gan=0.0)
    model = PoseVAE(latent_dim=TINY_POSE_LATENT, hidden_dim=TINY_POSE_HIDDEN,
                    enc_channels=TINY_EXP_CHANNELS).double()
    init_posevae(model, seed)
    _jitter(model, seed, "posevae")
    rng = rng_for(seed, "gradcheck-data", "posevae")
    style = np.zeros((2, NUM_STYLES))
    style[np.arange(2), rng.integers(0, NUM_STYLES, size=2)] = 1.0
    batch = {
        "offsets": torch.as_tensor(0.2 * rng.normal(size=(2, 32, 6))),
        "style": torch.as_tensor(style),
        "windows": torch.as_tensor(MEL_CENTER + MEL_SCALE * rng.normal(size=(2, 3, 16, 80))),
    }
    noise = torch.as_tensor(rng.normal(size=(2, TINY_POSE_LATENT)))
    return _check_groups("posevae", list(model.named_parameters()),
                         lambda: pvae_loss(model, None, batch, cfg, noise)[0], seed, corrupt)


def check_mapper(seed: int, corrupt=None):
    cfg = RunConfig()
    model = KeypointMapper(TINY_MAPPER_CHANNELS, TINY_MAPPER_KEYPOINTS).double()
    init_mapper(model, seed)
    _jitter(model, seed, "mapper")
    oracle = synthdata.gen_keypoint_oracle(seed, TINY_MAPPER_KEYPOINTS)
    xc = torch.as_tensor(synthdata.gen_canonical_keypoints(seed, TINY_MAPPER_KEYPOINTS))
    rng = rng_for(seed, "gradcheck-data", "mapper")
    windows = 0.3 * rng.normal(size=(4, 5, 70))
    t_rot, t_trans, t_delta = oracle.motion(windows)
    target = transform_points(xc, torch.as_tensor(t_rot), torch.as_tensor(t_trans),
                              torch.as_tensor(t_delta))
    win_t = torch.as_tensor(windows)

    def loss_fn():
        rot, trans, delta = model(win_t)
        return cfg.lambda_kp * keypoint_l1(transform_points(xc, rot, trans, delta), target)

    return _check_groups("mapper", list(model.named_parameters()), loss_fn, seed, corrupt)


_CHECKS = {"expnet": check_expnet, "posevae": check_posevae, "mapper": check_mapper}


def run_gradcheck(module=None, seed: int = 1234, corrupt=None):
    """Run one module's suite (or all three) and collect the reports.

    Returns (reports, all_ok); each parameter group appears exactly once.
    """
    if module is not None and module not in _CHECKS:
        raise ValueError(f"unknown gradcheck module {module!r}, pick one of {MODULES}")
    chosen = (module,) if module is not None else MODULES
    reports = []
    for name in chosen:
        reports.extend(_CHECKS[name](seed, corrupt))
    return reports, all(r.ok for r in reports)
