"""Shared fixtures: one synthetic corpus and one full training run per model,
plus a subprocess workspace exercising the command-line interface.

Heavy session-scoped fixtures are built lazily on first use, so cheap unit
tests stay cheap while convergence and post-training behavior tests share a
single training run per model.
"""

from __future__ import annotations

import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import scipy.io.wavfile
import torch

from sadcoeff import audio, synthdata, training
from sadcoeff.coefio import write_coef
from sadcoeff.config import RunConfig
from sadcoeff.expnet import ExpNet, train_expnet
from sadcoeff.kpmapper import KeypointMapper, train_mapper
from sadcoeff.posevae import PoseDiscriminator, PoseVAE, train_posevae
from sadcoeff.seeding import derive_seed

torch.set_num_threads(1)
os.environ.setdefault("SADCOEFF_THREADS", "1")

# Training fixtures use narrower audio-encoder channels than the reference
# config; everything else (corpus, step budgets, learning rates, loss
# weights) stays at the defaults.
TRAIN_ENC = (8, 16, 32, 64)


@pytest.fixture(scope="session")
def train_cfg() -> RunConfig:
    return RunConfig().replace(enc_channels=TRAIN_ENC)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory, train_cfg) -> Path:
    d = tmp_path_factory.mktemp("corpus")
    synthdata.build_corpus(train_cfg, d)
    return d


@pytest.fixture(scope="session")
def corpus(corpus_dir, train_cfg):
    return synthdata.load_corpus(corpus_dir, train_cfg.fps)


@pytest.fixture(scope="session")
def expnet_run(tmp_path_factory, train_cfg, corpus) -> dict:
    out = tmp_path_factory.mktemp("expnet_run")
    rows = train_expnet(train_cfg, corpus, out)
    model = ExpNet(train_cfg.enc_channels)
    arrays, step = training.load_checkpoint(out / "expnet")
    training.restore_model(model, arrays)
    model.eval()
    return {"rows": rows, "model": model, "out": out, "step": step}


@pytest.fixture(scope="session")
def posevae_run(tmp_path_factory, train_cfg, corpus) -> dict:
    out = tmp_path_factory.mktemp("posevae_run")
    rows = train_posevae(train_cfg, corpus, out)
    model = PoseVAE(train_cfg.latent_dim, train_cfg.hidden_dim, train_cfg.enc_channels)
    disc = PoseDiscriminator()
    arrays, step = training.load_checkpoint(out / "posevae")
    training.restore_model(model, arrays, "pvae")
    training.restore_model(disc, arrays, "disc")
    model.eval()
    return {"rows": rows, "model": model, "disc": disc, "out": out, "step": step}


@pytest.fixture(scope="session")
def mapper_run(tmp_path_factory, train_cfg, corpus) -> dict:
    out = tmp_path_factory.mktemp("mapper_run")
    rows = train_mapper(train_cfg, corpus, out)
    model = KeypointMapper(train_cfg.mapper_channels, train_cfg.num_keypoints)
    arrays, step = training.load_checkpoint(out / "mapper")
    training.restore_model(model, arrays)
    model.eval()
    return {"rows": rows, "model": model, "out": out, "step": step}


# ---------------------------------------------------------------------------
# command-line workspace


CLI_CFG_TEXT = """\
# reduced run for command-line tests: full pipeline, small budgets
seed = 1234
num_styles = 6
clips_per_style = 1
frames_per_clip = 32
batch = 8
batch_posevae = 4
steps_expnet = 5
steps_posevae = 5
steps_mapper = 5
enc_channels = 4, 4, 8, 8
mapper_channels = 8, 8, 8
num_keypoints = 5
"""


def run_cli(*args, check: bool = True) -> subprocess.CompletedProcess:
    """Run the command-line entry point in a subprocess."""
    cmd = [sys.executable, "-c",
           "import sys; from sadcoeff.cli import main; sys.exit(main())"]
    cmd += [str(a) for a in args]
    env = dict(os.environ, SADCOEFF_THREADS="1")
    proc = subprocess.run(cmd, capture_output=True, text=True, env=env)
    if check and proc.returncode != 0:
        raise AssertionError(
            f"cli {args} failed with rc={proc.returncode}\n"
            f"stdout:\n{proc.stdout}\nstderr:\n{proc.stderr}")
    return proc


@pytest.fixture(scope="session")
def cli_ws(tmp_path_factory) -> dict:
    """Workspace with a corpus, trained checkpoints, and one generated clip,
    all produced through the command-line interface.

    The driving audio is exactly one second long, so generated artifacts
    should hold exactly 25 frames at the default 25 fps.
    """
    ws = tmp_path_factory.mktemp("cli_ws")
    cfg_path = ws / "run.cfg"
    cfg_path.write_text(CLI_CFG_TEXT, encoding="utf-8")
    corpus = ws / "corpus"
    ckpt = ws / "ckpt"
    gen1 = ws / "gen1"

    run_cli("datagen", "--config", cfg_path, "--out", corpus)
    for stage in ("expnet", "posevae", "mapper"):
        run_cli(f"train-{stage}", "--config", cfg_path, "--corpus", corpus, "--out", ckpt)

    wave = synthdata.gen_audio_for_clip(derive_seed(1234, "cli-drive"), 25, 25.0)
    wav_path = ws / "drive.wav"
    scipy.io.wavfile.write(wav_path, audio.RATE, wave.samples.astype(np.float32))

    ref = np.zeros((1, 70), dtype=np.float32)
    ref[0, 66] = 0.05  # mild reference translation so the anchor is visible
    ref_path = ws / "ref.coef"
    write_coef(ref_path, ref)

    run_cli("generate", "--config", cfg_path, "--wav", wav_path, "--ref", ref_path,
            "--style", 2, "--blink", "auto", "--checkpoints", ckpt, "--out", gen1)
    return {"ws": ws, "cfg": cfg_path, "corpus": corpus, "ckpt": ckpt,
            "gen1": gen1, "wav": wav_path, "ref": ref_path}
