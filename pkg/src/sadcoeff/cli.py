"""Command-line pipeline: corpus generation, the three trainers, audio-to-
keypoint generation, metric evaluation, and gradient checking.

Every subcommand is deterministic given (config, seed); rerunning writes
byte-identical artifacts.  ``SADCOEFF_THREADS`` caps math-library
parallelism (default 1, the reproducible setting).
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import audio as audio_mod
from . import gradcheck as gradcheck_mod
from . import kpmapper, metrics, synthdata
from .coefio import read_coef, write_coef
from .config import RunConfig
from .core3dmm import COEFF_DIM, EXP_DIM, MotionCoeffs, eye_ratio_points, landmarks_from_beta
from .errors import ConfigError, DegenerateInputError, DimensionError, EmptyInputError
from .expnet import ExpNet, expnet_forward, init_expnet, train_expnet
from .kpmapper import KeypointMapper, train_mapper
from .posevae import PoseVAE, sample_poses, train_posevae
from .seeding import rng_for
from .training import load_checkpoint, restore_model

BLINK_PULSE_FRAMES = 3


def _setup_threads() -> None:
    torch.set_num_threads(max(1, int(os.environ.get("SADCOEFF_THREADS", "1"))))


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


# ---------------------------------------------------------------------------
# subcommands


def cmd_datagen(args, cfg) -> int:
    clips = synthdata.build_corpus(cfg, args.out)
    styles = len({c.style for c in clips})
    print(f"wrote {len(clips)} clips ({styles} styles, {cfg.frames_per_clip} frames each) to {args.out}")
    return 0


def cmd_train(stage: str, args, cfg) -> int:
    corpus = synthdata.load_corpus(args.corpus, cfg.fps)
    trainer = {"expnet": train_expnet, "posevae": train_posevae, "mapper": train_mapper}[stage]
    rows = trainer(cfg, corpus, args.out, resume_from=args.resume)
    last = rows[-1] if rows else {"step": -1, "loss": float("nan")}
    print(f"{stage}: {len(rows)} steps, final loss {last['loss']:.6g} -> {args.out}")
    return 0


def blink_schedule(spec: str, num_frames: int, fps: float, seed: int) -> np.ndarray:
    """Per-frame blink control in [0, 1]: a constant, or "auto" - eyes open
    with seeded 3-frame full closures every uniform 2-4 s."""
    if spec == "auto":
        z = np.ones(num_frames)
        rng = rng_for(seed, "blink-auto")
        t = rng.uniform(2.0, 4.0)
        while True:
            k = int(round(t * fps))
            if k >= num_frames:
                break
            z[k:k + BLINK_PULSE_FRAMES] = 0.0
            t += rng.uniform(2.0, 4.0)
        return z
    try:
        val = float(spec)
    except ValueError:
        raise ConfigError(f"blink spec must be 'auto' or a number in [0, 1], got {spec!r}") from None
    if not 0.0 <= val <= 1.0:
        raise ConfigError(f"blink value must lie in [0, 1], got {val}")
    return np.full(num_frames, val)


def _restore(model, prefix, mname="model"):
    arrays, _ = load_checkpoint(prefix)
    restore_model(model, arrays, mname)
    model.eval()
    return model


def cmd_generate(args, cfg) -> int:
    wave = audio_mod.ingest_wav(args.wav)
    mel = audio_mod.mel_spectrogram(wave)
    num_frames = int(round(wave.duration * cfg.fps))
    if num_frames < 1:
        raise EmptyInputError(f"audio too short for even one frame at {cfg.fps} fps")
    windows = audio_mod.frame_windows(mel, num_frames, cfg.fps)

    ref = read_coef(args.ref)
    if ref.shape[0] != 1:
        raise DimensionError(f"reference COEF must hold exactly one row, got {ref.shape[0]}")
    ref_motion = MotionCoeffs.from_vector(ref[0].astype(np.float64))
    beta0 = ref_motion.exp.beta.numpy()
    rho0 = ref_motion.pose.as_vector().numpy()

    ckpt = Path(args.checkpoints)
    exp = _restore(ExpNet(cfg.enc_channels), ckpt / "expnet")
    pvae = _restore(PoseVAE(cfg.latent_dim, cfg.hidden_dim, cfg.enc_channels), ckpt / "posevae", "pvae")
    mapper = _restore(KeypointMapper(cfg.mapper_channels, cfg.num_keypoints), ckpt / "mapper")

    z = blink_schedule(args.blink, num_frames, cfg.fps, cfg.seed)
    beta_seq = expnet_forward(exp, windows, beta0, z)
    poses = sample_poses(pvae, rho0, args.style, windows, num_frames, cfg.seed,
                         audio_stride=cfg.audio_stride_posevae)
    coeffs = np.concatenate([beta_seq, poses], axis=1)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_coef(out / "coeffs.coef", coeffs)
    write_coef(out / "blink.coef", z[:, None])

    with torch.no_grad():
        rot, trans, delta = mapper(torch.as_tensor(kpmapper.coeff_windows(coeffs), dtype=torch.float32))
        xc = torch.as_tensor(synthdata.gen_canonical_keypoints(cfg.seed, cfg.num_keypoints),
                             dtype=torch.float32)
        kp = kpmapper.transform_points(xc, rot, trans, delta).numpy()
    write_coef(out / "keypoints.coef", kp.reshape(num_frames, -1))
    kpmapper.trace_map(kp[..., :2].astype(np.float64), out / "trace.ppm", out / "trace.csv")

    beats_a = audio_mod.audio_beats(mel)
    with open(out / "audio_beats.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["beat_s"])
        for b in beats_a:
            writer.writerow(["%.9e" % b])

    beats_m = metrics.motion_beats(poses, cfg.fps)
    lmodel = synthdata.gen_landmark_model(cfg.seed)
    lms = landmarks_from_beta(lmodel.mean, lmodel.basis, torch.as_tensor(beta_seq)).numpy()
    rows = [("frames", str(num_frames)),
            ("audio_beats", str(beats_a.size)),
            ("motion_beats", str(beats_m.size)),
            ("beat_align", "%.9e" % metrics.beat_align(beats_a, beats_m)),
            ("eye_ratio_mean", "%.9e" % float(eye_ratio_points(torch.as_tensor(lms)).mean()))]
    if np.ptp(z) > 0.0:
        rows.append(("blink_recovery", "%.9e" % metrics.blink_recovery(lms, z)))
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        writer.writerows(rows)
    print(f"generated {num_frames} frames -> {out}")
    return 0


def _gen_clip_dirs(root: Path):
    if (root / "coeffs.coef").exists():
        return [root]
    return sorted(d for d in root.iterdir() if d.is_dir() and (d / "coeffs.coef").exists())


def _eval_rows(args, cfg):
    """(name, poses, audio_beats or None, landmarks or None, blink or None) per clip."""
    clips = []
    lmodel = None
    if args.generated:
        root = Path(args.generated)
        for d in _gen_clip_dirs(root):
            coeffs = read_coef(d / "coeffs.coef").astype(np.float64)
            if coeffs.shape[1] != COEFF_DIM:
                raise DimensionError(f"{d}: coefficient rows must have {COEFF_DIM} entries, got {coeffs.shape[1]}")
            beats = None
            if (d / "audio_beats.csv").exists():
                with open(d / "audio_beats.csv", newline="") as fh:
                    beats = np.array([float(r["beat_s"]) for r in csv.DictReader(fh)])
            blink = None
            lms = None
            if (d / "blink.coef").exists():
                blink = read_coef(d / "blink.coef").astype(np.float64)[:, 0]
                if lmodel is None:
                    lmodel = synthdata.gen_landmark_model(cfg.seed)
                lms = landmarks_from_beta(lmodel.mean, lmodel.basis,
                                          torch.as_tensor(coeffs[:, :EXP_DIM])).numpy()
            clips.append((d.name, coeffs[:, EXP_DIM:], beats, lms, blink))
    if args.corpus:
        root = Path(args.corpus)
        with open(root / "manifest.csv", newline="") as fh:
            for row in csv.DictReader(fh):
                poses = read_coef(root / row["poses"]).astype(np.float64)
                mel = audio_mod.mel_spectrogram(audio_mod.ingest_wav(root / row["wav"]))
                clips.append((row["clip_id"], poses, audio_mod.audio_beats(mel), None, None))
    if not clips:
        raise EmptyInputError("nothing to evaluate: no generated clips or corpus entries found")
    return clips


def cmd_eval(args, cfg) -> int:
    clips = _eval_rows(args, cfg)
    rows = []
    aligns = []
    for name, poses, beats_a, lms, blink in clips:
        if beats_a is not None:
            score = metrics.beat_align(beats_a, metrics.motion_beats(poses, cfg.fps))
            aligns.append(score)
            rows.append((f"beat_align/{name}", "%.9e" % score))
    if aligns:
        rows.append(("beat_align_mean", "%.9e" % (sum(aligns) / len(aligns))))
    try:
        rows.append(("pose_diversity", "%.9e" % metrics.pose_diversity([p for _, p, _, _, _ in clips])))
    except DimensionError as e:
        rows.append(("pose_diversity", f"error: {e}"))
    for name, _, _, lms, blink in clips:
        if blink is not None and lms is not None:
            try:
                rows.append((f"blink_recovery/{name}", "%.9e" % metrics.blink_recovery(lms, blink)))
            except DegenerateInputError as e:
                rows.append((f"blink_recovery/{name}", f"error: {e}"))

    text = "metric,value\n" + "\n".join(f"{k},{v}" for k, v in rows) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        for k, v in rows:
            print(f"{k} = {v}")
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_gradcheck(args, cfg) -> int:
    reports, ok = gradcheck_mod.run_gradcheck(args.module, cfg.seed)
    for r in reports:
        print(r.line())
    print(f"gradcheck {'PASS' if ok else 'FAIL'}: {len(reports)} parameter groups, "
          f"worst {max(r.max_rel_err for r in reports):.3e}")
    return 0 if ok else 1


# ---------------------------------------------------------------------------
# argument wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sadcoeff",
                                     description="audio-driven motion-coefficient pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="run-config text file (defaults apply when omitted)")
        p.add_argument("--seed", type=int, help="override the config seed")

    p = sub.add_parser("datagen", help="generate the synthetic training corpus")
    common(p)
    p.add_argument("--out", required=True, help="corpus output directory")
    p.set_defaults(func=cmd_datagen)

    for stage in ("expnet", "posevae", "mapper"):
        p = sub.add_parser(f"train-{stage}", help=f"train the {stage} stage")
        common(p)
        p.add_argument("--corpus", required=True, help="corpus directory from datagen")
        p.add_argument("--out", required=True, help="checkpoint/history output directory")
        p.add_argument("--resume", help="checkpoint prefix to resume from")
        p.set_defaults(func=lambda a, c, _s=stage: cmd_train(_s, a, c))

    p = sub.add_parser("generate", help="drive the full pipeline from a WAV")
    common(p)
    p.add_argument("--wav", required=True, help="input audio (16 kHz WAV)")
    p.add_argument("--ref", required=True, help="reference COEF: one row of 70 coefficients")
    p.add_argument("--style", type=int, default=0, help="pose style id")
    p.add_argument("--blink", default="auto", help="'auto' or a constant in [0, 1]")
    p.add_argument("--checkpoints", required=True, help="directory holding the trained checkpoints")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="report metrics over generated clips and/or a corpus")
    common(p)
    p.add_argument("--generated", help="generated clip directory, or a directory of them")
    p.add_argument("--corpus", help="corpus directory")
    p.add_argument("--out", help="write the metric CSV here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the training objectives")
    common(p)
    p.add_argument("--module", choices=gradcheck_mod.MODULES, help="limit to one suite")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_threads()
    try:
        cfg = _load_config(args)
        return args.func(args, cfg)
    except (ValueError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
