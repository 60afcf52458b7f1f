"""Shared trainer plumbing: checkpoints and loss-history files.

A checkpoint is a pair of files sharing a prefix:

  <prefix>.coef      every stored scalar, flattened to an (n, 1) float32
                     coefficient container
  <prefix>.manifest  text index: first line "step <k>", then one line per
                     entry: "<name> <offset> <count> <shape>" where shape is
                     comma-separated dims ("-" for scalars)

Stored entries are all model state tensors ("<model>/<param>") plus, for
every parameter the optimizer has touched, the Adam first and second moment
accumulators ("adam/<model>/<param>/m" and ".../v").  Training runs in
float32, so a save/load round trip is bit-exact and resuming from step k
reproduces the uninterrupted run.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .coefio import read_coef, write_coef
from .errors import FormatError

FLOAT_FMT = "%.9e"


def _as_model_dict(models, opts):
    if isinstance(models, nn.Module):
        return {"model": models}, {"model": opts}
    return models, opts


def save_checkpoint(prefix, models, opts, step: int) -> None:
    models, opts = _as_model_dict(models, opts)
    entries = []
    for mname, model in models.items():
        for pname, tensor in model.state_dict().items():
            entries.append((f"{mname}/{pname}", tensor.detach().cpu().numpy().astype(np.float32)))
        opt = opts[mname]
        name_of = {p: pname for pname, p in model.named_parameters()}
        for group in opt.param_groups:
            for p in group["params"]:
                state = opt.state.get(p)
                if state:
                    entries.append((f"adam/{mname}/{name_of[p]}/m",
                                    state["exp_avg"].detach().cpu().numpy().astype(np.float32)))
                    entries.append((f"adam/{mname}/{name_of[p]}/v",
                                    state["exp_avg_sq"].detach().cpu().numpy().astype(np.float32)))
    flat = np.concatenate([a.reshape(-1) for _, a in entries]) if entries else np.zeros(0, np.float32)
    prefix = Path(prefix)
    write_coef(prefix.with_suffix(".coef"), flat.reshape(-1, 1))
    lines = [f"step {step}"]
    offset = 0
    for name, a in entries:
        shape = ",".join(str(d) for d in a.shape) or "-"
        lines.append(f"{name} {offset} {a.size} {shape}")
        offset += a.size
    prefix.with_suffix(".manifest").write_text("\n".join(lines) + "\n")


def load_checkpoint(prefix):
    """Returns ({name: float32 ndarray}, step)."""
    prefix = Path(prefix)
    manifest = prefix.with_suffix(".manifest")
    if not manifest.exists():
        raise FormatError(f"missing checkpoint manifest: {manifest}")
    flat = read_coef(prefix.with_suffix(".coef")).reshape(-1)
    lines = manifest.read_text().splitlines()
    first = lines[0].split()
    if len(first) != 2 or first[0] != "step":
        raise FormatError(f"malformed checkpoint manifest header: {lines[0]!r}")
    step = int(first[1])
    arrays = {}
    for line in lines[1:]:
        if not line.strip():
            continue
        name, off, count, shape = line.split()
        off, count = int(off), int(count)
        if off + count > flat.size:
            raise FormatError(f"checkpoint entry {name} overruns the data file")
        a = flat[off:off + count]
        if shape != "-":
            a = a.reshape(tuple(int(d) for d in shape.split(",")))
        else:
            a = a.reshape(())
        arrays[name] = a
    return arrays, step


def restore_model(model: nn.Module, arrays, mname: str = "model") -> None:
    dtype = next(model.parameters()).dtype
    sd = {}
    for pname, tensor in model.state_dict().items():
        key = f"{mname}/{pname}"
        if key not in arrays:
            raise FormatError(f"checkpoint is missing entry {key}")
        sd[pname] = torch.as_tensor(arrays[key], dtype=dtype).reshape(tensor.shape)
    model.load_state_dict(sd)


def restore_adam(model: nn.Module, opt, arrays, step: int, mname: str = "model") -> None:
    """Load model weights and Adam moments so training continues bit-exactly."""
    restore_model(model, arrays, mname)
    if step == 0:
        return
    dtype = next(model.parameters()).dtype
    for pname, p in model.named_parameters():
        m = arrays.get(f"adam/{mname}/{pname}/m")
        v = arrays.get(f"adam/{mname}/{pname}/v")
        if m is None or v is None:
            continue
        opt.state[p] = {
            "step": torch.tensor(float(step)),
            "exp_avg": torch.as_tensor(m, dtype=dtype).reshape(p.shape),
            "exp_avg_sq": torch.as_tensor(v, dtype=dtype).reshape(p.shape),
        }


def history_path(out_dir, tag: str) -> Path:
    return Path(out_dir) / f"{tag}_history.csv"


def write_history(path, rows, fields, append: bool = False) -> None:
    path = Path(path)
    mode = "a" if append and path.exists() else "w"
    with open(path, mode, newline="") as fh:
        w = csv.writer(fh)
        if mode == "w":
            w.writerow(fields)
        for row in rows:
            w.writerow([row[f] if isinstance(row[f], int) else FLOAT_FMT % row[f] for f in fields])
