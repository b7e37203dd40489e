"""On-disk formats: JSON configs and checkpoints, CSV samples, losses and fields.

Floats are written with ``repr`` so every value round-trips exactly. Files are
either appended to (losses, timings) or written to a temporary sibling and
moved into place, so a reader never sees a partial file.
"""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from .model import AdamHyper, MlpParams, OptState

FORMAT_VERSION = 1


def fmt(x) -> str:
    return repr(float(x))


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_json(path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def csv_text(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(v if isinstance(v, str) else fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"


def write_samples(path, x) -> None:
    x = np.asarray(x, dtype=float)
    atomic_write_text(path, csv_text([f"x{i}" for i in range(x.shape[1])], x))


def read_samples(path) -> np.ndarray:
    """Numeric CSV with a header row; returns ``[n, d]``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    if not body:
        raise ValueError(f"{path}: no data rows")
    try:
        x = np.array([[float(v) for v in r] for r in body], dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    if x.ndim != 2 or x.shape[1] != len(header):
        raise ValueError(f"{path}: rows do not match the {len(header)}-column header")
    return x


def field_csv(grid) -> str:
    d = grid.x.shape[1]
    header = [f"x{i}" for i in range(d)] + [f"v{i}" for i in range(d)] + ["finite"]
    rows = [[*x, *v, "1" if ok else "0"] for x, v, ok in grid.rows()]
    return csv_text(header, rows)


def field_filename(t: float) -> str:
    return f"t_{float(t)!r}.csv"


class LossLog:
    """Append-only ``losses.csv`` (deterministic) plus ``timings.csv`` (wall clock)."""

    def __init__(self, out_dir):
        out_dir = Path(out_dir)
        self.losses = open(out_dir / "losses.csv", "w", newline="\n")
        self.timings = open(out_dir / "timings.csv", "w", newline="\n")
        self.losses.write("step,L_psi,L_theta\n")
        self.timings.write("step,wall_ms\n")

    def append(self, step, l_psi, l_theta, wall_ms) -> None:
        self.losses.write(f"{step},{fmt(l_psi)},{fmt(l_theta)}\n")
        self.timings.write(f"{step},{fmt(wall_ms)}\n")
        self.losses.flush()
        self.timings.flush()

    def close(self) -> None:
        self.losses.close()
        self.timings.close()


# ---- checkpoints -----------------------------------------------------------

def _arrays_to_json(params: MlpParams, arrays):
    it = iter(arrays)
    return [{"w": next(it).tolist(), "b": next(it).tolist()} for _ in params.layers]


def _arrays_from_json(layers):
    out = []
    for layer in layers:
        out.append(np.array(layer["w"], dtype=float))
        out.append(np.array(layer["b"], dtype=float))
    return out


def network_to_json(params: MlpParams, opt: OptState) -> dict:
    return {
        "model": {"dims": params.dims, "activation": params.activation,
                  "time_conditioned": params.time_conditioned},
        "layers": _arrays_to_json(params, params.arrays()),
        "opt": {"step": opt.step, "hyper": vars(opt.hyper).copy(),
                "m": _arrays_to_json(params, opt.m), "v": _arrays_to_json(params, opt.v)},
        "ema": _arrays_to_json(params, opt.ema),
    }


def network_from_json(d: dict) -> tuple[MlpParams, OptState]:
    model = d["model"]
    arrays = _arrays_from_json(d["layers"])
    layers = tuple((arrays[2 * i], arrays[2 * i + 1]) for i in range(len(arrays) // 2))
    params = MlpParams(layers, model["activation"], bool(model["time_conditioned"]))
    if params.dims != list(model["dims"]):
        raise ValueError(f"checkpoint dims {model['dims']} do not match layer shapes {params.dims}")
    opt = d["opt"]
    state = OptState(int(opt["step"]), tuple(_arrays_from_json(opt["m"])), tuple(_arrays_from_json(opt["v"])),
                     tuple(_arrays_from_json(d["ema"])), AdamHyper(**opt["hyper"]))
    return params, state


def save_checkpoint(path, state) -> None:
    write_json(path, {
        "format_version": FORMAT_VERSION,
        "step": state.step,
        "generator": network_to_json(state.generator, state.gen_opt),
        "critic": network_to_json(state.critic, state.critic_opt),
    })


def load_checkpoint(path) -> dict:
    """Returns ``{"step", "generator": (params, opt), "critic": (params, opt)}``."""
    with open(path) as fh:
        d = json.load(fh)
    version = d.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint format_version {version!r}")
    try:
        return {"step": int(d["step"]), "generator": network_from_json(d["generator"]),
                "critic": network_from_json(d["critic"])}
    except (KeyError, TypeError, IndexError) as exc:
        raise ValueError(f"{path}: malformed checkpoint ({exc!r})") from None
