"""``mgm`` command-line entry point.

Subcommands: ``train``, ``divergence``, ``field``, ``eval`` and ``datasets dump``.
Exit codes: 0 on success, 1 for invalid input, 2 when training halts on a
non-finite loss.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import artifacts
from .data import DatasetSpec, sample, sample_prior
from .estimator import KINDS, dataset_source, estimate_divergence
from .gaussian_oracle import GaussianEndpoints, flipped_field, velocity_field
from .interpolant import InterpolantSpec
from .metrics import field_grid, metric_report
from .model import critic_forward, ema_params, generator_forward
from .rng import stream
from .trainer import ConfigError, TrainConfig, TrainingHalted, init_state, train_step, warmup

log = logging.getLogger("mgm")

EXIT_OK, EXIT_INVALID, EXIT_HALTED = 0, 1, 2


class UsageError(ValueError):
    pass


def _json_arg(text: str):
    """Inline JSON, or a path to a JSON file."""
    path = Path(text)
    if not text.lstrip().startswith(("{", "[")) and path.exists():
        text = path.read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise UsageError(f"could not parse JSON argument: {exc}") from None


# ---- train -----------------------------------------------------------------

def load_config(path, seed=None, variant=None) -> TrainConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError("config", f"invalid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError("config", "expected a JSON object")
    if seed is not None:
        raw["seed"] = seed
    if variant is not None:
        raw["variant"] = variant
    return TrainConfig.from_dict(raw)


def _critic_fn(critic):
    return lambda x, t: critic_forward(critic, x, t)


def write_fields(out_dir, field, dim, times, grid) -> list:
    """One CSV per time; returns ``[(path, FieldGrid), ...]``."""
    paths = []
    for t in times:
        g = field_grid(field, t, grid["min"], grid["max"], grid["steps"], dim)
        path = Path(out_dir) / artifacts.field_filename(t)
        artifacts.atomic_write_text(path, artifacts.field_csv(g))
        if not g.finite.all():
            log.warning("t=%s: %d non-finite rows flagged", t, int((~g.finite).sum()))
        paths.append((path, g))
    return paths


def write_eval(out_dir, state, config: TrainConfig) -> dict:
    """EMA-generator samples against a held-out data split never used in training."""
    n = config.n_eval_samples
    gen = ema_params(state.generator, state.gen_opt)
    x = generator_forward(gen, sample_prior(gen.in_dim, n, stream(config.seed, "eval_prior")))
    ref = sample(config.data_spec, n, stream(config.seed, "heldout"))
    artifacts.write_samples(out_dir / "samples.csv", x)
    report = metric_report(x, ref, seed=config.seed).to_dict()
    report["step"] = state.step
    artifacts.write_json(out_dir / "metrics.json", report)
    return report


def run_train(config: TrainConfig, out_dir) -> int:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    artifacts.write_json(out_dir / "config.json", config.to_dict())
    state = init_state(config)
    if config.warmup_steps:
        state = init_state(config, warmup(config, state.streams))
    losses = artifacts.LossLog(out_dir)
    data = config.data_spec
    try:
        for _ in range(config.steps):
            t0 = time.perf_counter()
            try:
                train_step(state, config, data)
            except TrainingHalted as exc:
                losses.append(exc.step, exc.l_psi, exc.l_theta, 1e3 * (time.perf_counter() - t0))
                print(f"training halted: {exc}", file=sys.stderr)
                artifacts.save_checkpoint(out_dir / "checkpoints" / f"step_{state.step}.json", state)
                return EXIT_HALTED
            step, l_psi, l_theta = state.history[-1]
            losses.append(step, l_psi, l_theta, 1e3 * (time.perf_counter() - t0))
            if config.eval_every and step % config.eval_every == 0 and step < config.steps:
                artifacts.save_checkpoint(out_dir / "checkpoints" / f"step_{step}.json", state)
                write_eval(out_dir, state, config)
    finally:
        losses.close()
    artifacts.save_checkpoint(out_dir / "checkpoints" / f"step_{state.step}.json", state)
    report = write_eval(out_dir, state, config)
    if data.dim <= 2:
        write_fields(out_dir / "fields", _critic_fn(state.critic), data.dim, config.field_times, config.field_grid)
    print(f"done: {state.step} steps, energy_distance={report['energy_distance']:.6g}")
    return EXIT_OK


def cmd_train(args) -> int:
    config = load_config(args.config, args.seed, args.variant)
    return run_train(config, args.out)


# ---- divergence ------------------------------------------------------------

def _dataset(spec_json, flag) -> DatasetSpec:
    if not isinstance(spec_json, dict):
        raise UsageError(f"{flag}: expected a dataset object such as {{\"kind\": \"gaussian\", \"mean\": [0]}}")
    try:
        return DatasetSpec.from_dict(spec_json)
    except ValueError as exc:
        raise UsageError(f"{flag}: {exc}") from None


def cmd_divergence(args) -> int:
    p0 = _dataset(_json_arg(args.p0), "--p0")
    p1 = _dataset(_json_arg(args.p1), "--p1")
    est = estimate_divergence(args.kind, dataset_source(p0), dataset_source(p1),
                              InterpolantSpec(sigma_strength=args.sigma), args.n, args.n_times,
                              rng=stream(args.seed, "divergence"), n_replicates=args.replicates)
    out = {"value": est.value, "stderr": est.stderr, "n_pairs": est.n_pairs, "n_times": est.n_times,
           "estimator": est.estimator, "seed": args.seed, "n_replicates": est.n_replicates}
    if args.out:
        artifacts.write_json(args.out, out)
    print(json.dumps(out, sort_keys=True))
    return EXIT_OK


# ---- field -----------------------------------------------------------------

def _parse_grid(text) -> dict:
    if isinstance(text, dict):
        grid = text
    else:
        parts = str(text).split(",")
        if len(parts) != 3:
            raise UsageError("--grid: expected MIN,MAX,STEPS")
        try:
            grid = {"min": float(parts[0]), "max": float(parts[1]), "steps": int(parts[2])}
        except ValueError:
            raise UsageError("--grid: expected MIN,MAX,STEPS") from None
    if grid["steps"] < 2:
        raise UsageError("--grid: steps must be >= 2")
    if not grid["max"] > grid["min"]:
        raise UsageError("--grid: max must exceed min")
    return grid


def _oracle_field(spec: dict):
    spec = dict(spec)
    which = spec.pop("field", "flipped")
    sigma = float(spec.pop("sigma_strength", 0.0))
    try:
        g = GaussianEndpoints(**spec)
    except TypeError as exc:
        raise UsageError(f"--oracle: {exc}") from None
    fn = {"flipped": flipped_field, "velocity": velocity_field}.get(which)
    if fn is None:
        raise UsageError("--oracle: field must be 'flipped' or 'velocity'")
    return (lambda x, t: fn(g, t, x, sigma)), g.dim


def cmd_field(args) -> int:
    grid = _parse_grid(args.grid)
    if args.checkpoint:
        ck = artifacts.load_checkpoint(args.checkpoint)
        critic = ck["critic"][0]
        field, dim = _critic_fn(critic), critic.in_dim
    else:
        field, dim = _oracle_field(_json_arg(args.oracle))
    if dim > 2:
        raise UsageError(f"field grids are limited to 1-D and 2-D data, got dim {dim}")
    Path(args.out).mkdir(parents=True, exist_ok=True)
    for path, g in write_fields(args.out, field, dim, args.t, grid):
        print(f"t={g.t!r} rows={len(g.x)} max_norm={g.max_norm!r} nonfinite={int((~g.finite).sum())} -> {path}")
    return EXIT_OK


# ---- eval / datasets -------------------------------------------------------

def cmd_eval(args) -> int:
    a = artifacts.read_samples(args.samples)
    b = artifacts.read_samples(args.reference)
    if a.shape[1] != b.shape[1]:
        raise UsageError(f"dim mismatch: samples have dim {a.shape[1]}, reference has dim {b.shape[1]}")
    report = metric_report(a, b, seed=args.seed).to_dict()
    if args.out:
        artifacts.write_json(args.out, report)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def cmd_datasets_dump(args) -> int:
    spec = _dataset(_json_arg(args.dataset), "--dataset")
    x = sample(spec, args.n, stream(args.seed, "dump"))
    if args.out:
        artifacts.write_samples(args.out, x)
    else:
        sys.stdout.write(artifacts.csv_text([f"x{i}" for i in range(x.shape[1])], x))
    return EXIT_OK


# ---- parser ----------------------------------------------------------------

def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated numbers") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mgm", description="Midpoint generative models at toy scale.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a one-step generator")
    t.add_argument("--config", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--variant", choices=("full", "midpoint_only", "naive_unflipped"))
    t.set_defaults(func=cmd_train)

    d = sub.add_parser("divergence", help="estimate a divergence between two sample sources")
    d.add_argument("--kind", required=True, choices=KINDS)
    d.add_argument("--p0", required=True, help="dataset JSON (inline or file)")
    d.add_argument("--p1", required=True, help="dataset JSON (inline or file)")
    d.add_argument("--n", type=int, default=100_000, help="pairs per time per replicate")
    d.add_argument("--n-times", type=int, default=16)
    d.add_argument("--replicates", type=int, default=8)
    d.add_argument("--sigma", type=float, default=0.0, help="noise strength (generalized only)")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out")
    d.set_defaults(func=cmd_divergence)

    f = sub.add_parser("field", help="export a field on a grid")
    src = f.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--oracle", help="Gaussian endpoints JSON: m0, m1, s0, s1, field, sigma_strength")
    f.add_argument("--t", type=_float_list, required=True, help="comma-separated times")
    f.add_argument("--grid", default="-3,3,41", help="MIN,MAX,STEPS")
    f.add_argument("--out", required=True, help="output directory")
    f.set_defaults(func=cmd_field)

    e = sub.add_parser("eval", help="compare two sample CSVs")
    e.add_argument("--samples", required=True)
    e.add_argument("--reference", required=True)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    ds = sub.add_parser("datasets", help="dataset utilities")
    ds_sub = ds.add_subparsers(dest="datasets_command", required=True)
    dump = ds_sub.add_parser("dump", help="write samples of a dataset to CSV")
    dump.add_argument("--dataset", default='{"kind": "swiss_roll"}')
    dump.add_argument("--n", type=int, default=1000)
    dump.add_argument("--seed", type=int, default=0)
    dump.add_argument("--out")
    dump.set_defaults(func=cmd_datasets_dump)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (UsageError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
