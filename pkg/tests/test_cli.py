import json

import numpy as np
import pytest

from mgm import artifacts
from mgm.cli import main
from mgm.trainer import TrainConfig, init_state

SMOKE = {"steps": 1, "batch": 4, "hidden": [8], "n_eval_samples": 20,
         "field_grid": {"min": -1.0, "max": 1.0, "steps": 3}, "field_times": [0.1, 0.5]}


def _config(tmp_path, **over):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({**SMOKE, **over}))
    return path


def test_train_smoke_writes_all_artifacts(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["train", "--config", str(_config(tmp_path)), "--out", str(out)]) == 0
    lines = (out / "losses.csv").read_text().splitlines()
    assert lines[0] == "step,L_psi,L_theta" and len(lines) == 2
    for name in ("config.json", "timings.csv", "samples.csv", "metrics.json", "checkpoints/step_1.json",
                 "fields/t_0.1.csv", "fields/t_0.5.csv"):
        assert (out / name).exists(), name
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["n_a"] == 20 and metrics["energy_distance"] >= 0
    assert TrainConfig.from_dict(json.loads((out / "config.json").read_text())) == TrainConfig(**SMOKE)
    assert not list(out.rglob("*.tmp"))


def test_train_is_byte_deterministic_and_config_echo_reruns(tmp_path):
    cfg = _config(tmp_path, steps=3)
    main(["train", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["train", "--config", str(cfg), "--out", str(tmp_path / "b")])
    main(["train", "--config", str(tmp_path / "a" / "config.json"), "--out", str(tmp_path / "c")])
    for name in ("losses.csv", "checkpoints/step_3.json", "samples.csv"):
        ref = (tmp_path / "a" / name).read_bytes()
        assert (tmp_path / "b" / name).read_bytes() == ref
        assert (tmp_path / "c" / name).read_bytes() == ref


def test_overrides_are_echoed(tmp_path):
    out = tmp_path / "run"
    assert main(["train", "--config", str(_config(tmp_path)), "--out", str(out), "--variant", "midpoint_only",
                 "--seed", "7"]) == 0
    echo = json.loads((out / "config.json").read_text())
    assert echo["variant"] == "midpoint_only" and echo["seed"] == 7


def test_invalid_config_prints_path(tmp_path, capsys):
    assert main(["train", "--config", str(_config(tmp_path, batch=1)), "--out", str(tmp_path / "r")]) != 0
    assert "config.batch" in capsys.readouterr().err
    assert main(["train", "--config", str(_config(tmp_path, bogus=1)), "--out", str(tmp_path / "r")]) != 0
    assert "config.bogus" in capsys.readouterr().err


def test_non_finite_halt_exits_2(tmp_path, capsys):
    code = main(["train", "--config", str(_config(tmp_path, lr=1e300, steps=5)), "--out", str(tmp_path / "r")])
    assert code == 2
    assert "step" in capsys.readouterr().err


def test_checkpoint_round_trip(tmp_path):
    state = init_state(TrainConfig(**SMOKE))
    artifacts.save_checkpoint(tmp_path / "a.json", state)
    ck = artifacts.load_checkpoint(tmp_path / "a.json")
    gen, opt = ck["generator"]
    assert all(np.array_equal(a, b) for a, b in zip(gen.arrays(), state.generator.arrays()))
    assert opt.step == state.gen_opt.step and opt.hyper == state.gen_opt.hyper
    for field in ("m", "v", "ema"):
        assert all(np.array_equal(a, b) for a, b in zip(getattr(opt, field), getattr(state.gen_opt, field)))
    bad = json.loads((tmp_path / "a.json").read_text())
    bad["format_version"] = 99
    (tmp_path / "b.json").write_text(json.dumps(bad))
    with pytest.raises(ValueError, match="format_version"):
        artifacts.load_checkpoint(tmp_path / "b.json")


def test_field_from_checkpoint_is_reproducible(tmp_path):
    out = tmp_path / "run"
    main(["train", "--config", str(_config(tmp_path)), "--out", str(out)])
    ck = str(out / "checkpoints" / "step_1.json")
    main(["field", "--checkpoint", ck, "--t", "0.5", "--grid=-1,1,3", "--out", str(tmp_path / "f")])
    assert (tmp_path / "f" / "t_0.5.csv").read_bytes() == (out / "fields" / "t_0.5.csv").read_bytes()


def test_field_oracle_summary(tmp_path, capsys):
    oracle = json.dumps({"m0": [0.0, 0.0], "m1": [0.0, 0.0]})
    assert main(["field", "--oracle", oracle, "--t", "0.1,0.25,0.5", "--grid=-3,3,41",
                 "--out", str(tmp_path)]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 3 and len(list(tmp_path.glob("t_*.csv"))) == 3
    for line in lines:
        assert float(line.split("max_norm=")[1].split()[0]) <= 1e-12
    assert main(["field", "--oracle", oracle, "--t", "0.5", "--grid=1,0,5", "--out", str(tmp_path)]) != 0
    assert main(["field", "--checkpoint", str(tmp_path / "missing.json"), "--t", "0.5", "--out",
                 str(tmp_path)]) != 0


def test_divergence_command(tmp_path, capsys):
    p0 = json.dumps({"kind": "gaussian", "mean": [0.0]})
    p1 = json.dumps({"kind": "gaussian", "mean": [2.0]})
    out = tmp_path / "d.json"
    assert main(["divergence", "--kind", "midpoint", "--p0", p0, "--p1", p1, "--n", "20000", "--out", str(out)]) == 0
    d = json.loads(out.read_text())
    assert set(d) >= {"value", "stderr", "n_pairs", "n_times", "estimator", "seed"}
    assert abs(d["value"] - 4.0) <= 0.2
    capsys.readouterr()
    assert main(["divergence", "--kind", "midpoint", "--p0", p0, "--p1", p0, "--n", "20000"]) == 0
    assert json.loads(capsys.readouterr().out)["value"] <= 0.01
    with pytest.raises(SystemExit) as info:
        main(["divergence", "--kind", "kl", "--p0", p0, "--p1", p0])
    assert info.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_eval_and_datasets_dump(tmp_path, capsys):
    a = tmp_path / "a.csv"
    assert main(["datasets", "dump", "--n", "50", "--out", str(a)]) == 0
    assert a.read_text().splitlines()[0] == "x0,x1"
    assert main(["eval", "--samples", str(a), "--reference", str(a), "--out", str(tmp_path / "m.json")]) == 0
    m = json.loads((tmp_path / "m.json").read_text())
    assert m["energy_distance"] == pytest.approx(0, abs=1e-12) and m["sliced_wasserstein"] == 0
    x = np.random.default_rng(0).normal(size=(40, 1))
    artifacts.write_samples(tmp_path / "u.csv", x)
    artifacts.write_samples(tmp_path / "v.csv", x + 0.7)
    capsys.readouterr()
    main(["eval", "--samples", str(tmp_path / "u.csv"), "--reference", str(tmp_path / "v.csv"), "--seed", "3"])
    first = capsys.readouterr().out
    assert json.loads(first)["sliced_wasserstein"] == pytest.approx(0.7)
    main(["eval", "--samples", str(tmp_path / "u.csv"), "--reference", str(tmp_path / "v.csv"), "--seed", "3"])
    assert capsys.readouterr().out == first
    assert main(["eval", "--samples", str(a), "--reference", str(tmp_path / "u.csv")]) != 0
    assert "dim mismatch" in capsys.readouterr().err


def test_csv_format():
    text = artifacts.csv_text(["a", "b"], [[0.1, 1e-20]])
    assert text == "a,b\n0.1,1e-20\n"
    assert artifacts.field_filename(0.25) == "t_0.25.csv"
