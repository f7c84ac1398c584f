import json
import os

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pkslab.cli import main
from pkslab.config import DEFAULTS, ExperimentConfig, dumps_toml, initial_density, load_config
from pkslab.errors import ConfigError, DomainError, OutputError
from pkslab.io import format_value, read_snapshot, write_csv, write_snapshot
from smallcfg import SMALL


def write_config(path, values):
    path.write_text(dumps_toml(values))
    return str(path)


@pytest.mark.parametrize("shape", [(7, 1), (5, 2), (1, 3)])
def test_particle_snapshot_round_trip(tmp_path, shape, rng):
    x = rng.random(shape)
    write_snapshot(tmp_path / "s.bin", "particles", x, 0.125, 2**40 + 3)
    kind, data, t, seed = read_snapshot(tmp_path / "s.bin")
    assert kind == "particles" and t == 0.125 and seed == 2**40 + 3
    assert np.array_equal(data, x)


def test_grid_snapshot_round_trip(tmp_path, rng):
    g = rng.random((8, 8))
    write_snapshot(tmp_path / "g.bin", "density", g, 1.0, 0)
    kind, data, _, _ = read_snapshot(tmp_path / "g.bin")
    assert kind == "density" and np.array_equal(data, g)
    raw = (tmp_path / "g.bin").read_bytes()
    assert raw[:4] == b"PKSL" and len(raw) == 40 + 64 * 8


def test_snapshot_errors(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOPE" + bytes(60))
    with pytest.raises(OutputError):
        read_snapshot(bad)
    bad.write_bytes(b"PK")
    with pytest.raises(OutputError):
        read_snapshot(bad)
    with pytest.raises(DomainError):
        write_snapshot(tmp_path / "x.bin", "mystery", np.zeros(3), 0.0, 0)
    with pytest.raises(OutputError):
        write_snapshot(tmp_path / "missing" / "x.bin", "density", np.zeros(3), 0.0, 0)


def test_csv_formatting(tmp_path):
    assert format_value(True) == "true" and format_value(np.int64(3)) == "3"
    assert format_value(0.1) == "0.1" and format_value(np.float64(1 / 3)) == repr(1 / 3)
    assert format_value(None) == ""
    write_csv(tmp_path / "t.csv", ["a", "b"], [(1, 0.5), (2, float("nan"))])
    assert (tmp_path / "t.csv").read_text().splitlines() == ["a,b", "1,0.5", "2,nan"]
    with pytest.raises(DomainError):
        write_csv(tmp_path / "t.csv", ["a", "b"], [(1,)])


@given(st.floats(allow_nan=False, allow_infinity=False))
def test_csv_floats_round_trip(v):
    assert float(format_value(v)) == v


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError, match="unknown"):
        ExperimentConfig({"potential.lambda": 1.0})
    with pytest.raises(ConfigError):
        ExperimentConfig({"simulate.n": 1.5})
    with pytest.raises(ConfigError):
        ExperimentConfig({"simulate.snapshots": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig({"experiment.kind": "dance"})
    with pytest.raises(ConfigError):
        ExperimentConfig({"potential.sigma": -1.0}).potential_spec()
    (tmp_path / "broken.toml").write_text("[pde\nm = 3")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "broken.toml")
    with pytest.raises(OutputError):
        load_config(tmp_path / "absent.toml")


def test_config_integers_promote_to_floats():
    cfg = ExperimentConfig({"potential.lam": 2})
    assert cfg["potential.lam"] == 2.0 and isinstance(cfg["potential.lam"], float)


def test_config_toml_round_trip(tmp_path):
    cfg = ExperimentConfig({"potential.lam": 1.25, "ldp.n_values": [3, 5], "pde.snapshots": True, "experiment.out": 'a "b"'})
    cfg.save(tmp_path / "c.toml")
    again = load_config(tmp_path / "c.toml")
    assert again.values == cfg.values
    assert again.hash() == cfg.hash()
    assert cfg.hash() == cfg.replace(experiment__threads=8, experiment__out="elsewhere").hash()
    assert cfg.hash() != cfg.replace(potential__lam=1.5).hash()
    nested = tmp_path / "n.toml"
    nested.write_text("[potential]\nlam = 3.0\n\n[initial]\nkind = \"uniform\"\n")
    assert load_config(nested)["potential.lam"] == 3.0
    assert set(DEFAULTS) == set(again.values)


def test_initial_densities():
    for kind in ("uniform", "cosine", "bump"):
        for d in (1, 2):
            rb = initial_density(ExperimentConfig({"initial.kind": kind}), m=32, d=d)
            assert rb.values.shape == (32,) * d
            assert rb.values.mean() == pytest.approx(1.0) and rb.values.min() > 0
    with pytest.raises(ConfigError):
        initial_density(ExperimentConfig({"initial.amplitude": 1.0}))


def run_cli(tmp_path, kind, threads, tag, extra=()):
    cfg = write_config(tmp_path / f"{kind}.toml", SMALL[kind])
    out = tmp_path / f"{kind}-{tag}"
    code = main([kind, "--config", cfg, "--out", str(out), "--seed", "11", "--threads", str(threads), *extra])
    return code, out


def outputs(out):
    names = sorted(p.name for p in out.iterdir() if p.suffix in (".csv", ".bin") or p.name.endswith("summary.json"))
    return {n: (out / n).read_bytes() for n in names}


@pytest.mark.parametrize("kind", list(SMALL))
def test_cli_writes_artifacts(tmp_path, kind):
    code, out = run_cli(tmp_path, kind, 1, "a")
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["kind"] == kind and manifest["threads"] == 1
    assert manifest["config_hash"] == load_config(out / "config.toml").hash()
    for name, meta in manifest["files"]["tables"].items():
        lines = (out / name).read_text().splitlines()
        assert lines[0].split(",") == meta["columns"] and len(lines) == meta["rows"] + 1
    assert load_config(out / "config.toml")["experiment.seed"] == 11


@pytest.mark.parametrize("kind", list(SMALL))
def test_cli_is_deterministic_across_workers(tmp_path, kind):
    _, a = run_cli(tmp_path, kind, 1, "a")
    _, b = run_cli(tmp_path, kind, 4, "b")
    first = outputs(a)
    assert first and first == outputs(b)
    # re-running from the persisted config reproduces the outputs
    assert main([kind, "--config", str(a / "config.toml"), "--out", str(tmp_path / "c")]) == 0
    assert outputs(tmp_path / "c") == first


def test_cli_global_flags_before_the_experiment(tmp_path):
    cfg = write_config(tmp_path / "p.toml", SMALL["pde"])
    assert main(["--out", str(tmp_path / "o"), "--config", cfg, "pde"]) == 0
    assert (tmp_path / "o" / "pde_series.csv").exists()


def test_cli_exit_codes(tmp_path, capsys):
    bad = write_config(tmp_path / "bad.toml", {"pde.mm": 3})
    assert main(["pde", "--config", bad, "--out", str(tmp_path / "x")]) == 2
    assert "unknown config key" in capsys.readouterr().err
    sup = write_config(tmp_path / "sup.toml", {**SMALL["converge"], "potential.lam": 5.0})
    assert main(["converge", "--config", sup, "--out", str(tmp_path / "y")]) == 2
    # an explicit particle step far beyond the stability limit for the given eps
    cfl = write_config(tmp_path / "cfl.toml", {**SMALL["simulate"], "simulate.dt": 0.005, "simulate.eps": 1e-3})
    assert main(["simulate", "--config", cfl, "--out", str(tmp_path / "z")]) == 3
    assert "CFLError" in capsys.readouterr().err
    huge = write_config(tmp_path / "huge.toml", {"liouville.n": 3, "liouville.m": 4096})
    assert main(["liouville", "--config", huge, "--out", str(tmp_path / "v")]) == 3
    blocker = tmp_path / "file"
    blocker.write_text("")
    good = write_config(tmp_path / "good.toml", SMALL["pde"])
    assert main(["pde", "--config", good, "--out", str(blocker / "sub")]) == 4
    assert main(["pde", "--config", str(tmp_path / "nope.toml"), "--out", str(tmp_path / "w")]) == 4
    with pytest.raises(SystemExit) as info:
        main(["teleport"])
    assert info.value.code == 2


@pytest.mark.skipif(os.geteuid() == 0, reason="permission bits are ignored for root")
def test_cli_unwritable_directory(tmp_path):
    ro = tmp_path / "ro"
    ro.mkdir(mode=0o500)
    good = write_config(tmp_path / "good.toml", SMALL["pde"])
    assert main(["pde", "--config", good, "--out", str(ro / "sub")]) == 4
