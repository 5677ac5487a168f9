import csv
import subprocess
import sys

import pytest
import yaml

from twophoton import analytic, cli, scenarios
from twophoton.pulses import Gaussian
from twophoton.scenarios import ConfigError


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data, sort_keys=False))
    return str(path)


def read_rows(path):
    return list(csv.reader(open(path)))


SWEEP = {
    "name": "s",
    "pulse_alpha": {"kind": "gaussian", "sigma": 0.5},
    "pulse_beta": {"kind": "gaussian", "sigma": 0.5},
    "sweep": {"axes": {"pulse_beta.delay": [0.0, 2.0], "pulse_alpha.sigma": [0.5, 1.0]}, "quantity": ["p_overlap", "rho2424_inf"]},
}


def test_sweep_writes_ordered_table(tmp_path, monkeypatch):
    monkeypatch.setenv("TWOPHOTON_WORKERS", "1")
    assert cli.main(["sweep", write_yaml(tmp_path / "s.yaml", SWEEP), "--out", str(tmp_path / "o")]) == 0
    rows = read_rows(tmp_path / "o" / "sweep.csv")
    assert rows[0] == ["pulse_beta.delay", "pulse_alpha.sigma", "p_overlap", "rho2424_inf", "error"]
    assert [(float(r[0]), float(r[1])) for r in rows[1:]] == [(0, 0.5), (0, 1), (2, 0.5), (2, 1)]
    want = analytic.two_photon_spectral(Gaussian(sigma=1.0), Gaussian(sigma=0.5, delay=2.0), scenarios.parse_params(None))
    assert float(rows[4][3]) == pytest.approx(want.rho_2424, abs=1e-11)


def test_sweep_is_byte_identical_across_runs_and_workers(tmp_path, monkeypatch):
    cfg = write_yaml(tmp_path / "s.yaml", SWEEP)
    outs = []
    for k, n in enumerate(("1", "1", "2")):
        monkeypatch.setenv("TWOPHOTON_WORKERS", n)
        assert cli.main(["sweep", cfg, "--out", str(tmp_path / f"o{k}")]) == 0
        outs.append((tmp_path / f"o{k}" / "sweep.csv").read_bytes())
    assert outs[0] == outs[1] == outs[2]


def test_failed_point_goes_to_error_column(tmp_path, monkeypatch):
    monkeypatch.setenv("TWOPHOTON_WORKERS", "1")
    cfg = dict(SWEEP, sweep={"axes": {"pulse_alpha.sigma": [0.5, -1.0]}, "quantity": "p_alpha"})
    assert cli.main(["sweep", write_yaml(tmp_path / "s.yaml", cfg), "--out", str(tmp_path / "o")]) == 0
    rows = read_rows(tmp_path / "o" / "sweep.csv")
    assert rows[1][1] != "" and rows[1][2] == ""
    assert rows[2][1] == "" and "sigma" in rows[2][2]


@pytest.mark.parametrize(
    "mutate, field",
    [
        (lambda c: c["sweep"].update(axes={}), "sweep.axes"),
        (lambda c: c["sweep"]["axes"].update({"pulse_beta.delay": []}), "sweep.axes.pulse_beta.delay"),
        (lambda c: c["sweep"].update(quantity="nonsense"), "sweep.quantity"),
        (lambda c: c["pulse_alpha"].update(sigmaa=1.0), "pulse_alpha.sigmaa"),
        (lambda c: c.update(engine="fast"), "engine"),
    ],
)
def test_config_errors_exit_2_and_name_field(tmp_path, capsys, mutate, field):
    import copy

    cfg = copy.deepcopy(SWEEP)
    mutate(cfg)
    assert cli.main(["sweep", write_yaml(tmp_path / "s.yaml", cfg)]) == 2
    assert field in capsys.readouterr().err


def test_unknown_target_exit_2(capsys):
    assert cli.main(["run", "no_such_scenario"]) == 2
    assert "fig2" in capsys.readouterr().err


def test_numerical_failure_exit_3(tmp_path, capsys):
    cfg = {
        "name": "unstable",
        "params": {"gamma1": 5.0, "gamma2": 5.0, "gamma3": 5.0, "gamma4": 5.0},
        "pulse_alpha": {"kind": "exponential", "kappa": 5.0},
        "engine": "gdm",
        "integration": {"dt": 3.0},
    }
    assert cli.main(["run", write_yaml(tmp_path / "u.yaml", cfg), "--out", str(tmp_path / "o")]) == 3
    assert "IntegrationError" in capsys.readouterr().err


def test_run_writes_outputs(tmp_path):
    assert cli.main(["run", "fig2", "--out", str(tmp_path)]) == 0
    for name in ("steady.csv", "trajectory_gdm.csv", "trajectory_liouvillian.csv", "bridge.csv", "flux.csv", "notes.txt"):
        assert (tmp_path / name).exists(), name
    rows = {r[0]: r for r in read_rows(tmp_path / "steady.csv")}
    assert rows["engine"] == ["engine", "P0", "P2", "P4", "P2_plus_P4"]
    assert float(rows["gdm"][1]) == pytest.approx(0.346, abs=0.01)
    assert float(rows["analytic"][3]) == pytest.approx(0.418, abs=0.01)


def test_run_is_deterministic(tmp_path):
    for k in range(2):
        assert cli.main(["run", "fig3", "--no-table", "--out", str(tmp_path / str(k))]) == 0
    for name in ("steady.csv", "trajectory_gdm.csv", "bridge.csv"):
        assert (tmp_path / "0" / name).read_bytes() == (tmp_path / "1" / name).read_bytes()


def test_named_scenarios_are_immutable():
    a = scenarios.named_config("fig2")
    a["pulse_alpha"]["sigma"] = 9.0
    assert scenarios.named("fig2").pulse_alpha.sigma == 0.5
    with pytest.raises(Exception):
        scenarios.named("fig2").dt = 1.0


def test_sigma_swap_symmetry_through_sweep():
    base = scenarios.named_config("fig8")
    axes = {"pulse_alpha.sigma": [0.5, 2.0], "pulse_beta.sigma": [0.5, 2.0], "pulse_beta.delay": [1.0]}
    _, rows = cli.sweep_table(base, axes, ["rho2424_inf"], n_workers=1)
    val = {(r[0], r[1]): r[3] for r in rows}
    assert abs(val[0.5, 2.0] - val[2.0, 0.5]) < 1e-4


def test_sweep_table_rejects_empty_axes():
    with pytest.raises(ConfigError):
        cli.sweep_table(scenarios.named_config("fig2"), {}, ["p_alpha"])


def test_worker_env_validated(monkeypatch):
    monkeypatch.setenv("TWOPHOTON_WORKERS", "0")
    with pytest.raises(ConfigError):
        cli.workers()
    monkeypatch.setenv("TWOPHOTON_WORKERS", "3")
    assert cli.workers() == 3


def test_validate_subcommand(tmp_path, capsys):
    cfg = scenarios.named_config("fig5")
    cfg["pulse_beta"]["delay"] = 2.0
    path = write_yaml(tmp_path / "v.yaml", cfg)
    assert cli.main(["validate", path]) == 0
    assert "bridge max deviation" in capsys.readouterr().out
    assert cli.main(["validate", path, "--tol", "1e-30"]) == 3


def test_povm_subcommand(tmp_path, capsys):
    cfg = {"povm": {"order": 1, "T": 5.0}, "pulse_alpha": {"kind": "gaussian", "sigma": 0.5, "delay": 2.5}}
    assert cli.main(["povm", write_yaml(tmp_path / "p.yaml", cfg), "--out", str(tmp_path / "o"), "--states", "2"]) == 0
    out = capsys.readouterr().out
    assert "trace 2.25" in out and "detection probability" in out
    assert (tmp_path / "o" / "spectrum.csv").exists() and (tmp_path / "o" / "state_1.csv").exists()
    cfg["povm"]["n"] = 10
    assert cli.main(["povm", write_yaml(tmp_path / "q.yaml", cfg)]) == 2


def test_console_script_help():
    r = subprocess.run([sys.executable, "-m", "twophoton.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "validate" in r.stdout


def test_shipped_configs_parse():
    from pathlib import Path

    root = Path(__file__).resolve().parent.parent / "configs"
    paths = sorted(root.glob("*.yaml"))
    assert paths
    for p in paths:
        cfg = scenarios.load_config(p)
        if "sweep" in cfg:
            cli.parse_sweep(cfg)
        if "povm" not in cfg:
            scenarios.parse_scenario(cfg, p.parent)
