import csv
import json
import os

import pytest

from thinspec import cli


def run(tmp_path, *args):
    return cli.main(list(args) + ["--out", str(tmp_path)])


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_validate_catalog(tmp_path):
    assert run(tmp_path, "validate", "--problem", "pt_well") == 0
    rows = read_csv(tmp_path / "validate.csv")
    assert rows[0] == ["check", "value", "ok"]
    assert all(r[2] == "1" for r in rows[1:])
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["validate"]["ok"] is True


def test_validate_inline_mutant(tmp_path, capsys):
    assert run(tmp_path, "validate", "--problem", "A12=xi^2") == 2
    rows = read_csv(tmp_path / "validate.csv")
    bad = [r for r in rows if r[2] == "0"]
    assert bad and bad[0][0] == "A12 odd"
    assert "A12 odd" in capsys.readouterr().err


def test_hypothesis_failure_blocks_other_experiments(tmp_path):
    assert run(tmp_path, "spectrum", "--problem", "A12=xi^2", "--eps", "0.1") == 2
    assert not os.path.exists(tmp_path / "spectrum.csv")


def test_bad_input(tmp_path, capsys):
    assert run(tmp_path, "validate", "--problem", "nope") == 1
    assert run(tmp_path, "validate", "--problem", "shear", "--set", "zz=1") == 1
    assert run(tmp_path, "validate", "--problem", "A12=xi+") == 1
    assert run(tmp_path, "spectrum", "--problem", "shear", "--grid", "12,301,2") == 1
    err = capsys.readouterr().err
    assert "coeffexpr.parse" in err and "disc.build_grid" in err
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 1


def test_numerical_failure(tmp_path, capsys):
    # resolvent at a limiting eigenvalue: the line solve is singular
    from thinspec import disc, model, spectral
    lam = spectral.eigs_near(disc.limiting_operator(model.catalog("pt_well"), 12, 121), -0.9, 1).eigenvalues[0]
    code = run(tmp_path, "sweep-res", "--problem", "pt_well", "--grid", "12,121,9", "--eps", "0.2,0.1,0.05",
               f"--lambda={float(lam.real)!r},0")
    assert code == 3
    assert "spectral.solve_linear" in capsys.readouterr().err
    assert not os.path.exists(tmp_path / "summary.json")


def test_dry_run_touches_nothing(tmp_path, capsys):
    out = tmp_path / "o"
    assert cli.main(["sweep-eig", "--problem", "shear", "--set", "c12=0.5", "--out", str(out), "--dry-run"]) == 0
    text = capsys.readouterr().out
    assert "[problem]" in text and "c12 = 0.5" in text and "alpha0" in text
    assert not out.exists()


def test_config_round_trip(tmp_path, capsys):
    cli.main(["asymptotics", "--problem", "fullmix", "--grid", "10,101,9", "--dry-run"])
    cfg = tmp_path / "run.ini"
    cfg.write_text(capsys.readouterr().out)
    cli.main(["asymptotics", "--config", str(cfg), "--dry-run"])
    again = capsys.readouterr().out
    assert again == cfg.read_text()


def test_sweep_eig_byte_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["sweep-eig", "--problem", "shear", "--eps", "0.2,0.1,0.05,0.025", "--grid", "12,201,9"]
    assert cli.main(args + ["--out", str(a)]) == 0
    assert cli.main(args + ["--out", str(b), "--jobs", "2"]) == 0
    for name in ("sweep_eig.csv", "summary.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    rows = read_csv(a / "sweep_eig.csv")
    assert rows[-3][0] == "fitted_rate" and float(rows[-3][1]) > 0.9
    assert not [p for p in os.listdir(a) if p.startswith(".tmp")]


@pytest.mark.parametrize("exp,files", [
    ("limiting", ["limiting_coefficients.csv", "limiting_eigenvalues.csv"]),
    ("spectrum", ["spectrum.csv"]),
    ("asymptotics", ["asymptotics.csv"]),
    ("sweep-res", ["sweep_res_L2.csv", "sweep_res_H1.csv"]),
])
def test_experiments_write_reports(tmp_path, exp, files):
    assert run(tmp_path, exp, "--problem", "shear", "--grid", "12,121,9", "--eps", "0.2,0.1,0.05") == 0
    for f in files + ["summary.json"]:
        assert (tmp_path / f).exists()


def test_residual_experiment(tmp_path):
    cfg = tmp_path / "r.ini"
    cfg.write_text("[problem]\nname = shear\n[grid]\nNx = 121\n[residual]\nN = 2\nNt = 33\n")
    assert cli.main(["residual", "--config", str(cfg), "--eps", "0.2,0.1,0.05", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "residual_N2.csv").exists()


def test_lambda_flag(tmp_path):
    assert run(tmp_path, "sweep-res", "--problem", "free", "--grid", "12,121,9", "--eps", "0.2,0.1,0.05",
               "--lambda=-1,0.5") == 0
    s = json.loads((tmp_path / "summary.json").read_text())
    assert s["sweep_res"]["L2"]["meta"]["lam_im"] == 0.5


def test_seed_recorded(tmp_path, monkeypatch):
    monkeypatch.setenv("THINSPEC_SEED", "42")
    assert run(tmp_path, "validate", "--problem", "free") == 0
    assert json.loads((tmp_path / "summary.json").read_text())["seed"] == 42
