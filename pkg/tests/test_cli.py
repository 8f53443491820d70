import math

import pytest

from freqbin import HEADER
from freqbin.cli import main, parse_angle


def run(tmp_path, *args):
    return main([*args, "--out", str(tmp_path)])


@pytest.mark.parametrize("text,value", [
    ("0", 0.0), ("pi", math.pi), ("pi/2", math.pi / 2), ("3pi/4", 0.75 * math.pi),
    ("-pi/2", -math.pi / 2), ("0.25", 0.25),
])
def test_parse_angle(text, value):
    assert parse_angle(text) == pytest.approx(value)


def test_herald_outputs(tmp_path):
    assert run(tmp_path, "herald", "--p-grid", "0:1:5") == 0
    lines = (tmp_path / "loss_sweep.csv").read_text().splitlines()
    assert lines[0] == HEADER
    assert lines[2] == "0,0,1,1"
    summary = (tmp_path / "remote_summary.txt").read_text()
    assert summary.startswith(HEADER)
    assert "witness 1" in summary


def test_spectroscopy_summary(tmp_path):
    code = run(tmp_path, "spectroscopy", "--freq-start", "0.64", "--freq-stop", "0.76",
               "--amps", "0,1.1", "--jobs", "1")
    assert code == 0
    text = (tmp_path / "spectroscopy_param_summary.txt").read_text()
    sep = [float(x.split()[-1]) for x in text.splitlines() if "dip_separation_MHz" in x]
    assert sep and abs(sep[0] - 92.0) <= 1.0
    assert "amp 0 min_population" in text and "dips_GHz none" in text
    csv = (tmp_path / "spectroscopy_param.csv").read_text().splitlines()
    assert csv[:2] == [HEADER, "freq_GHz,amp,population"]


def test_noisy_run_requires_seed(tmp_path, capsys):
    assert run(tmp_path, "moments") == 2
    assert "seed-required" in capsys.readouterr().err


def test_usage_errors(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        main(["tomography", "--kind", "bogus"])
    assert exc.value.code == 2
    assert run(tmp_path, "herald", "--set", "nope=1") == 2
    assert "bad-override" in capsys.readouterr().err
    assert run(tmp_path, "herald", "--theta", "7") == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("T2_ge_us = 100\n")
    assert run(tmp_path, "herald", "--config", str(bad)) == 4  # T2 > 2 T1


def test_numerical_failure_exit_code(tmp_path, capsys):
    # a drive step far too coarse for the dynamics
    assert run(tmp_path, "emit", "--dt", "0.05", "--jobs", "1") == 3
    assert "step-size-too-large" in capsys.readouterr().err


def test_emit_theta_zero(tmp_path):
    assert run(tmp_path, "emit", "--theta", "0", "--ideal") == 0
    text = (tmp_path / "emit_summary.txt").read_text()
    n_S = [float(x.split()[3]) for x in text.splitlines() if x.startswith("mode S")][0]
    assert n_S < 1e-3


def test_moments_infinite_shots(tmp_path):
    assert run(tmp_path, "moments", "--shots", "0", "--ideal", "--theta", "pi/2") == 0
    assert (tmp_path / "moments_0_ideal.csv").exists()
    assert not (tmp_path / "moments_0_raw.csv").exists()
