import math

import numpy as np
import pytest

from nutsim import config as cfgmod
from nutsim.cli import main
from nutsim.config import ConfigError

FIG1 = """\
sequence.omega1_hz = 20000
sequence.omega2_hz = 20000
sequence.tau_s = 0.002
sequence.retention_s = 0.002
sequence.zeta_arnf_rad = auto
sequence.static = true
"""

SMALL_MAS = """\
sequence.omega1_hz = 20000
sequence.omega2_hz = 2000
sequence.tau_s = 0.0002
sequence.retention_s = 1e-5
sequence.zeta_arnf_rad = auto
sequence.omega_r_hz = 20000
sequence.dt_s = 1e-7
sequence.detect = fid
sequence.fid_duration_s = 1e-4
sequence.fid_dwell_s = 1e-5
system.d_hz = -5000
powder.scheme = golden_spiral
powder.n = 5
"""


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_parse_and_render_roundtrip():
    cfg = cfgmod.resolve(cfgmod.parse_text(SMALL_MAS + "system.positions_angstrom = 0,0,0; 1,0,0\n"))
    again = cfgmod.resolve(cfgmod.parse_text(cfgmod.render(cfg)))
    assert again == cfg


@pytest.mark.parametrize(
    "text, key",
    [
        ("sequence.omega1_hz = 1\nsequence.omega2_hz = 1\n", "sequence.tau_s"),
        (FIG1 + "sequence.colour = red\n", "sequence.colour"),
        (FIG1 + "sequence.static = maybe\n", "sequence.static"),
        (FIG1 + "sequence.tau_s = 1\n", "sequence.tau_s"),
    ],
)
def test_config_errors_name_key(text, key):
    with pytest.raises(ConfigError) as err:
        cfgmod.resolve(cfgmod.parse_text(text))
    assert err.value.key == key
    assert key in str(err.value)


def test_frequencies_are_hz():
    spec = cfgmod.sequence_spec(cfgmod.resolve(cfgmod.parse_text(FIG1)))
    assert spec.omega1 == pytest.approx(2 * math.pi * 20e3)


def test_waveform_command(tmp_path, capsys):
    out = tmp_path / "wf.csv"
    assert main(["waveform", "--config", write(tmp_path, FIG1), "--out", str(out)]) == 0
    data = np.loadtxt(out, delimiter=",", skiprows=1)
    assert data[:, 1].max() == pytest.approx(2 * math.pi * 20e3 * math.sqrt(2), rel=1e-6)
    assert "duration" in capsys.readouterr().out
    assert (tmp_path / "wf.csv.config").exists()


def test_waveform_zero_omega2_constant(tmp_path):
    out = tmp_path / "wf.csv"
    main(["waveform", "--config", write(tmp_path, FIG1.replace("omega2_hz = 20000", "omega2_hz = 0")),
          "--out", str(out)])
    data = np.loadtxt(out, delimiter=",", skiprows=1)
    assert np.ptp(data[:, 1]) == 0 and np.ptp(data[:, 2]) == 0


def test_missing_tau_exit_2(tmp_path, capsys):
    text = "\n".join(line for line in FIG1.splitlines() if "tau" not in line)
    assert main(["waveform", "--config", write(tmp_path, text)]) == 2
    assert "tau" in capsys.readouterr().err


@pytest.mark.parametrize("w1, label", [(20000, "R3"), (10000, "HORROR"), (7400, "off-condition")])
def test_avgham(tmp_path, capsys, w1, label):
    text = f"sequence.omega1_hz = {w1}\nsequence.omega2_hz = 0\nsequence.tau_s = 1e-3\n" \
           "sequence.omega_r_hz = 20000\nsystem.d_hz = -5000\nsystem.beta_d_rad = 0.9\nsystem.gamma_d_rad = 0.3\n"
    assert main(["avgham", "--config", write(tmp_path, text), "--out", str(tmp_path / "m.csv")]) == 0
    out = capsys.readouterr().out
    assert label in out
    rel = float(out.split("relative ")[1].rstrip(")\n"))
    assert rel <= 1e-6 or label == "off-condition"
    if label == "off-condition":
        norm = float(out.split("numeric norm ")[1].split()[0])
        assert norm <= 1e-3 * 2 * math.pi * 5000


def test_avgham_beta_zero_both_zero(tmp_path, capsys):
    text = "sequence.omega1_hz = 20000\nsequence.omega2_hz = 0\nsequence.tau_s = 1e-3\n" \
           "sequence.omega_r_hz = 20000\nsystem.d_hz = -5000\n"
    assert main(["avgham", "--config", write(tmp_path, text)]) == 0
    assert "frobenius distance 0.000000e+00" in capsys.readouterr().out


def test_avgham_incommensurate_exit_3(tmp_path):
    text = f"sequence.omega1_hz = {20000 * math.sqrt(2)!r}\nsequence.omega2_hz = 0\nsequence.tau_s = 1e-3\n" \
           "sequence.omega_r_hz = 20000\nsystem.d_hz = -5000\nsystem.beta_d_rad = 0.9\n"
    assert main(["avgham", "--config", write(tmp_path, text)]) == 3


def test_simulate_detect_none(tmp_path):
    text = SMALL_MAS.replace("sequence.detect = fid", "sequence.detect = none")
    assert main(["simulate", "--config", write(tmp_path, text), "--out", str(tmp_path / "o")]) == 0
    files = sorted(p.name for p in (tmp_path / "o").iterdir())
    assert files == ["config.echo", "run.meta", "trajectory.csv"]


def test_sweep_errors(tmp_path):
    cfg = write(tmp_path, SMALL_MAS)
    assert main(["sweep", "--config", cfg, "--param", "omega2", "--values", "1"]) == 2
    assert main(["sweep", "--config", cfg, "--param", "omega1", "--values", ""]) == 2
    assert main(["sweep", "--config", cfg, "--param", "retention", "--values", "a,b"]) == 2


def test_threads_env_validation(tmp_path, monkeypatch):
    monkeypatch.setenv("SPINSIM_THREADS", "lots")
    assert main(["simulate", "--config", write(tmp_path, SMALL_MAS), "--out", str(tmp_path / "o")]) == 2
