import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nutsim import SequenceSpec
from nutsim.waveform import (
    EnvelopeSpec,
    WaveformFormatError,
    envelope,
    export_waveform,
    import_waveform,
    phase_correction,
    phase_correction_adnf_closed,
    rf_amplitude,
    rf_phase,
    synthesize,
    wrap_phase,
)
from tests import oracles

TWO_PI = 2 * math.pi


def fig1(**kw):
    base = dict(omega1=TWO_PI * 20e3, omega2=TWO_PI * 20e3, tau=2e-3, t_retention=2e-3, static_mode=True)
    base.update(kw)
    return SequenceSpec(**base)


def test_envelope_endpoints():
    w2, tau = TWO_PI * 18e3, 1e-3
    down = EnvelopeSpec("adnf_rampdown", w2, tau)
    up = EnvelopeSpec("arnf_rampup", w2, tau, t_start=3e-3)
    assert envelope(down, 0.0) == pytest.approx(w2)
    assert envelope(down, tau) == pytest.approx(0.0, abs=1e-9)
    assert envelope(up, 3e-3) == pytest.approx(0.0, abs=1e-9)
    assert envelope(up, 4e-3) == pytest.approx(w2)
    with pytest.raises(ValueError):
        envelope(down, 1.1 * tau)


def test_envelope_spec_validation():
    with pytest.raises(ValueError):
        EnvelopeSpec("triangle", 1.0, 1.0)
    with pytest.raises(ValueError):
        EnvelopeSpec("adnf_rampdown", 1.0, 0.0)
    with pytest.raises(ValueError):
        EnvelopeSpec("constant", -1.0)


def test_amplitude_and_phase_at_zero_field():
    assert rf_amplitude(0.3, 5.0, 0.0) == pytest.approx(5.0)
    assert rf_phase(0.3, 5.0, 0.0) == 0.0
    with pytest.raises(ValueError):
        rf_amplitude(0.0, 0.0, 1.0)


@settings(deadline=None, max_examples=25)
@given(
    st.floats(TWO_PI * 1e3, TWO_PI * 60e3),
    st.floats(TWO_PI * 1e3, TWO_PI * 30e3),
    st.floats(2e-4, 3e-3),
    st.floats(0, 2 * math.pi),
)
def test_phase_correction_matches_quadrature(w1, w2, tau, zeta):
    t = np.linspace(0, tau, 41)
    env = EnvelopeSpec("adnf_rampdown", w2, tau)
    ref = oracles.phi_prime_quad(t, w1, w2, tau, zeta)
    assert np.allclose(phase_correction(t, env, w1, zeta), ref, atol=1e-9, rtol=0)


def test_closed_form_at_degenerate_frequency():
    tau = 1e-3
    w1 = math.pi / tau
    t = np.linspace(0, tau, 101)
    ref = oracles.phi_prime_quad(t, w1, TWO_PI * 10e3, tau)
    assert np.allclose(phase_correction_adnf_closed(t, w1, TWO_PI * 10e3, tau), ref, atol=1e-9)


def test_arnf_phase_correction_uses_absolute_time():
    w1, w2, tau, t0 = TWO_PI * 7e3, TWO_PI * 3e3, 1e-3, 2.5e-3
    env = EnvelopeSpec("arnf_rampup", w2, tau, t_start=t0)
    from scipy.integrate import quad
    f = lambda s: -0.5 * w2 * (1 - math.cos(math.pi * (s - t0) / tau)) * math.cos(w1 * s + 0.4)
    for t in (t0 + 2e-4, t0 + tau):
        assert phase_correction(t, env, w1, 0.4) == pytest.approx(quad(f, t0, t, limit=200)[0], abs=1e-10)


def test_synthesize_shapes_and_first_sample():
    spec = fig1()
    prog = synthesize(spec)
    assert len(prog) == spec.n_total
    assert prog.duration == pytest.approx(spec.duration)
    first = prog.samples[0]
    # first sample sits half a step in; amplitude and phase are omega1 and 0 to first order in dt
    assert first.amplitude == pytest.approx(spec.omega1, rel=1e-5)
    assert abs(first.phase) < 2e-2


def test_retention_segment_constant():
    spec = fig1()
    prog = synthesize(spec)
    ret = slice(spec.n_ramp, spec.n_ramp + spec.n_retention)
    assert np.allclose(prog.amplitude[ret], spec.omega1)
    assert np.ptp(prog.phase[ret]) == 0.0


def test_zero_omega2_is_constant():
    prog = synthesize(fig1(omega2=0.0))
    assert np.all(prog.amplitude == prog.amplitude[0])
    assert np.all(prog.phase == 0.0)


def test_peak_amplitude_fig1():
    prog = synthesize(fig1(zeta_arnf="auto"))
    assert prog.amplitude.max() == pytest.approx(math.sqrt(2) * TWO_PI * 20e3, rel=1e-6)


@given(st.floats(-1e3, 1e3))
def test_wrap_phase_range(p):
    w = float(wrap_phase(p))
    assert -math.pi < w <= math.pi
    assert math.isclose(math.cos(w), math.cos(p), abs_tol=1e-9)


def test_export_import_roundtrip(tmp_path):
    spec = fig1(tau=2e-4, t_retention=1e-4)
    prog = synthesize(spec)
    path = export_waveform(prog, tmp_path / "wf.csv")
    back = import_waveform(path)
    assert np.array_equal(back.t, prog.t)
    assert np.array_equal(back.amplitude, prog.amplitude)
    assert np.allclose(np.exp(1j * back.phase), np.exp(1j * prog.phase), atol=1e-12)
    assert back.dt == pytest.approx(spec.dt, rel=1e-9)
    assert path.read_bytes().count(b"\r") == 0


@pytest.mark.parametrize(
    "body, msg",
    [
        ("", "empty"),
        ("a,b,c\n1,2,3\n2,3,4\n", "header"),
        ("t_s,amplitude_rad_per_s,phase_rad\n0,1,0\n", "two samples"),
        ("t_s,amplitude_rad_per_s,phase_rad\n0,1,0\n1,x,0\n", "non-numeric"),
        ("t_s,amplitude_rad_per_s,phase_rad\n0,1,0\n1,1\n", "3 columns"),
        ("t_s,amplitude_rad_per_s,phase_rad\n0,1,0\n0,1,0\n", "increasing"),
        ("t_s,amplitude_rad_per_s,phase_rad\n0,1,0\n1,1,0\n3,1,0\n", "non-uniform"),
    ],
)
def test_import_rejects(tmp_path, body, msg):
    p = tmp_path / "bad.csv"
    p.write_text(body)
    with pytest.raises(WaveformFormatError, match=msg):
        import_waveform(p)


def test_sequence_validation():
    with pytest.raises(ValueError, match="200th"):
        fig1(dt=1e-6)
    with pytest.raises(ValueError, match="divide"):
        fig1(tau=2.00001e-3)
    with pytest.raises(ValueError, match="omega_r"):
        fig1(static_mode=False)
    with pytest.raises(ValueError):
        fig1(zeta_arnf="sometimes")


def test_auto_zeta_targets_minus_y():
    spec = fig1(zeta_arnf="auto")
    a = spec.nutation_angle + spec.arnf_zeta()
    assert math.cos(a) == pytest.approx(0.0, abs=1e-9)
    assert math.sin(a) == pytest.approx(1.0)
