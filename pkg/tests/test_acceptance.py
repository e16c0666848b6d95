"""Acceptance criteria, each at its stated tolerance.

Every check records one ``criterion N: PASS|FAIL`` line (printed in the
pytest summary, or to stdout when run as a script). Criteria that cannot
be met as stated are still evaluated at full tolerance and marked
``xfail(strict=True)``: they report FAIL here, and the suite flags them if
they ever start passing.
"""

from __future__ import annotations

import math
import time
from pathlib import Path

import numpy as np
import pytest

from nutsim import PowderScheme, SequenceSpec, SpinSystem, spin
from nutsim.cli import main as cli_main
from nutsim.experiment import run_adnf_arnf, run_phase_cycle, sweep_omega1, sweep_retention
from nutsim.hamiltonian import (
    GAMMA_1H,
    DipolarCoupling,
    average_dipolar_closed,
    average_dipolar_numeric,
    dipolar_coefficient,
    dipolar_constant,
    g_coefficients,
    nutation_profile,
    pair_operator,
    static_average_check,
)
from nutsim.propagation import expm_steps, ordered_product
from nutsim.waveform import phase_correction, phase_correction_adnf_closed, segment_envelopes, synthesize
from tests import oracles

try:
    from tests.conftest import ACCEPTANCE_LINES
except ImportError:  # run as a script
    ACCEPTANCE_LINES = []

TWO_PI = 2 * math.pi
SEED = 20240601
D5 = -TWO_PI * 5e3
WR = TWO_PI * 20e3

# Oracle run of criterion 7 (n=144 golden spiral, settings in test_criterion_7):
# |m| at omega1 = wr, wr/2, 0.3 wr. [DERIVED]
CRIT7_FROZEN = {"r3": 0.181945922, "horror": 0.281687317, "off": 0.044302326}
CRIT7_RATIO_R3, CRIT7_RATIO_HORROR = 4.0, 2.0


def record(label: str, ok: bool, detail: str) -> bool:
    line = f"criterion {label}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def triangle() -> SpinSystem:
    """Equilateral proton triangle with |d| = 2pi 5 kHz on every edge."""
    r = (-dipolar_constant(GAMMA_1H, 1.0) / (TWO_PI * 5e3)) ** (1 / 3)
    return SpinSystem.from_positions(r * np.array([[0, 0, 0], [1, 0, 0], [0.5, math.sqrt(3) / 2, 0]]))


def random_couplings(n, rng):
    return [DipolarCoupling(0, 1, D5, math.acos(rng.uniform(-1, 1)), rng.uniform(0, TWO_PI)) for _ in range(n)]


def test_criterion_1_phase_correction_closed_form():
    rng = np.random.default_rng(SEED)
    worst, t_closed = 0.0, 0.0
    for k in range(20):
        tau = rng.uniform(2e-4, 4e-3)
        w1 = math.pi / tau if k == 0 else TWO_PI * rng.uniform(1e3, 60e3)
        w2 = TWO_PI * rng.uniform(1e3, 30e3)
        t = np.sort(rng.uniform(0, tau, 1000))
        start = time.perf_counter()
        closed = phase_correction_adnf_closed(t, w1, w2, tau)
        t_closed += time.perf_counter() - start
        worst = max(worst, float(np.abs(closed - oracles.phi_prime_quad(t, w1, w2, tau)).max()))
    ok = worst <= 1e-9 and t_closed < 1.0
    assert record("1", ok, f"max |closed - quad| = {worst:.2e} rad (<= 1e-9), closed-form time {t_closed:.3f} s (< 1 s)")


def _factorization_error(dt):
    spec = SequenceSpec(omega1=TWO_PI * 20e3, omega2=TWO_PI * 20e3, tau=2e-3, t_retention=2e-3,
                        static_mode=True, dt=dt)
    prog = synthesize(spec)
    x, y, z = (spin.collective_operator(a, 1) for a in "xyz")
    h = prog.amplitude[:, None, None] * (np.cos(prog.phase)[:, None, None] * x + np.sin(prog.phase)[:, None, None] * y)
    u_hw = ordered_product(expm_steps(h, spec.dt))
    adnf, arnf = segment_envelopes(spec)
    phi_end = phase_correction(spec.tau, adnf, spec.omega1) + phase_correction(spec.duration, arnf, spec.omega1, spec.arnf_zeta())
    corr = spin.expm_skew(z, -phi_end)
    u_exact = oracles.uncoupled_u1u2(spec.omega1, spec.omega2, spec.tau, spec.t_retention, spec.arnf_zeta())
    return float(np.linalg.norm(corr @ u_hw - u_exact))


@pytest.mark.xfail(strict=True, reason="25 ns sample-and-hold error of the waveform is ~1e-4 (O(dt^2)); see ledger")
def test_criterion_2_propagator_factorization():
    start = time.perf_counter()
    err = _factorization_error(25e-9)
    elapsed = time.perf_counter() - start
    halved = _factorization_error(12.5e-9)
    ok = err <= 1e-6 and elapsed < 5
    assert record("2", ok, f"||e^(i phi' Iz) U_hw - U1 U2||_F = {err:.2e} (<= 1e-6) at dt = 25 ns, {elapsed:.2f} s (< 5 s); "
                           f"at 12.5 ns {halved:.2e} (ratio {err / halved:.2f}, sampling error is O(dt^2))")


def test_criterion_3_average_hamiltonian_equivalence():
    start = time.perf_counter()
    rng = np.random.default_rng(SEED + 3)
    worst = {1: 0.0, 2: 0.0}
    worst_off = 0.0
    for c in random_couplings(50, rng):
        for k, w1 in ((1, WR / 2), (2, WR)):
            closed = average_dipolar_closed(c, k)
            num = average_dipolar_numeric(c, w1, WR)
            worst[k] = max(worst[k], float(np.linalg.norm(num - closed) / max(np.linalg.norm(closed), 1e-300)))
        worst_off = max(worst_off, float(np.linalg.norm(average_dipolar_numeric(c, 0.37 * WR, WR)) / abs(c.d)))
    elapsed = time.perf_counter() - start
    ok = max(worst.values()) <= 1e-6 and worst_off <= 1e-3 and elapsed < 10
    assert record("3", ok, f"rel. Frobenius k=1 {worst[1]:.1e}, k=2 {worst[2]:.1e} (<= 1e-6); "
                           f"0.37 wr norm/|d| {worst_off:.1e} (<= 1e-3); {elapsed:.1f} s (< 10 s)")


def test_criterion_4_double_quantum_structure():
    rng = np.random.default_rng(SEED + 4)
    worst = 0.0
    for c in random_couplings(20, rng):
        for k, w1 in ((1, WR / 2), (2, WR)):
            gk = g_coefficients(c)[k - 1]
            expected = np.zeros((4, 4), dtype=complex)
            expected[0, 3] = 0.375 * gk * np.exp(1j * k * c.gamma_D)
            expected[3, 0] = 0.375 * gk * np.exp(-1j * k * c.gamma_D)
            closed = average_dipolar_closed(c, k)
            mask = np.ones((4, 4), bool)
            mask[0, 3] = mask[3, 0] = False
            if np.any(closed[mask] != 0):
                worst = math.inf
            for m in (closed, average_dipolar_numeric(c, w1, WR)):
                worst = max(worst, float(np.abs(m - expected).max() / abs(c.d)))
    ok = worst <= 1e-9
    assert record("4", ok, f"max entry deviation from (3/8) G_k e^(+-ik gamma) pattern = {worst:.1e} |d| (<= 1e-9)")


def test_criterion_5_static_relation():
    start = time.perf_counter()
    rng = np.random.default_rng(SEED + 5)
    worst = 0.0
    for beta in rng.uniform(0, math.pi, 10):
        lhs, rhs = static_average_check(DipolarCoupling(0, 1, D5, beta), TWO_PI * 50e3)
        worst = max(worst, float(np.linalg.norm(lhs - rhs) / np.linalg.norm(rhs)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-8 and elapsed < 5
    assert record("5", ok, f"relative Frobenius {worst:.1e} (<= 1e-8), {elapsed:.2f} s (< 5 s)")


def crit6_spec(tau):
    # retention chosen so omega1 (2 tau + T) = pi/2 mod 2pi: the recovered signal is transverse
    return SequenceSpec(omega1=TWO_PI * 100e3, omega2=TWO_PI * 20e3, tau=tau, t_retention=2.5e-6,
                        static_mode=True, zeta_arnf="auto")


def test_criterion_6_static_baseline():
    start = time.perf_counter()
    pair = SpinSystem.pair(D5, math.pi / 2)
    m = [abs(run_adnf_arnf(crit6_spec(tau), pair).recovered_m) for tau in (2e-3, 4e-3)]
    elapsed = time.perf_counter() - start
    ok = m[0] >= 0.8 and m[1] >= 0.99 * m[0] and elapsed < 30
    assert record("6", ok, f"|m|(tau=2 ms) = {m[0]:.4f} (>= 0.8), |m|(4 ms) = {m[1]:.4f} (>= 0.99 x), {elapsed:.1f} s (< 30 s)")


@pytest.mark.slow
def test_criterion_7_recoupling_selectivity():
    start = time.perf_counter()
    spec = SequenceSpec(omega1=WR, omega2=TWO_PI * 2e3, tau=2e-3, omega_r=WR, t_retention=1e-4,
                        zeta_arnf="auto", dt=1e-7)
    res = sweep_omega1(spec, SpinSystem.pair(D5), PowderScheme.golden_spiral(144), [WR, WR / 2, 0.3 * WR])
    r3, horror, off = np.abs(res.recovered)
    elapsed = time.perf_counter() - start
    frozen_ok = np.allclose([r3, horror, off], list(CRIT7_FROZEN.values()), atol=1e-6)
    ok = r3 >= CRIT7_RATIO_R3 * off and horror >= CRIT7_RATIO_HORROR * off and elapsed < 600 and frozen_ok
    assert record("7", ok, f"|m| R3 {r3:.4f}, HORROR {horror:.4f}, 0.3 wr {off:.4f}: ratios {r3 / off:.2f} (>= 4), "
                           f"{horror / off:.2f} (>= 2); matches frozen oracle: {frozen_ok}; {elapsed:.0f} s (< 600 s)")


def crit8_sweeps():
    spec = SequenceSpec(omega1=TWO_PI * 30e3, omega2=TWO_PI * 18e3, tau=2e-3, static_mode=True, dt=1e-7)
    ts = np.arange(8) * 2e-6
    scheme = PowderScheme.single_crystal(math.pi / 2, 0.0)
    tri = triangle()
    unc = sweep_retention(spec, tri, scheme, ts, compensate=False)
    comp = sweep_retention(spec, tri, scheme, ts, compensate=True)
    expected = np.mod(spec.omega1 * (2 * spec.tau + ts), TWO_PI)
    dev = np.degrees(np.abs(np.angle(np.exp(1j * (unc.rotation - expected)))))
    return dev, np.abs(comp.recovered)


_crit8 = {}


def _crit8_cached():
    if not _crit8:
        start = time.perf_counter()
        _crit8["dev"], _crit8["comp"] = crit8_sweeps()
        _crit8["elapsed"] = time.perf_counter() - start
    return _crit8


def test_criterion_8a_uncompensated_rotation():
    c = _crit8_cached()
    ok = c["dev"].max() <= 5.0 and c["elapsed"] < 300
    assert record("8a", ok, f"max |rotation - omega1 (2 tau + T)| = {c['dev'].max():.2f} deg (<= 5 deg), "
                            f"{c['elapsed']:.0f} s (< 300 s)")


@pytest.mark.xfail(strict=True, reason="few-spin dipolar state is not symmetric about x; ARNF phase changes |m|; see ledger")
def test_criterion_8b_compensated_flatness():
    c = _crit8_cached()
    spread = float(np.abs(c["comp"] / c["comp"].mean() - 1).max())
    ok = spread <= 0.02
    assert record("8b", ok, f"compensated |m| in [{c['comp'].min():.3f}, {c['comp'].max():.3f}], "
                            f"max deviation from mean {spread:.1%} (<= 2%)")


def test_criterion_9a_locked_magnetization_cancels():
    spec = SequenceSpec(omega1=TWO_PI * 20e3, omega2=TWO_PI * 20e3, tau=2e-3, static_mode=True)
    res = run_phase_cycle(spec, SpinSystem(1, ()), rho0=spin.collective_operator("x", 1))
    ok = abs(res.recovered_m) <= 1e-10
    assert record("9a", ok, f"|cycle output| for injected I_x = {abs(res.recovered_m):.1e} (<= 1e-10)")


@pytest.mark.xfail(strict=True, reason="single shot keeps the residual Zeeman pathway the cycle removes; see ledger")
def test_criterion_9b_dipolar_pathway_survives_cycle():
    spec = crit6_spec(2e-3).with_(zeta_arnf=0.0)
    pair = SpinSystem.pair(D5, math.pi / 2)
    single = run_adnf_arnf(spec, pair).recovered_m
    cycled = run_phase_cycle(spec, pair).recovered_m
    diff = abs(single - cycled)
    ok = diff <= 1e-8
    assert record("9b", ok, f"|cycle - single shot (zeta=0)| = {diff:.2e} (<= 1e-8); single {single:.4f}, cycle {cycled:.4f}")


def test_criterion_10_mid_sequence_dipolar_order():
    spec = SequenceSpec(omega1=WR, omega2=TWO_PI * 2e3, tau=4e-3, omega_r=WR, t_retention=2e-4,
                        zeta_arnf="auto", dt=1e-7)
    res = run_adnf_arnf(spec, triangle(), (1.0, 0.5))
    mid = res.trajectory.value_at(spec.tau + spec.t_retention / 2)
    ok = mid["dipolar_order"] >= 0.5
    assert record("10", ok, f"R3, three-spin cluster: metric at tau + T/2 = {mid['dipolar_order']:.3f} (>= 0.5)")


def test_criterion_11_numerics_hygiene():
    n_steps = 100_000
    spec = SequenceSpec(omega1=WR, omega2=TWO_PI * 5e3, tau=1.25e-3, omega_r=WR, dt=25e-9)
    assert spec.n_total == n_steps
    pair = SpinSystem.pair(D5, 0.9, 0.3)
    t = (np.arange(n_steps) + 0.5) * spec.dt
    x, y, z = (spin.collective_operator(a, 2) for a in "xyz")
    w2, zeta = nutation_profile(spec, t)
    arg = spec.omega1 * t + zeta
    h = (spec.omega1 * x + (w2 * np.cos(arg))[:, None, None] * z - (w2 * np.sin(arg))[:, None, None] * y
         + dipolar_coefficient(pair.couplings[0], WR, t)[:, None, None] * pair_operator(0, 1, 2))
    u = ordered_product(expm_steps(h, spec.dt))
    unitarity = float(np.abs(u.conj().T @ u - np.eye(4)).max())
    rho0 = z
    rho = run_adnf_arnf(spec, pair).rho
    trace = abs(np.trace(rho))
    drift = abs(np.trace(rho @ rho).real - np.trace(rho0 @ rho0).real)

    short = SequenceSpec(omega1=WR, omega2=TWO_PI * 5e3, tau=2e-4, omega_r=WR, dt=1e-7)
    finals = [run_adnf_arnf(short.with_(dt=dt), pair).rho for dt in (1e-7, 5e-8, 2.5e-8)]
    ratio = np.linalg.norm(finals[0] - finals[1]) / np.linalg.norm(finals[1] - finals[2])
    ok = unitarity <= 1e-10 and trace <= 1e-10 and drift <= 1e-8 and abs(ratio - 4) <= 0.5
    assert record("11", ok, f"1e5 steps: ||U^+U - 1|| {unitarity:.1e}, |Tr rho| {trace:.1e}, Tr rho^2 drift {drift:.1e}; "
                            f"Richardson ratio {ratio:.3f} (4 +- 0.5)")


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
system.beta_d_rad = 0.8
powder.scheme = golden_spiral
powder.n = 5
sweep.param = omega1
sweep.values = 20000,10000
"""


def _run_all(cfg: Path, out: Path, threads: str) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    runs = {
        "waveform": ["waveform", "--out", str(out / "wf.csv")],
        "avgham": ["avgham", "--out", str(out / "avg.csv")],
        "simulate": ["simulate", "--out", str(out / "sim")],
        "sweep": ["sweep", "--out", str(out / "sweep.csv")],
    }
    for name, args in runs.items():
        assert cli_main([args[0], "--config", str(cfg), "--threads", threads] + args[1:]) == 0, name
    return {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*.csv"))}


def test_criterion_12_determinism(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(SMALL_MAS)
    first = _run_all(cfg, tmp_path / "a", "1")
    second = _run_all(cfg, tmp_path / "b", "3")
    # rerun every subcommand from its own echoed config
    echoes = {"wf.csv.config", "avg.csv.config", "sim/config.echo", "sweep.csv.config"}
    same_echo = len({(tmp_path / "a" / e).read_text() for e in echoes}) == 1
    third = _run_all(tmp_path / "a" / "sim" / "config.echo", tmp_path / "c", "2")
    ok = same_echo and first == second == third and len(first) >= 6
    assert record("12", ok, f"{len(first)} CSVs byte-identical across --threads 1/3 and echoed-config rerun: "
                            f"{first == second == third}")


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
