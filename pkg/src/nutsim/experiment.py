"""Full-sequence drivers: ADNF/ARNF and ADRF/ARRF runs, phase cycling, powders, sweeps.

Runs over many crystallite orientations are batched: every time step builds
one ``(n_steps, n_orientations, d, d)`` stack of Hamiltonians and
exponentiates it in one call. Orientations never mix, so per-orientation
results are the same however the batch is split across threads.

Ideal-mode ADNF/ARNF is propagated in the nutating frame (interaction frame
of ``omega1 I_x``, worked in the eigenbasis of ``I_x``); the spin lock is
then applied exactly when states are reported. Hardware mode propagates the
sampled waveform in the rotating frame. Reported states and magnetizations
are always in the ideal rotating frame; hardware-mode states are brought
there by undoing the accumulated phase modulation ``phi'(t)``, as a receiver
tracking the transmitter phase would.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import spin
from .hamiltonian import (
    IncommensurateError,
    SpinSystem,
    commensurate_window,
    dipolar_coefficient,
    nutation_profile,
    pair_operator,
    _frequency_average,
    _steps_for,
)
from .propagation import TrajectoryRecord, expm_steps, ordered_product, transverse_operator
from .sequence import TWO_PI, SequenceSpec
from .waveform import envelope, phase_correction, segment_envelopes, synthesize

#: Upper bound on complex elements in one Hamiltonian stack.
_STACK_BUDGET = 1 << 20

PHASE_CYCLE_SHOTS = 8


# ---------------------------------------------------------------------------
# powder schemes


@dataclass(frozen=True)
class PowderScheme:
    kind: str
    orientations: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        object.__setattr__(self, "orientations", tuple(tuple(map(float, o)) for o in self.orientations))
        w = np.array([o[2] for o in self.orientations])
        if len(w) == 0 or np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise ValueError("orientation weights must be non-negative and sum to 1")
        if self.kind == "single_crystal" and len(w) != 1:
            raise ValueError("single_crystal has exactly one orientation")

    @property
    def n_orientations(self) -> int:
        return len(self.orientations)

    @property
    def weights(self) -> np.ndarray:
        return np.array([o[2] for o in self.orientations])

    @classmethod
    def single_crystal(cls, beta: float = 0.0, gamma: float = 0.0) -> "PowderScheme":
        return cls("single_crystal", ((beta, gamma, 1.0),))

    @classmethod
    def golden_spiral(cls, n: int = 144) -> "PowderScheme":
        """Equal-area Fibonacci points on the sphere; equal weights carry the sin(beta) measure."""
        if n < 1:
            raise ValueError("n must be >= 1")
        k = np.arange(n)
        beta = np.arccos(1 - (2 * k + 1) / n)
        golden = math.pi * (3 - math.sqrt(5))
        gamma = np.mod(k * golden, TWO_PI)
        return cls("golden_spiral", tuple(zip(beta, gamma, np.full(n, 1.0 / n))))

    @classmethod
    def uniform_grid(cls, n_beta: int, n_gamma: int) -> "PowderScheme":
        """Midpoint grid in beta and gamma with sin(beta) weights."""
        beta = (np.arange(n_beta) + 0.5) * math.pi / n_beta
        gamma = np.arange(n_gamma) * TWO_PI / n_gamma
        wb = np.sin(beta) / np.sin(beta).sum()
        pts = [(b, g, wb[i] / n_gamma) for i, b in enumerate(beta) for g in gamma]
        total = sum(p[2] for p in pts)
        return cls("uniform_grid", tuple((b, g, w / total) for b, g, w in pts))

    @classmethod
    def from_kind(cls, kind: str, n: int = 144, beta: float = 0.0, gamma: float = 0.0) -> "PowderScheme":
        if kind == "single_crystal":
            return cls.single_crystal(beta, gamma)
        if kind == "golden_spiral":
            return cls.golden_spiral(n)
        if kind == "uniform_grid":
            side = max(1, int(round(math.sqrt(n))))
            return cls.uniform_grid(side, side)
        raise ValueError(f"unknown powder scheme {kind!r}")


# ---------------------------------------------------------------------------
# results


@dataclass
class RunResult:
    """Outcome of one run (or a weighted combination of runs).

    ``magnetization`` is ``(Tr{rho I_x}, Tr{rho I_y}, Tr{rho I_z}) / Tr{I_z^2}``
    at the end of the sequence in the rotating frame and ``recovered_m`` is
    its transverse part ``m_x + i m_y``.
    """

    rho: np.ndarray
    trajectory: TrajectoryRecord
    recovered_m: complex
    magnetization: np.ndarray
    fid: Optional[np.ndarray] = None

    @property
    def rotation(self) -> float:
        """Angle of the final magnetization in the yz plane, measured from +z towards -y.

        A state ``I_z cos(a) - I_y sin(a)`` gives ``a``; this is the nutation
        angle gained about the rotating-frame x axis.
        """
        return math.atan2(-self.magnetization[1], self.magnetization[2])


@dataclass
class SweepResult:
    parameter: str
    values: np.ndarray
    recovered: np.ndarray
    rotation: np.ndarray
    meta: SequenceSpec
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if not len(self.values) == len(self.recovered) == len(self.rotation):
            raise ValueError("sweep columns must have equal length")


# ---------------------------------------------------------------------------
# batched engine


class _Batch:
    """Operators and per-orientation coupling data for a list of spin systems."""

    def __init__(self, systems: Sequence[SpinSystem], basis: Optional[np.ndarray] = None):
        self.systems = list(systems)
        first = self.systems[0]
        self.n = first.n_spins
        self.d = first.dim
        pairs = [(c.site_i, c.site_j) for c in first.couplings]
        for s in self.systems:
            if [(c.site_i, c.site_j) for c in s.couplings] != pairs:
                raise ValueError("all systems in a batch must share coupling topology")
        self.basis = np.eye(self.d, dtype=complex) if basis is None else basis
        b, bh = self.basis, self.basis.conj().T
        self.ops = {a: bh @ spin.collective_operator(a, self.n) @ b for a in spin.AXES}
        self.pair_ops = np.array([bh @ pair_operator(i, j, self.n) @ b for i, j in pairs]).reshape(-1, self.d, self.d)
        self.norm = float(np.real(np.trace(spin.collective_operator("z", self.n) @ spin.collective_operator("z", self.n))))

    @property
    def size(self) -> int:
        return len(self.systems)

    def dipolar(self, t: np.ndarray, omega_r: float, static_mode: bool) -> np.ndarray:
        """Summed dipolar Hamiltonian in the working basis, shape ``(nt, B, d, d)``."""
        out = np.zeros((len(t), self.size, self.d, self.d), dtype=complex)
        for b, s in enumerate(self.systems):
            for p, c in enumerate(s.couplings):
                coef = np.broadcast_to(dipolar_coefficient(c, omega_r, t, static_mode), t.shape)
                out[:, b] += coef[:, None, None] * self.pair_ops[p]
        return out

    def to_standard(self, rho: np.ndarray) -> np.ndarray:
        return self.basis @ rho @ self.basis.conj().T

    def from_standard(self, rho: np.ndarray) -> np.ndarray:
        return self.basis.conj().T @ rho @ self.basis


def _ix_eigenbasis(n_spins: int) -> tuple[np.ndarray, np.ndarray]:
    m, v = np.linalg.eigh(spin.collective_operator("x", n_spins))
    return np.round(m * 2) / 2, v


def _propagate(
    rho: np.ndarray,
    step_lo: int,
    step_hi: int,
    dt: float,
    build: Callable[[np.ndarray, np.ndarray], np.ndarray],
    record_steps: set,
    observe: Callable[[np.ndarray, int], None],
    batch_size: int,
    d: int,
) -> np.ndarray:
    """Advance ``rho`` (B, d, d) over global steps ``[step_lo, step_hi)``.

    ``build(idx, t_mid)`` returns the step Hamiltonians; ``observe(rho, k)``
    is called after step boundary ``k`` whenever ``k`` is in ``record_steps``.
    """
    chunk = max(1, _STACK_BUDGET // (batch_size * d * d))
    k = step_lo
    while k < step_hi:
        hi = min(step_hi, k + chunk)
        idx = np.arange(k, hi)
        u = expm_steps(build(idx, (idx + 0.5) * dt), dt)
        cuts = [j for j in range(k + 1, hi) if j in record_steps] + [hi]
        lo = k
        for c in cuts:
            blk = ordered_product(u[lo - k:c - k])
            rho = blk @ rho @ spin.dagger(blk)
            if c in record_steps:
                observe(rho, c)
            lo = c
        k = hi
    return rho


def _reference_average(systems, omega1, omega_r, static_mode) -> Optional[np.ndarray]:
    """Untoggled nutating-frame dipolar average per system (standard basis), or None if undefined."""
    try:
        window = (TWO_PI / omega1) if static_mode else commensurate_window(omega1, omega_r)
    except IncommensurateError:
        return None
    n_steps = _steps_for(window, omega1) if static_mode else _steps_for(window, omega1, omega_r)
    out = []
    for s in systems:
        h = np.zeros((s.dim, s.dim), dtype=complex)
        for c in s.couplings:
            h += _frequency_average(pair_operator(c.site_i, c.site_j, s.n_spins),
                                    lambda t, c=c: np.broadcast_to(dipolar_coefficient(c, omega_r, t, static_mode), t.shape),
                                    omega1, window, n_steps)
        out.append(h)
    return np.array(out)


def _metric(rho: np.ndarray, ref: Optional[np.ndarray], scale: float) -> np.ndarray:
    if ref is None:
        return np.full(rho.shape[0], np.nan)
    hh = np.real((ref * ref.transpose(0, 2, 1)).sum(axis=(1, 2)))
    rr = np.real((rho * rho.transpose(0, 2, 1)).sum(axis=(1, 2)))
    ov = np.real((rho * ref.transpose(0, 2, 1)).sum(axis=(1, 2)))
    ok = (hh > (1e-8 * scale) ** 2) & (rr > 0)
    out = np.full(rho.shape[0], np.nan)
    out[ok] = ov[ok] / np.sqrt(rr[ok] * hh[ok])
    return out


class _Recorder:
    def __init__(self, batch: _Batch, to_rot, ref_nut, to_nut, dt, scale):
        self.batch, self.to_rot, self.ref, self.to_nut, self.dt, self.scale = batch, to_rot, ref_nut, to_nut, dt, scale
        self.rows = []
        std = {a: spin.collective_operator(a, batch.n) for a in spin.AXES}
        self.obs = {a: std[a].T.copy() for a in spin.AXES}

    def __call__(self, rho, k):
        t = k * self.dt
        rot = self.to_rot(rho, t)
        m = [np.real((rot * self.obs[a]).sum(axis=(1, 2))) / self.batch.norm for a in spin.AXES]
        metric = _metric(self.to_nut(rot, t), self.ref, self.scale) if self.ref is not None else np.full(len(rot), np.nan)
        self.rows.append((t, *m, metric))

    def trajectories(self) -> list[TrajectoryRecord]:
        times = np.array([r[0] for r in self.rows])
        cols = [np.array([r[i] for r in self.rows]) for i in range(1, 5)]
        return [TrajectoryRecord(times.copy(), *(c[:, b] for c in cols)) for b in range(self.batch.size)]


def _record_set(n_steps: int, every: Optional[int], extra=()) -> set:
    every = every or max(1, n_steps // 400)
    rec = set(range(0, n_steps + 1, every))
    rec.add(n_steps)
    rec.update(extra)
    return rec


def _u1_diag(m: np.ndarray, omega1: float, t: float) -> np.ndarray:
    return np.exp(-1j * m * omega1 * t)


def _coupling_scale(systems) -> float:
    return max((abs(c.d) for s in systems for c in s.couplings), default=1.0)


def _adnf_batch(
    spec: SequenceSpec,
    systems: Sequence[SpinSystem],
    zetas: Sequence[float],
    rho0: Optional[np.ndarray] = None,
    record_every: Optional[int] = None,
) -> list[list[RunResult]]:
    """ADNF / retention / ARNF for each ARNF phase in ``zetas``; result[zeta][orientation].

    The ADNF and retention stretch is shared by all phases.
    """
    n = systems[0].n_spins
    m, v = _ix_eigenbasis(n)
    hardware = spec.mode == "hardware"
    batch = _Batch(systems, None if hardware else v)
    d, bsz, dt = batch.d, batch.size, spec.dt
    n_pre = spec.n_ramp + spec.n_retention
    n_tot = spec.n_total
    ref = _reference_average(systems, spec.omega1, spec.omega_r, spec.static_mode)
    scale = _coupling_scale(systems)
    rec = _record_set(n_tot, record_every, extra=(n_pre,))

    if rho0 is None:
        rho0 = spin.collective_operator("z", n)
    rho = np.broadcast_to(batch.from_standard(np.asarray(rho0, dtype=complex)), (bsz, d, d)).copy()

    u1 = lambda t: _u1_diag(m, spec.omega1, t)
    if hardware:
        x, y, z = (spin.collective_operator(a, n) for a in spin.AXES)
        adnf, arnf = segment_envelopes(spec)

        def phi_prime(t, zeta_b):
            if t <= spec.tau:
                return phase_correction(t, adnf, spec.omega1, spec.zeta_adnf)
            held = phase_correction(spec.tau, adnf, spec.omega1, spec.zeta_adnf)
            if t <= arnf.t_start:
                return held
            return held + phase_correction(t, arnf, spec.omega1, zeta_b)

        def make_to_rot(zeta_b):
            def to_rot(r, t):
                zr = spin.expm_skew(z, -phi_prime(t, zeta_b))
                return zr @ r @ zr.conj().T
            return to_rot

        def to_nut(r, t):
            w = v * u1(t)[None, :]
            full = w @ v.conj().T
            return full.conj().T @ r @ full

        def make_build(zeta_b):
            prog = synthesize(spec.with_(zeta_arnf=zeta_b))
            amp, ph = prog.amplitude, prog.phase

            def build(idx, tm):
                a, p = amp[idx], ph[idx]
                rf = (a * np.cos(p))[:, None, None] * x + (a * np.sin(p))[:, None, None] * y
                return rf[:, None] + batch.dipolar(tm, spec.omega_r, spec.static_mode)
            return build
    else:
        ym, zm = batch.ops["y"], batch.ops["z"]
        dm = m[:, None] - m[None, :]

        def make_to_rot(zeta_b):
            def to_rot(r, t):
                p = u1(t)
                return batch.to_standard(p[:, None] * r * p.conj()[None, :])
            return to_rot

        def to_nut(r, t):
            return batch.to_standard(batch.from_standard(r) * np.outer(u1(t).conj(), u1(t)))

        def make_build(zeta_b):
            s = spec.with_(zeta_arnf=zeta_b)

            def build(idx, tm):
                w2, zeta = nutation_profile(s, tm)
                rf = (w2 * np.cos(zeta))[:, None, None] * zm - (w2 * np.sin(zeta))[:, None, None] * ym
                frame = np.exp(1j * spec.omega1 * tm[:, None, None] * dm[None])
                return rf[:, None] + batch.dipolar(tm, spec.omega_r, spec.static_mode) * frame[:, None]
            return build

    pre = _Recorder(batch, make_to_rot(zetas[0]), ref, to_nut, dt, scale)
    pre(rho, 0)
    rho_pre = _propagate(rho, 0, n_pre, dt, make_build(zetas[0]), {k for k in rec if k <= n_pre} - {0},
                         pre, bsz, d)
    out = []
    for zb in zetas:
        r = _Recorder(batch, make_to_rot(zb), ref, to_nut, dt, scale)
        r.rows = list(pre.rows)
        rho_f = _propagate(rho_pre.copy(), n_pre, n_tot, dt, make_build(zb), {k for k in rec if k > n_pre}, r, bsz, d)
        rot_f = make_to_rot(zb)(rho_f, n_tot * dt)
        trajs = r.trajectories()
        res = []
        for b in range(bsz):
            mag = np.array([trajs[b].mx[-1], trajs[b].my[-1], trajs[b].mz[-1]])
            res.append(RunResult(rot_f[b], trajs[b], complex(mag[0], mag[1]), mag))
        out.append(res)
    return out


def _adrf_batch(spec, systems, record_every=None, rho0=None) -> list[RunResult]:
    n = systems[0].n_spins
    m, v = _ix_eigenbasis(n)
    batch = _Batch(systems, v)
    d, bsz, dt = batch.d, batch.size, spec.dt
    adnf, arnf = segment_envelopes(spec.with_(omega2=spec.omega1))
    xm = batch.ops["x"]
    if rho0 is None:
        rho0 = spin.rotate_operator(spin.collective_operator("z", n), "y", math.pi / 2, n)
    rho = np.broadcast_to(batch.from_standard(np.asarray(rho0, dtype=complex)), (bsz, d, d)).copy()
    if spec.static_mode:
        ref = np.array([sum((dipolar_coefficient(c, 0.0, 0.0, True) * pair_operator(c.site_i, c.site_j, n)
                             for c in s.couplings), np.zeros((d, d), complex)) for s in systems])
    else:
        ref = None

    def build(idx, tm):
        w1 = np.zeros_like(tm)
        a = tm <= spec.tau
        b = tm >= arnf.t_start
        w1[a] = envelope(adnf, tm[a])
        w1[b] = envelope(arnf, tm[b])
        return (w1[:, None, None] * xm)[:, None] + batch.dipolar(tm, spec.omega_r, spec.static_mode)

    rec = _Recorder(batch, lambda r, t: batch.to_standard(r), ref, lambda r, t: r, dt, _coupling_scale(systems))
    rec(rho, 0)
    n_tot = spec.n_total
    rho_f = _propagate(rho, 0, n_tot, dt, build, _record_set(n_tot, record_every) - {0}, rec, bsz, d)
    rot_f = batch.to_standard(rho_f)
    out = []
    for b, tr in enumerate(rec.trajectories()):
        mag = np.array([tr.mx[-1], tr.my[-1], tr.mz[-1]])
        out.append(RunResult(rot_f[b], tr, complex(mag[0], mag[1]), mag))
    return out


def _fid_batch(spec: SequenceSpec, systems, rhos: np.ndarray) -> np.ndarray:
    """FIDs (B, L) after the sequence, RF off, rotor phase continuing from the sequence end."""
    n = systems[0].n_spins
    batch = _Batch(systems)
    n_points = int(round(spec.fid_duration / spec.fid_dwell))
    sub = max(1, int(math.ceil(spec.fid_dwell / spec.dt - 1e-9)))
    h = spec.fid_dwell / sub
    t0 = spec.duration
    plus_t = transverse_operator(n).T.copy()
    out = np.empty((batch.size, n_points), dtype=complex)

    def observe(r, k):
        if k % sub == 0:
            out[:, k // sub] = (r * plus_t).sum(axis=(1, 2)) / batch.norm

    observe(rhos, 0)
    build = lambda idx, tm: batch.dipolar(t0 + tm, spec.omega_r, spec.static_mode)
    if n_points > 1:
        _propagate(rhos.copy(), 0, (n_points - 1) * sub, h, build,
                   set(range(sub, (n_points - 1) * sub + 1, sub)), observe, batch.size, batch.d)
    return out


def _split_run(fn, systems, threads: int):
    """Run ``fn`` on contiguous slices of ``systems`` and concatenate in order."""
    threads = max(1, int(threads or 1))
    if threads == 1 or len(systems) < 2:
        return fn(systems)
    bounds = np.linspace(0, len(systems), min(threads, len(systems)) + 1).astype(int)
    parts = [systems[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
    with ThreadPoolExecutor(max_workers=len(parts)) as pool:
        results = list(pool.map(fn, parts))
    return _concat(results)


def _concat(results):
    if isinstance(results[0], list) and results[0] and isinstance(results[0][0], list):
        return [sum((r[z] for r in results), []) for z in range(len(results[0]))]
    return sum(results, [])


def _orient(sys: SpinSystem, orientation) -> SpinSystem:
    if orientation is None:
        return sys
    beta, gamma = orientation[:2]
    return sys.rotated(beta, gamma)


# ---------------------------------------------------------------------------
# public drivers


def run_adnf_arnf(
    spec: SequenceSpec,
    sys: SpinSystem,
    orientation=None,
    rho0: Optional[np.ndarray] = None,
    record_every: Optional[int] = None,
) -> RunResult:
    """Nutating-frame demagnetization, retention and remagnetization from ``rho0`` (default ``I_z``).

    Returns the final rotating-frame state, the recorded trajectory and the
    recovered magnetization ``Tr{rho (I_x + i I_y)} / Tr{I_z^2}``.
    """
    s = _orient(sys, orientation)
    res = _adnf_batch(spec, [s], [spec.arnf_zeta()], rho0, record_every)[0][0]
    if spec.detect == "fid":
        res.fid = _fid_batch(spec, [s], res.rho[None])[0]
    elif spec.detect == "none":
        res.recovered_m = complex("nan")
    return res


def run_adrf_arrf(
    spec: SequenceSpec,
    sys: SpinSystem,
    orientation=None,
    rho0: Optional[np.ndarray] = None,
    record_every: Optional[int] = None,
) -> RunResult:
    """Rotating-frame demagnetization: ideal pi/2 about y, then ``omega1`` ramped down, off for T, and back up."""
    s = _orient(sys, orientation)
    res = _adrf_batch(spec, [s], record_every, rho0)[0]
    if spec.detect == "fid":
        res.fid = _fid_batch(spec, [s], res.rho[None])[0]
    return res


def _cycle_zetas(spec: SequenceSpec) -> list[float]:
    base = spec.arnf_zeta()
    return [base, float(np.mod(base + math.pi, TWO_PI))]


def _combine_cycle(shot_a: RunResult, shot_b: RunResult) -> RunResult:
    """Accumulate the 8-shot cycle: ARNF phase alternates, even shots are subtracted."""
    acc_rho = np.zeros_like(shot_a.rho)
    acc_mag = np.zeros(3)
    acc_fid = None if shot_a.fid is None else np.zeros_like(shot_a.fid)
    for k in range(1, PHASE_CYCLE_SHOTS + 1):
        shot, sign = (shot_a, 1.0) if k % 2 else (shot_b, -1.0)
        acc_rho = acc_rho + sign * shot.rho
        acc_mag = acc_mag + sign * shot.magnetization
        if acc_fid is not None:
            acc_fid = acc_fid + sign * shot.fid
    acc_rho /= PHASE_CYCLE_SHOTS
    acc_mag /= PHASE_CYCLE_SHOTS
    fid = None if acc_fid is None else acc_fid / PHASE_CYCLE_SHOTS
    return RunResult(acc_rho, shot_a.trajectory, complex(acc_mag[0], acc_mag[1]), acc_mag, fid)


def _cycle_batch(spec, systems, rho0=None, record_every=None) -> list[RunResult]:
    shots = _adnf_batch(spec, systems, _cycle_zetas(spec), rho0, record_every)
    if spec.detect == "fid":
        for z in range(2):
            fids = _fid_batch(spec, systems, np.array([r.rho for r in shots[z]]))
            for r, f in zip(shots[z], fids):
                r.fid = f
    return [_combine_cycle(a, b) for a, b in zip(*shots)]


def run_phase_cycle(
    spec: SequenceSpec,
    sys: SpinSystem,
    orientation=None,
    rho0: Optional[np.ndarray] = None,
    record_every: Optional[int] = None,
) -> RunResult:
    """Eight-shot ARNF phase cycle.

    Odd shots use the ARNF phase of ``spec`` and even shots that phase plus
    pi; the result is ``(sum_odd - sum_even) / 8``. The shots are
    deterministic, so each distinct one is simulated once. The returned
    trajectory is that of the first shot.
    """
    return _cycle_batch(spec, [_orient(sys, orientation)], rho0, record_every)[0]


def _batched_adnf(spec, systems, record_every=None):
    res = _adnf_batch(spec, systems, [spec.arnf_zeta()], None, record_every)[0]
    if spec.detect == "fid":
        for r, f in zip(res, _fid_batch(spec, systems, np.array([r.rho for r in res]))):
            r.fid = f
    return res


def _batched_adrf(spec, systems, record_every=None):
    res = _adrf_batch(spec, systems, record_every)
    if spec.detect == "fid":
        for r, f in zip(res, _fid_batch(spec, systems, np.array([r.rho for r in res]))):
            r.fid = f
    return res


def _batched_cycle(spec, systems, record_every=None):
    return _cycle_batch(spec, systems, None, record_every)


run_adnf_arnf.batched = _batched_adnf
run_adrf_arrf.batched = _batched_adrf
run_phase_cycle.batched = _batched_cycle


def weighted_mean(results: Sequence[RunResult], weights) -> RunResult:
    """Weighted combination of per-orientation results (fixed summation order)."""
    w = np.asarray(weights, dtype=float)
    rho = sum(wi * r.rho for wi, r in zip(w, results))
    mag = sum(wi * r.magnetization for wi, r in zip(w, results))
    tr0 = results[0].trajectory
    cols = {}
    for name in ("mx", "my", "mz", "dipolar_order"):
        cols[name] = sum(wi * getattr(r.trajectory, name) for wi, r in zip(w, results))
    fid = None
    if results[0].fid is not None:
        fid = sum(wi * r.fid for wi, r in zip(w, results))
    traj = TrajectoryRecord(tr0.times.copy(), cols["mx"], cols["my"], cols["mz"], cols["dipolar_order"])
    return RunResult(rho, traj, complex(mag[0], mag[1]), np.asarray(mag), fid)


def powder_average(
    run: Callable,
    scheme: PowderScheme,
    spec: SequenceSpec,
    sys: SpinSystem,
    threads: int = 1,
    record_every: Optional[int] = None,
) -> RunResult:
    """Weighted mean of ``run`` over the crystallite orientations of ``scheme``.

    ``run`` is one of :func:`run_adnf_arnf`, :func:`run_adrf_arrf` or
    :func:`run_phase_cycle`; orientations are simulated together in batches.
    """
    systems = [sys.rotated(b, g) if scheme.kind != "single_crystal" or (b, g) != (0.0, 0.0) else sys
               for b, g, _ in scheme.orientations]
    batched = getattr(run, "batched", None)
    if batched is None:
        results = [run(spec, s) for s in systems]
    else:
        results = _split_run(lambda part: batched(spec, part, record_every), systems, threads)
    if len(results) == 1:
        return results[0]
    return weighted_mean(results, scheme.weights)


def sweep_omega1(
    template: SequenceSpec,
    sys: SpinSystem,
    scheme: PowderScheme,
    omega1_values: Sequence[float],
    threads: int = 1,
) -> SweepResult:
    """Phase-cycled, powder-averaged recovered magnetization against the spin-lock strength."""
    values = np.asarray(omega1_values, dtype=float)
    if values.size == 0 or np.any(values <= 0):
        raise ValueError("omega1 values must be non-empty and > 0")
    rec, rot = [], []
    for w1 in values:
        r = powder_average(run_phase_cycle, scheme, template.with_(omega1=float(w1)), sys, threads)
        rec.append(r.recovered_m)
        rot.append(r.rotation)
    return SweepResult("omega1", values, np.array(rec), np.array(rot), template)


def sweep_retention(
    template: SequenceSpec,
    sys: SpinSystem,
    scheme: PowderScheme,
    t_values: Sequence[float],
    compensate: bool = False,
    threads: int = 1,
) -> SweepResult:
    """Phase-cycled recovered magnetization against the retention time T.

    Without compensation the ARNF phase is 0 and the recovered magnetization
    is rotated by ``omega1 (2 tau + T)`` about x; with compensation the
    ``'auto'`` phase keeps it on the transverse axis.
    """
    values = np.asarray(t_values, dtype=float)
    if values.size == 0 or np.any(values < 0):
        raise ValueError("retention times must be non-empty and >= 0")
    zeta = "auto" if compensate else 0.0
    rec, rot = [], []
    for t in values:
        r = powder_average(run_phase_cycle, scheme, template.with_(t_retention=float(t), zeta_arnf=zeta), sys, threads)
        rec.append(r.recovered_m)
        rot.append(r.rotation)
    return SweepResult("retention", values, np.array(rec), np.array(rot), template, {"compensate": compensate})


def write_sweep(result: SweepResult, path) -> None:
    from .propagation import write_csv
    r = result.recovered
    write_csv(path, "param_value,recovered_re,recovered_im,recovered_abs,rotation_rad",
              [result.values, r.real, r.imag, np.abs(r), result.rotation])
