"""Amplitude/phase-modulated RF waveforms for nutating-frame demagnetization.

The nutating-frame field ``omega2'(t) (I_z cos zeta - I_y sin zeta)`` seen
on top of a constant spin lock ``omega1 I_x`` corresponds, in the rotating
frame, to a transverse field of amplitude ``omega_a`` and phase ``phi`` plus
a longitudinal term ``omega2'(t) cos(omega1 t + zeta) I_z``. The longitudinal
term is realized as an extra phase modulation ``phi'(t)``, the negative
running integral of that term.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .sequence import SequenceSpec

ENVELOPE_KINDS = ("adnf_rampdown", "arnf_rampup", "constant", "zero")
CSV_HEADER = ("t_s", "amplitude_rad_per_s", "phase_rad")


class WaveformFormatError(ValueError):
    """Raised when a waveform file cannot be parsed into a uniform pulse program."""


@dataclass(frozen=True)
class EnvelopeSpec:
    kind: str
    omega2: float
    tau: float = 0.0
    t_start: float = 0.0

    def __post_init__(self):
        if self.kind not in ENVELOPE_KINDS:
            raise ValueError(f"kind must be one of {ENVELOPE_KINDS}")
        if self.omega2 < 0:
            raise ValueError("omega2 must be >= 0")
        if self.kind in ("adnf_rampdown", "arnf_rampup") and not self.tau > 0:
            raise ValueError("ramp envelopes need tau > 0")

    @property
    def is_ramp(self) -> bool:
        return self.kind in ("adnf_rampdown", "arnf_rampup")


def _segment_offset(spec: EnvelopeSpec, t) -> np.ndarray:
    u = np.asarray(t, dtype=float) - spec.t_start
    if spec.is_ramp:
        tol = 1e-9 * spec.tau
        if np.any(u < -tol) or np.any(u > spec.tau + tol):
            raise ValueError("t outside the envelope segment [t_start, t_start + tau]")
        u = np.clip(u, 0.0, spec.tau)
    return u


def envelope(spec: EnvelopeSpec, t):
    """Nutating-frame field strength ``omega2'(t)`` in rad/s (cosine ramps)."""
    u = _segment_offset(spec, t)
    if spec.kind == "adnf_rampdown":
        out = 0.5 * spec.omega2 * (1.0 + np.cos(math.pi * u / spec.tau))
    elif spec.kind == "arnf_rampup":
        out = 0.5 * spec.omega2 * (1.0 - np.cos(math.pi * u / spec.tau))
    elif spec.kind == "constant":
        out = np.full_like(u, spec.omega2)
    else:
        out = np.zeros_like(u)
    return out if np.ndim(out) else float(out)


def rf_amplitude(t, omega1: float, envelope_value, zeta: float = 0.0):
    """``omega_a = sqrt(omega1**2 + (omega2' sin(omega1 t + zeta))**2)``."""
    if not omega1 > 0:
        raise ValueError("omega1 must be > 0")
    return np.hypot(omega1, envelope_value * np.sin(omega1 * np.asarray(t) + zeta))


def rf_phase(t, omega1: float, envelope_value, zeta: float = 0.0):
    """Transverse phase ``phi = atan(-omega2' sin(omega1 t + zeta) / omega1)``."""
    if not omega1 > 0:
        raise ValueError("omega1 must be > 0")
    return np.arctan2(-envelope_value * np.sin(omega1 * np.asarray(t) + zeta), omega1)


def _cos_integral(a: float, phase: float, s):
    """``int_0^s cos(a u + phase) du`` without cancellation at small ``a s``."""
    s = np.asarray(s, dtype=float)
    x = a * s
    # (1 - cos x) / x == (x/2) sinc^2(x/2); np.sinc is the normalized sinc.
    one_minus_cos_over_x = 0.5 * x * np.sinc(x / (2 * math.pi)) ** 2
    return s * (math.cos(phase) * np.sinc(x / math.pi) - math.sin(phase) * one_minus_cos_over_x)


def sinc(x):
    """Unnormalized ``sin(x)/x`` with ``sinc(0) = 1``."""
    return np.sinc(np.asarray(x, dtype=float) / math.pi)


def phase_correction_adnf_closed(t, omega1: float, omega2: float, tau: float):
    """Closed-form ``phi'(t)`` for the cosine ramp-down starting at t = 0 with zeta = 0."""
    t = np.asarray(t, dtype=float)
    return (
        -0.5 * omega2 * t * sinc(omega1 * t)
        - 0.25 * omega2 * t * sinc((math.pi / tau + omega1) * t)
        - 0.25 * omega2 * t * sinc((math.pi / tau - omega1) * t)
    )


def phase_correction(t, spec: EnvelopeSpec, omega1: float, zeta: float = 0.0):
    """Extra phase ``phi'(t) = -int_{t_start}^t omega2'(t') cos(omega1 t' + zeta) dt'``.

    The carrier argument uses absolute time ``t'``, so a segment starting
    late (ARNF) sees an effective phase ``zeta + omega1 * t_start``.
    """
    u = _segment_offset(spec, t)
    if spec.kind == "zero" or spec.omega2 == 0.0:
        out = np.zeros_like(u)
    else:
        ph = zeta + omega1 * spec.t_start
        if spec.kind == "constant":
            out = -spec.omega2 * _cos_integral(omega1, ph, u)
        else:
            k = math.pi / spec.tau
            # omega2' = (omega2/2) (1 +/- cos(k u)); the cos(k u) cos(omega1 u + ph) product
            # splits into sum and difference frequencies.
            sign = 1.0 if spec.kind == "adnf_rampdown" else -1.0
            side = 0.5 * (_cos_integral(omega1 + k, ph, u) + _cos_integral(omega1 - k, ph, u))
            out = -0.5 * spec.omega2 * (_cos_integral(omega1, ph, u) + sign * side)
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class WaveformSample:
    t: float
    amplitude: float
    phase: float


def wrap_phase(phase):
    """Wrap to the half-open interval (-pi, pi]."""
    w = np.mod(np.asarray(phase, dtype=float) + math.pi, 2 * math.pi) - math.pi
    return np.where(w == -math.pi, math.pi, w)


@dataclass(frozen=True)
class PulseProgram:
    """Uniformly sampled RF waveform.

    Sample ``n`` sits at the centre ``(n + 1/2) dt`` of the interval it is
    held for, so ``len(t) * dt`` equals the sequence duration. Phases are
    stored unwrapped; :func:`export_waveform` wraps them.
    """

    t: np.ndarray
    amplitude: np.ndarray
    phase: np.ndarray
    dt: float
    meta: Optional[SequenceSpec] = None
    carrier_hz: Optional[float] = None
    phase_correction: Optional[np.ndarray] = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[WaveformSample]:
        for t, a, p in zip(self.t, self.amplitude, wrap_phase(self.phase)):
            yield WaveformSample(float(t), float(a), float(p))

    @property
    def samples(self) -> list[WaveformSample]:
        return list(self)

    @property
    def duration(self) -> float:
        return len(self.t) * self.dt


def segment_envelopes(spec: SequenceSpec) -> tuple[EnvelopeSpec, EnvelopeSpec]:
    """ADNF and ARNF envelope descriptions for a sequence."""
    adnf = EnvelopeSpec("adnf_rampdown", spec.omega2, spec.tau, 0.0)
    arnf = EnvelopeSpec("arnf_rampup", spec.omega2, spec.tau, spec.tau + spec.t_retention)
    return adnf, arnf


def synthesize(spec: SequenceSpec, carrier_hz: Optional[float] = None) -> PulseProgram:
    """Sample the full ADNF / retention / ARNF waveform at step centres.

    During retention the amplitude is ``omega1`` and the phase holds the
    terminal ADNF value of ``phi'``; ARNF keeps accumulating from there.
    """
    n_ramp, n_ret = spec.n_ramp, spec.n_retention
    dt = spec.dt
    adnf, arnf = segment_envelopes(spec)
    z_arnf = spec.arnf_zeta()

    t_a = (np.arange(n_ramp) + 0.5) * dt
    t_r = spec.tau + (np.arange(n_ret) + 0.5) * dt
    t_b = arnf.t_start + (np.arange(n_ramp) + 0.5) * dt

    w_a = envelope(adnf, t_a)
    w_b = envelope(arnf, t_b)
    held = phase_correction(spec.tau, adnf, spec.omega1, spec.zeta_adnf)

    amplitude = np.concatenate([
        rf_amplitude(t_a, spec.omega1, w_a, spec.zeta_adnf),
        np.full(n_ret, spec.omega1),
        rf_amplitude(t_b, spec.omega1, w_b, z_arnf),
    ])
    phi = np.concatenate([
        rf_phase(t_a, spec.omega1, w_a, spec.zeta_adnf),
        np.zeros(n_ret),
        rf_phase(t_b, spec.omega1, w_b, z_arnf),
    ])
    phi_prime = np.concatenate([
        phase_correction(t_a, adnf, spec.omega1, spec.zeta_adnf),
        np.full(n_ret, held),
        held + phase_correction(t_b, arnf, spec.omega1, z_arnf),
    ])
    t = np.concatenate([t_a, t_r, t_b])
    return PulseProgram(t, amplitude, phi + phi_prime, dt, spec, carrier_hz, phi_prime)


def export_waveform(program: PulseProgram, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        for t, a, p in zip(program.t, program.amplitude, wrap_phase(program.phase)):
            fh.write(f"{t:.17g},{a:.17g},{p:.17g}\n")
    return path


def import_waveform(path) -> PulseProgram:
    """Read a waveform CSV back; the sample spacing must be uniform and increasing."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise WaveformFormatError(f"{path}: empty file")
    if tuple(c.strip() for c in rows[0]) != CSV_HEADER:
        raise WaveformFormatError(f"{path}: expected header {','.join(CSV_HEADER)}")
    body = [r for r in rows[1:] if r]
    if len(body) < 2:
        raise WaveformFormatError(f"{path}: need at least two samples")
    if any(len(r) != 3 for r in body):
        raise WaveformFormatError(f"{path}: expected 3 columns per row")
    try:
        data = np.array([[float(x) for x in r] for r in body])
    except ValueError as exc:
        raise WaveformFormatError(f"{path}: non-numeric field ({exc})") from None
    t = data[:, 0]
    steps = np.diff(t)
    if np.any(steps <= 0):
        raise WaveformFormatError(f"{path}: timestamps not strictly increasing")
    dt = (t[-1] - t[0]) / (len(t) - 1)
    if np.abs(steps - dt).max() > 1e-6 * dt:
        raise WaveformFormatError(f"{path}: non-uniform sample spacing")
    return PulseProgram(t, data[:, 1], data[:, 2], float(dt))
