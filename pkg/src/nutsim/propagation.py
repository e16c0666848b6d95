"""Piecewise-constant propagation of density matrices and observable extraction."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import spin
from .hamiltonian import SpinSystem, dipolar_hamiltonian_rot


def expm_steps(h: np.ndarray, widths) -> np.ndarray:
    """``exp(-i h_k w_k)`` for a stack of Hermitian ``h``; no Hermiticity check (hot path)."""
    w, v = np.linalg.eigh(h)
    phases = np.exp(-1j * w * np.asarray(widths, dtype=float)[..., None])
    return (v * phases[..., None, :]) @ spin.dagger(v)


def ordered_product(steps: np.ndarray) -> np.ndarray:
    """Time-ordered product ``U_{n-1} ... U_1 U_0`` along axis 0 by pairwise reduction.

    Pairing is fixed by the length alone, so the floating-point result does
    not depend on how callers batch other axes.
    """
    steps = np.asarray(steps)
    if len(steps) == 0:
        raise ValueError("empty step list")
    while len(steps) > 1:
        if len(steps) % 2:
            tail = steps[-1:]
            paired = steps[1:-1:2] @ steps[0:-1:2]
            steps = np.concatenate([paired, tail])
        else:
            steps = steps[1::2] @ steps[0::2]
    return steps[0]


def step_grid(t0: float, t1: float, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Midpoints and widths of the steps covering ``[t0, t1]``; the last step may be short."""
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    if not dt > 0:
        raise ValueError("dt must be > 0")
    n_full = int(math.floor((t1 - t0) / dt * (1 + 1e-12)))
    edges = t0 + dt * np.arange(n_full + 1)
    if t1 - edges[-1] > 1e-9 * dt:
        edges = np.append(edges, t1)
    else:
        edges[-1] = t1
    return 0.5 * (edges[1:] + edges[:-1]), np.diff(edges)


def propagate_interval(
    h_of_t: Callable,
    t0: float,
    t1: float,
    dt: float,
    vectorized: bool = False,
    chunk: int = 4096,
) -> np.ndarray:
    """Midpoint-rule propagator ``T exp(-i int_t0^t1 H dt')``.

    Args:
        h_of_t: Hamiltonian evaluator. With ``vectorized=True`` it receives an
            array of times and must return a stack ``(n, d, d)``.
        t0, t1: interval ends (s).
        dt: step (s); a final partial step keeps its true width.
    """
    mids, widths = step_grid(t0, t1, dt)
    total = None
    for s in range(0, len(mids), chunk):
        m, w = mids[s:s + chunk], widths[s:s + chunk]
        hs = h_of_t(m) if vectorized else np.stack([h_of_t(float(t)) for t in m])
        if not spin.is_hermitian(hs):
            raise ArithmeticError("Hamiltonian is not Hermitian")
        u = ordered_product(expm_steps(hs, w))
        total = u if total is None else u @ total
    return total


def evolve(rho: np.ndarray, u: np.ndarray) -> np.ndarray:
    """``U rho U^dagger``."""
    if rho.shape[-2:] != u.shape[-2:]:
        raise ValueError(f"dimension mismatch {rho.shape} vs {u.shape}")
    return u @ rho @ spin.dagger(u)


def expectation(rho: np.ndarray, a: np.ndarray) -> complex:
    """``Tr{rho A}`` (batched over leading axes)."""
    if rho.shape[-2:] != a.shape[-2:]:
        raise ValueError(f"dimension mismatch {rho.shape} vs {a.shape}")
    return np.einsum("...ij,...ji->...", rho, a)


def dipolar_order_metric(rho: np.ndarray, h_bar: np.ndarray) -> float:
    """Normalized overlap ``Tr{rho H} / sqrt(Tr{rho^2} Tr{H^2})`` in [-1, 1]."""
    hh = np.real(expectation(h_bar, h_bar))
    if np.any(hh <= 0):
        raise ValueError("reference Hamiltonian is zero")
    rr = np.real(expectation(rho, rho))
    return np.real(expectation(rho, h_bar)) / np.sqrt(rr * hh)


def transverse_operator(n_spins: int) -> np.ndarray:
    """``I_+ = I_x + i I_y`` (the complex detection operator)."""
    return spin.collective_operator("x", n_spins) + 1j * spin.collective_operator("y", n_spins)


def detect_fid(
    rho: np.ndarray,
    sys: SpinSystem,
    omega_r: float,
    duration: float,
    dwell: float,
    static_mode: bool = False,
    dt: float = 1e-7,
    t_start: float = 0.0,
) -> np.ndarray:
    """Free induction decay ``Tr{rho(t) (I_x + i I_y)} / Tr{I_z^2}`` with the RF off.

    The dipolar Hamiltonian keeps its rotor phase from ``t_start``. Points are
    taken every ``dwell`` seconds; each dwell is split into equal internal
    steps no longer than ``dt``.
    """
    n_points = int(round(duration / dwell))
    if n_points < 1:
        raise ValueError("duration must cover at least one dwell")
    iz = spin.collective_operator("z", sys.n_spins)
    plus = transverse_operator(sys.n_spins) / np.real(np.trace(iz @ iz))
    out = np.empty(n_points, dtype=complex)
    out[0] = expectation(rho, plus)
    if n_points == 1:
        return out
    if static_mode or not sys.couplings:
        u = spin.expm_skew(dipolar_hamiltonian_rot(sys, omega_r, 0.0, True), dwell) if sys.couplings else None
        for k in range(1, n_points):
            if u is not None:
                rho = evolve(rho, u)
            out[k] = expectation(rho, plus)
        return out
    n_sub = max(1, int(math.ceil(dwell / dt - 1e-9)))
    h_dip = lambda ts: np.stack([dipolar_hamiltonian_rot(sys, omega_r, t, False) for t in ts])
    for k in range(1, n_points):
        t0 = t_start + (k - 1) * dwell
        mids = t0 + (np.arange(n_sub) + 0.5) * (dwell / n_sub)
        rho = evolve(rho, ordered_product(expm_steps(h_dip(mids), dwell / n_sub)))
        out[k] = expectation(rho, plus)
    return out


def spectrum(fid, dwell: float) -> tuple[np.ndarray, np.ndarray]:
    """Centred DFT of an FID: frequency axis in Hz and complex amplitudes."""
    fid = np.asarray(fid, dtype=complex)
    if len(fid) < 2:
        raise ValueError("need at least two FID points")
    freq = np.fft.fftshift(np.fft.fftfreq(len(fid), dwell))
    return freq, np.fft.fftshift(np.fft.fft(fid))


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    mx: np.ndarray
    my: np.ndarray
    mz: np.ndarray
    dipolar_order: np.ndarray

    def __post_init__(self):
        n = len(self.times)
        if not all(len(a) == n for a in (self.mx, self.my, self.mz, self.dipolar_order)):
            raise ValueError("trajectory columns must have equal length")

    def value_at(self, t: float) -> dict:
        k = int(np.argmin(np.abs(self.times - t)))
        return {"t": self.times[k], "mx": self.mx[k], "my": self.my[k], "mz": self.mz[k],
                "dipolar_order": self.dipolar_order[k]}


def write_csv(path, header: str, columns) -> Path:
    """Write equal-length numeric columns with a header line and LF endings."""
    path = Path(path)
    cols = [np.asarray(c, dtype=float) for c in columns]
    with path.open("w", newline="") as fh:
        fh.write(header + "\n")
        for row in zip(*cols):
            fh.write(",".join(f"{v:.12e}" for v in row) + "\n")
    return path


def write_trajectory(traj: TrajectoryRecord, path) -> Path:
    return write_csv(path, "t_s,mx,my,mz,dipolar_order",
                     [traj.times, traj.mx, traj.my, traj.mz, traj.dipolar_order])


def write_fid(fid, dwell: float, path) -> Path:
    fid = np.asarray(fid)
    return write_csv(path, "t_s,re,im", [np.arange(len(fid)) * dwell, fid.real, fid.imag])


def write_spectrum(freq, amplitudes, path) -> Path:
    amplitudes = np.asarray(amplitudes)
    return write_csv(path, "freq_hz,re,im", [freq, amplitudes.real, amplitudes.imag])
