"""RF and dipolar Hamiltonians, frame changes and average Hamiltonians.

All Hamiltonians are in angular-frequency units (rad/s) in the resonant
rotating frame. The nutating frame is the interaction frame of the spin lock
``omega1 I_x``; operators are carried into it with
``exp(+i omega1 t I_x) H exp(-i omega1 t I_x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy import constants

from . import spin
from .sequence import SequenceSpec
from .waveform import WaveformSample, envelope, segment_envelopes

GAMMA_1H = 2.6752218744e8  # rad s^-1 T^-1
MAGIC_ANGLE = math.acos(1.0 / math.sqrt(3.0))

#: Minimum rectangle-rule samples per shortest period when averaging.
AVERAGE_STEPS_PER_PERIOD = 2000


class IncommensurateError(ArithmeticError):
    """No common period exists between the nutation and spinning frequencies."""


def dipolar_constant(gamma_gyro: float, r: float) -> float:
    """Dipolar coupling constant ``d = -(mu0/4pi) gamma^2 hbar / r^3`` in rad/s."""
    if not r > 0:
        raise ValueError("internuclear distance must be > 0")
    return -(constants.mu_0 / (4 * math.pi)) * gamma_gyro**2 * constants.hbar / r**3


@dataclass(frozen=True)
class DipolarCoupling:
    """One homonuclear dipolar pair.

    ``beta_D`` and ``gamma_D`` orient the (axially symmetric) coupling tensor
    in the rotor frame; in static mode ``beta_D`` is the angle to B0.
    """

    site_i: int
    site_j: int
    d: float
    beta_D: float = 0.0
    gamma_D: float = 0.0

    def __post_init__(self):
        if not 0 <= self.site_i < self.site_j:
            raise ValueError("coupling sites must satisfy 0 <= site_i < site_j")
        if not -1e-12 <= self.beta_D <= math.pi + 1e-12:
            raise ValueError("beta_D must lie in [0, pi]")
        object.__setattr__(self, "gamma_D", float(np.mod(self.gamma_D, 2 * math.pi)))

    def reoriented(self, beta_D: float, gamma_D: float) -> "DipolarCoupling":
        return DipolarCoupling(self.site_i, self.site_j, self.d, beta_D, gamma_D)

    def direction(self) -> np.ndarray:
        b, g = self.beta_D, self.gamma_D
        return np.array([math.sin(b) * math.cos(g), math.sin(b) * math.sin(g), math.cos(b)])


@dataclass(frozen=True)
class SpinSystem:
    n_spins: int
    couplings: tuple[DipolarCoupling, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "couplings", tuple(self.couplings))
        if self.n_spins < 1:
            raise ValueError("n_spins must be >= 1")
        seen = set()
        for c in self.couplings:
            if c.site_j >= self.n_spins:
                raise ValueError(f"coupling ({c.site_i},{c.site_j}) exceeds n_spins={self.n_spins}")
            if (c.site_i, c.site_j) in seen:
                raise ValueError(f"duplicate coupling ({c.site_i},{c.site_j})")
            seen.add((c.site_i, c.site_j))

    @property
    def dim(self) -> int:
        return 2**self.n_spins

    @classmethod
    def pair(cls, d: float, beta_D: float = 0.0, gamma_D: float = 0.0) -> "SpinSystem":
        return cls(2, (DipolarCoupling(0, 1, d, beta_D, gamma_D),))

    @classmethod
    def from_positions(cls, positions, gamma_gyro: float = GAMMA_1H) -> "SpinSystem":
        """All pairwise couplings of spins at ``positions`` (metres, rotor-frame coordinates)."""
        pos = np.asarray(positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3 or len(pos) < 1:
            raise ValueError("positions must have shape (n, 3)")
        out = []
        for i in range(len(pos)):
            for j in range(i + 1, len(pos)):
                v = pos[j] - pos[i]
                r = float(np.linalg.norm(v))
                beta = math.acos(min(1.0, max(-1.0, v[2] / r)))
                out.append(DipolarCoupling(i, j, dipolar_constant(gamma_gyro, r), beta, math.atan2(v[1], v[0])))
        return cls(len(pos), tuple(out))

    def uncoupled(self) -> "SpinSystem":
        return SpinSystem(self.n_spins, ())

    def rotated(self, beta: float, gamma: float) -> "SpinSystem":
        """Crystallite rotation ``Rz(gamma) Ry(beta)`` applied to every coupling vector.

        A pair whose reference vector lies along the rotor axis ends up at
        exactly ``(beta_D, gamma_D) = (beta, gamma)``.
        """
        cb, sb, cg, sg = math.cos(beta), math.sin(beta), math.cos(gamma), math.sin(gamma)
        rot = np.array([[cg, -sg, 0], [sg, cg, 0], [0, 0, 1]]) @ np.array(
            [[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]]
        )
        out = []
        for c in self.couplings:
            x, y, z = rot @ c.direction()
            out.append(c.reoriented(math.acos(min(1.0, max(-1.0, z))), math.atan2(y, x)))
        return SpinSystem(self.n_spins, tuple(out))


def pair_operator(site_i: int, site_j: int, n_spins: int) -> np.ndarray:
    """Secular spin part ``3 I_iz I_jz - I_i . I_j``."""
    zz = spin.spin_operator("z", site_i, n_spins) @ spin.spin_operator("z", site_j, n_spins)
    dot = sum(
        spin.spin_operator(a, site_i, n_spins) @ spin.spin_operator(a, site_j, n_spins)
        for a in spin.AXES
    )
    return 3 * zz - dot


def g_coefficients(c: DipolarCoupling) -> tuple[float, float]:
    """MAS modulation amplitudes ``(G1, G2)`` at the rotor frequency and its double."""
    g1 = -(math.sqrt(2) / 4) * c.d * math.sin(2 * c.beta_D)
    g2 = 0.25 * c.d * math.sin(c.beta_D) ** 2
    return g1, g2


def dipolar_coefficient(c: DipolarCoupling, omega_r: float, t, static_mode: bool = False):
    """Time-dependent coupling ``D(t)`` multiplying :func:`pair_operator`.

    Static mode returns the secular value ``(d/2)(3 cos^2 beta_D - 1)``
    (broadcast to the shape of ``t``).
    """
    t = np.asarray(t, dtype=float)
    if static_mode:
        out = np.full_like(t, 0.5 * c.d * (3 * math.cos(c.beta_D) ** 2 - 1))
    else:
        g1, g2 = g_coefficients(c)
        out = g1 * np.cos(c.gamma_D + omega_r * t) + g2 * np.cos(2 * c.gamma_D + 2 * omega_r * t)
    return out if out.ndim else float(out)


def dipolar_hamiltonian_rot(sys: SpinSystem, omega_r: float, t: float, static_mode: bool = False) -> np.ndarray:
    h = np.zeros((sys.dim, sys.dim), dtype=complex)
    for c in sys.couplings:
        h += dipolar_coefficient(c, omega_r, t, static_mode) * pair_operator(c.site_i, c.site_j, sys.n_spins)
    return h


def nutation_profile(spec: SequenceSpec, t) -> tuple[np.ndarray, np.ndarray]:
    """Nutating-frame field strength ``omega2'(t)`` and its phase ``zeta(t)`` over the sequence."""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    adnf, arnf = segment_envelopes(spec)
    w = np.zeros_like(t)
    zeta = np.zeros_like(t)
    in_a = t <= spec.tau
    in_b = t >= arnf.t_start
    if np.any(in_a):
        w[in_a] = envelope(adnf, np.clip(t[in_a], 0.0, spec.tau))
        zeta[in_a] = spec.zeta_adnf
    if np.any(in_b):
        w[in_b] = envelope(arnf, np.clip(t[in_b], arnf.t_start, arnf.t_start + spec.tau))
        zeta[in_b] = spec.arnf_zeta()
    return w, zeta


def rf_hamiltonian_ideal(t: float, spec: SequenceSpec, n_spins: int = 1) -> np.ndarray:
    """``omega1 I_x + omega2'(t) [I_z cos(omega1 t + zeta) - I_y sin(omega1 t + zeta)]``."""
    w, zeta = nutation_profile(spec, t)
    arg = spec.omega1 * t + zeta[0]
    return (
        spec.omega1 * spin.collective_operator("x", n_spins)
        + w[0] * math.cos(arg) * spin.collective_operator("z", n_spins)
        - w[0] * math.sin(arg) * spin.collective_operator("y", n_spins)
    )


def rf_hamiltonian_hardware(sample: WaveformSample, n_spins: int = 1) -> np.ndarray:
    """Resonant RF of amplitude ``omega_a`` and phase ``Phi``: ``omega_a (I_x cos Phi + I_y sin Phi)``."""
    return sample.amplitude * (
        math.cos(sample.phase) * spin.collective_operator("x", n_spins)
        + math.sin(sample.phase) * spin.collective_operator("y", n_spins)
    )


def to_nutating(h: np.ndarray, t: float, omega1: float, n_spins: int) -> np.ndarray:
    """Carry ``h`` into the nutating frame: ``exp(+i omega1 t I_x) h exp(-i omega1 t I_x)``."""
    return spin.rotate_operator(h, "x", -omega1 * t, n_spins)


def commensurate_window(omega1: float, omega_r: float, max_denominator: int = 1000) -> float:
    """Shortest common period of ``2 pi/omega_r`` and ``2 pi/omega1``.

    Raises:
        IncommensurateError: if ``omega1/omega_r`` is not a ratio of integers
            with denominator <= ``max_denominator`` (relative tolerance 1e-9).
    """
    ratio = omega1 / omega_r
    frac = Fraction(ratio).limit_denominator(max_denominator)
    if frac == 0 or abs(float(frac) - ratio) > 1e-9 * ratio:
        raise IncommensurateError(
            f"omega1/omega_r = {ratio!r} has no common period (denominator <= {max_denominator})"
        )
    return frac.denominator * 2 * math.pi / omega_r


def recoupling_order(omega1: float, omega_r: float, rtol: float = 1e-9) -> Optional[int]:
    """``k`` with ``2 omega1 = k omega_r`` for k in {1, 2} (HORROR, R3), else ``None``."""
    for k in (1, 2):
        if abs(2 * omega1 - k * omega_r) <= rtol * omega_r:
            return k
    return None


def _frequency_average(op: np.ndarray, coeff, omega1: float, window: float, n_steps: int) -> np.ndarray:
    """Rectangle-rule average over ``window`` of ``coeff(t) * to_nutating(op, t)``.

    In the eigenbasis of ``I_x`` the frame change only multiplies element
    ``(a, b)`` by ``exp(i (m_a - m_b) omega1 t)``, so the average needs one
    scalar quadrature per integer frequency ``m_a - m_b``.
    """
    n = spin.n_spins_of(op)
    m, v = np.linalg.eigh(spin.collective_operator("x", n))
    dm = np.rint(m[:, None] - m[None, :]).astype(int)
    t = np.arange(n_steps) * (window / n_steps)
    c = np.asarray(coeff(t), dtype=float)
    ks = np.arange(-n, n + 1)
    f = (np.exp(1j * omega1 * np.outer(ks, t)) @ c) / n_steps
    op_eig = v.conj().T @ op @ v
    return v @ (op_eig * f[dm + n]) @ v.conj().T


def _steps_for(window: float, *omegas: float) -> int:
    shortest = min(2 * math.pi / w for w in omegas if w > 0)
    return int(math.ceil(AVERAGE_STEPS_PER_PERIOD * window / shortest * (1 - 1e-12)))


def average_dipolar_numeric(
    c: DipolarCoupling,
    omega1: float,
    omega_r: float,
    n_periods: int = 1,
    n_spins: int = 2,
    static_mode: bool = False,
) -> np.ndarray:
    """Toggled nutating-frame average of one pair's dipolar Hamiltonian.

    Averages ``rotate_operator(to_nutating(H_D(t), t), y, pi/2)`` over
    ``n_periods`` common periods of the spinning and nutation, by the
    rectangle rule (spectrally accurate for these periodic integrands).
    """
    if n_periods < 1:
        raise ValueError("n_periods must be >= 1")
    if static_mode:
        window = n_periods * 2 * math.pi / omega1
        n_steps = _steps_for(window, omega1)
    else:
        window = n_periods * commensurate_window(omega1, omega_r)
        n_steps = _steps_for(window, omega1, omega_r)
    op = pair_operator(c.site_i, c.site_j, n_spins)
    avg = _frequency_average(op, lambda t: dipolar_coefficient(c, omega_r, t, static_mode), omega1, window, n_steps)
    return spin.rotate_operator(avg, "y", math.pi / 2, n_spins)


def average_dipolar_system(sys: SpinSystem, omega1: float, omega_r: float, static_mode: bool = False) -> np.ndarray:
    """Sum of :func:`average_dipolar_numeric` over all pairs (one common period)."""
    out = np.zeros((sys.dim, sys.dim), dtype=complex)
    for c in sys.couplings:
        out += average_dipolar_numeric(c, omega1, omega_r, 1, sys.n_spins, static_mode)
    return out


def average_dipolar_closed(c: DipolarCoupling, k: int, n_spins: int = 2) -> np.ndarray:
    """Recoupled first-order average for HORROR (k=1, G1) or R3 (k=2, G2).

    ``(3/4) G_k [cos(k gamma)(IxSx - IySy) - sin(k gamma)(IySx + IxSy)]``.
    """
    if k not in (1, 2):
        raise ValueError("k must be 1 (HORROR) or 2 (R3)")
    gk = g_coefficients(c)[k - 1]
    i = {a: spin.spin_operator(a, c.site_i, n_spins) for a in "xy"}
    s = {a: spin.spin_operator(a, c.site_j, n_spins) for a in "xy"}
    kg = k * c.gamma_D
    return 0.75 * gk * (
        math.cos(kg) * (i["x"] @ s["x"] - i["y"] @ s["y"])
        - math.sin(kg) * (i["y"] @ s["x"] + i["x"] @ s["y"])
    )


def static_average_check(c: DipolarCoupling, omega1: float, n_spins: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Static-sample nutating-frame average and the rotated ``-1/2`` form it should equal.

    Returns ``(lhs, rhs)`` where ``lhs`` is the one-period average of
    ``to_nutating(H_D)`` (no toggle) and ``rhs`` is
    ``-1/2 exp(-i pi/2 I_y) H_D exp(+i pi/2 I_y)``.
    """
    op = pair_operator(c.site_i, c.site_j, n_spins)
    d_static = dipolar_coefficient(c, 0.0, 0.0, static_mode=True)
    window = 2 * math.pi / omega1
    lhs = _frequency_average(op, lambda t: np.full_like(t, d_static), omega1, window, _steps_for(window, omega1))
    rhs = -0.5 * spin.rotate_operator(d_static * op, "y", math.pi / 2, n_spins)
    return lhs, rhs


def toggle_frame(rho: np.ndarray, t: float, omega1: float, n_spins: int) -> np.ndarray:
    """Rotating-frame operator expressed in the y-toggled nutating frame used by the averages."""
    return spin.rotate_operator(to_nutating(rho, t, omega1, n_spins), "y", math.pi / 2, n_spins)
