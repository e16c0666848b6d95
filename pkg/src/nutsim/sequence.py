"""Sequence parameters shared by waveform synthesis and the experiment drivers."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields, replace
from typing import Union

import numpy as np

TWO_PI = 2.0 * math.pi

MODES = ("ideal", "hardware")
DETECTS = ("none", "immediate_m_plus", "fid")


def _steps(duration: float, dt: float, name: str) -> int:
    n = duration / dt
    k = round(n)
    if abs(n - k) > 1e-6 * max(1.0, n):
        raise ValueError(f"dt={dt!r} does not divide {name}={duration!r}")
    return int(k)


@dataclass(frozen=True)
class SequenceSpec:
    """All parameters of an ADNF/retention/ARNF (or ADRF/ARRF) run.

    Angular quantities are rad/s and times are seconds. ``zeta_arnf`` may be
    the string ``"auto"`` to request the compensating ARNF phase.
    """

    omega1: float
    omega2: float
    tau: float
    t_retention: float = 0.0
    zeta_adnf: float = 0.0
    zeta_arnf: Union[float, str] = 0.0
    omega_r: float = 0.0
    static_mode: bool = False
    dt: float = 25e-9
    mode: str = "ideal"
    detect: str = "immediate_m_plus"
    fid_duration: float = 0.0
    fid_dwell: float = 0.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not self.omega1 > 0:
            raise ValueError("omega1 must be > 0")
        if self.omega2 < 0:
            raise ValueError("omega2 must be >= 0")
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if self.t_retention < 0:
            raise ValueError("t_retention must be >= 0")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if self.dt > (TWO_PI / self.omega1) / 200 * (1 + 1e-12):
            raise ValueError("dt must be <= one 200th of the nutation period 2*pi/omega1")
        if self.omega_r < 0:
            raise ValueError("omega_r must be >= 0")
        if not self.static_mode and self.omega_r == 0:
            raise ValueError("omega_r must be > 0 unless static_mode is set")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.detect not in DETECTS:
            raise ValueError(f"detect must be one of {DETECTS}")
        if isinstance(self.zeta_arnf, str) and self.zeta_arnf != "auto":
            raise ValueError("zeta_arnf must be a number or 'auto'")
        if self.detect == "fid":
            if not (self.fid_duration > 0 and self.fid_dwell > 0):
                raise ValueError("fid detection needs fid_duration > 0 and fid_dwell > 0")
            if self.fid_dwell < self.dt:
                raise ValueError("fid_dwell must be >= dt")
        _steps(self.tau, self.dt, "tau")
        _steps(self.t_retention, self.dt, "t_retention")

    @property
    def n_ramp(self) -> int:
        return _steps(self.tau, self.dt, "tau")

    @property
    def n_retention(self) -> int:
        return _steps(self.t_retention, self.dt, "t_retention")

    @property
    def n_total(self) -> int:
        return 2 * self.n_ramp + self.n_retention

    @property
    def duration(self) -> float:
        return 2 * self.tau + self.t_retention

    @property
    def nutation_angle(self) -> float:
        """Rotation about the rotating-frame x axis accumulated by the end of the sequence."""
        return self.omega1 * self.duration

    def arnf_zeta(self) -> float:
        """ARNF phase with ``'auto'`` resolved.

        The remagnetized state leaves ARNF along the nutating-frame field
        direction ``I_z cos(zeta) - I_y sin(zeta)``, which the nutation
        carries to ``I_z cos(a) - I_y sin(a)`` in the rotating frame with
        ``a = omega1*(2*tau+T) + zeta``. ``'auto'`` picks ``a = pi/2``, i.e. the
        rotating-frame -y axis, so the whole recovered signal is transverse.
        """
        if self.zeta_arnf == "auto":
            return float(np.mod(math.pi / 2 - self.nutation_angle, TWO_PI))
        return float(self.zeta_arnf)

    def with_(self, **changes) -> "SequenceSpec":
        return replace(self, **changes)

    def as_dict(self) -> dict:
        return asdict(self)


SEQUENCE_FIELDS = tuple(f.name for f in fields(SequenceSpec))
