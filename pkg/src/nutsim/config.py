"""Flat ``namespace.key = value`` run configuration.

Frequencies are given in Hz and converted to rad/s here; times are seconds
and angles radians. Unknown keys are rejected. :func:`render` writes the
resolved configuration back out (defaults filled, floats in round-trip
form), so a run can be reproduced from its echo.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Optional

import numpy as np

from .experiment import PowderScheme
from .hamiltonian import DipolarCoupling, SpinSystem
from .sequence import SequenceSpec

TWO_PI = 2.0 * math.pi
ANGSTROM = 1e-10


class ConfigError(ValueError):
    """Bad or missing configuration; ``key`` names the offending entry."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


def _float(s):
    return float(s)


def _bool(s):
    v = s.strip().lower()
    if v in ("true", "yes", "1", "on"):
        return True
    if v in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _zeta(s):
    return "auto" if s.strip().lower() == "auto" else float(s)


def _str(s):
    return s.strip()


def _positions(s):
    pts = [[float(x) for x in p.split(",")] for p in s.split(";") if p.strip()]
    if any(len(p) != 3 for p in pts):
        raise ValueError("positions must be 'x,y,z; x,y,z; ...'")
    return pts


def _floats(s):
    return [float(x) for x in s.split(",") if x.strip()]


#: key -> (parser, default); a default of ``None`` marks a required key.
SCHEMA = {
    "sequence.experiment": (_str, "adnf"),
    "sequence.omega1_hz": (_float, None),
    "sequence.omega2_hz": (_float, None),
    "sequence.tau_s": (_float, None),
    "sequence.retention_s": (_float, 0.0),
    "sequence.zeta_adnf_rad": (_float, 0.0),
    "sequence.zeta_arnf_rad": (_zeta, 0.0),
    "sequence.omega_r_hz": (_float, 0.0),
    "sequence.static": (_bool, False),
    "sequence.dt_s": (_float, 25e-9),
    "sequence.mode": (_str, "ideal"),
    "sequence.detect": (_str, "immediate_m_plus"),
    "sequence.fid_duration_s": (_float, 0.0),
    "sequence.fid_dwell_s": (_float, 0.0),
    "sequence.phase_cycle": (_bool, True),
    "system.kind": (_str, "pair"),
    "system.d_hz": (_float, 0.0),
    "system.beta_d_rad": (_float, 0.0),
    "system.gamma_d_rad": (_float, 0.0),
    "system.positions_angstrom": (_positions, []),
    "powder.scheme": (_str, "single_crystal"),
    "powder.n": (lambda s: int(s), 144),
    "powder.beta_rad": (_float, 0.0),
    "powder.gamma_rad": (_float, 0.0),
    "output.record_every": (lambda s: int(s), 0),
    "sweep.param": (_str, ""),
    "sweep.values": (_floats, []),
    "sweep.compensate": (_bool, False),
}

SYSTEM_KINDS = ("pair", "positions", "uncoupled")
EXPERIMENTS = ("adnf", "adrf")


def parse_text(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Returns raw strings."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key '{key}'", key)
        if key in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key '{key}'", key)
        raw[key] = value
    return raw


def resolve(raw: dict) -> dict:
    """Apply parsers and defaults; raises :class:`ConfigError` naming the key."""
    out = {}
    for key, (parse, default) in SCHEMA.items():
        if key in raw:
            try:
                out[key] = parse(raw[key])
            except ValueError as exc:
                raise ConfigError(f"bad value for '{key}': {exc}", key) from None
        elif default is None:
            raise ConfigError(f"missing required key '{key}'", key)
        else:
            out[key] = default
    if out["system.kind"] not in SYSTEM_KINDS:
        raise ConfigError(f"system.kind must be one of {SYSTEM_KINDS}", "system.kind")
    if out["sequence.experiment"] not in EXPERIMENTS:
        raise ConfigError(f"sequence.experiment must be one of {EXPERIMENTS}", "sequence.experiment")
    if out["system.kind"] == "positions" and not out["system.positions_angstrom"]:
        raise ConfigError("system.kind = positions needs system.positions_angstrom", "system.positions_angstrom")
    return out


def load(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return resolve(parse_text(text, str(path)))


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        if v and isinstance(v[0], list):
            return "; ".join(",".join(repr(float(x)) for x in p) for p in v)
        return ",".join(repr(float(x)) for x in v)
    return str(v)


def render(cfg: dict) -> str:
    """Resolved configuration as text; parsing it back gives an identical dict."""
    return "".join(f"{k} = {_fmt(cfg[k])}\n" for k in SCHEMA)


def sequence_spec(cfg: dict) -> SequenceSpec:
    """Build the :class:`SequenceSpec`, reporting validation failures against config keys."""
    names = {
        "omega1": "sequence.omega1_hz", "omega2": "sequence.omega2_hz", "tau": "sequence.tau_s",
        "t_retention": "sequence.retention_s", "dt": "sequence.dt_s", "omega_r": "sequence.omega_r_hz",
        "mode": "sequence.mode", "detect": "sequence.detect", "fid": "sequence.fid_duration_s",
        "zeta_arnf": "sequence.zeta_arnf_rad",
    }
    try:
        return SequenceSpec(
            omega1=TWO_PI * cfg["sequence.omega1_hz"],
            omega2=TWO_PI * cfg["sequence.omega2_hz"],
            tau=cfg["sequence.tau_s"],
            t_retention=cfg["sequence.retention_s"],
            zeta_adnf=cfg["sequence.zeta_adnf_rad"],
            zeta_arnf=cfg["sequence.zeta_arnf_rad"],
            omega_r=TWO_PI * cfg["sequence.omega_r_hz"],
            static_mode=cfg["sequence.static"],
            dt=cfg["sequence.dt_s"],
            mode=cfg["sequence.mode"],
            detect=cfg["sequence.detect"],
            fid_duration=cfg["sequence.fid_duration_s"],
            fid_dwell=cfg["sequence.fid_dwell_s"],
        )
    except ValueError as exc:
        msg = str(exc)
        key = next((k for f, k in names.items() if msg.startswith(f) or f"={f}" in msg or f" {f}" in msg), None)
        raise ConfigError(f"invalid sequence ({key or 'sequence'}): {msg}", key) from None


def spin_system(cfg: dict) -> SpinSystem:
    kind = cfg["system.kind"]
    if kind == "uncoupled":
        return SpinSystem(1, ())
    if kind == "positions":
        return SpinSystem.from_positions(np.array(cfg["system.positions_angstrom"]) * ANGSTROM)
    try:
        return SpinSystem(2, (DipolarCoupling(0, 1, TWO_PI * cfg["system.d_hz"],
                                              cfg["system.beta_d_rad"], cfg["system.gamma_d_rad"]),))
    except ValueError as exc:
        raise ConfigError(f"invalid system: {exc}", "system.beta_d_rad") from None


def powder_scheme(cfg: dict) -> PowderScheme:
    try:
        return PowderScheme.from_kind(cfg["powder.scheme"], cfg["powder.n"],
                                      cfg["powder.beta_rad"], cfg["powder.gamma_rad"])
    except ValueError as exc:
        raise ConfigError(f"invalid powder: {exc}", "powder.scheme") from None
