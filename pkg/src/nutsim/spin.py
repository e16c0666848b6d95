"""Dense operator algebra for systems of spin-1/2 particles.

Operators are plain ``numpy`` complex arrays of shape ``(2**n, 2**n)``.
Site 0 is the leftmost (most significant) tensor factor, so for two spins
the product basis is ordered ``|uu>, |ud>, |du>, |dd>``.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

AXES = ("x", "y", "z")

_PAULI_HALF = {
    "x": np.array([[0, 0.5], [0.5, 0]], dtype=complex),
    "y": np.array([[0, -0.5j], [0.5j, 0]], dtype=complex),
    "z": np.array([[0.5, 0], [0, -0.5]], dtype=complex),
}

HERMITIAN_RTOL = 1e-12


def _check_axis(axis: str) -> None:
    if axis not in _PAULI_HALF:
        raise ValueError(f"axis must be one of {AXES}, got {axis!r}")


@lru_cache(maxsize=None)
def _spin_operator_cached(axis: str, site: int, n_spins: int) -> np.ndarray:
    op = np.ones((1, 1), dtype=complex)
    for k in range(n_spins):
        op = np.kron(op, _PAULI_HALF[axis] if k == site else np.eye(2))
    op.setflags(write=False)
    return op


def spin_operator(axis: str, site: int, n_spins: int) -> np.ndarray:
    """Single-site spin operator ``I_{site,axis}`` in the n-spin product space."""
    _check_axis(axis)
    if n_spins < 1:
        raise ValueError("n_spins must be >= 1")
    if not 0 <= site < n_spins:
        raise ValueError(f"site {site} out of range for {n_spins} spins")
    return _spin_operator_cached(axis, int(site), int(n_spins))


@lru_cache(maxsize=None)
def _collective_cached(axis: str, n_spins: int) -> np.ndarray:
    op = sum(_spin_operator_cached(axis, k, n_spins) for k in range(n_spins))
    op.setflags(write=False)
    return op


def collective_operator(axis: str, n_spins: int) -> np.ndarray:
    """Total spin component ``I_axis = sum_k I_{k,axis}``."""
    _check_axis(axis)
    if n_spins < 1:
        raise ValueError("n_spins must be >= 1")
    return _collective_cached(axis, int(n_spins))


def n_spins_of(op: np.ndarray) -> int:
    """Number of spins for a ``2**n`` square operator; raises if not a power of two."""
    dim = op.shape[-1]
    if op.shape[-2] != dim or dim < 2 or dim & (dim - 1):
        raise ValueError(f"operator shape {op.shape} is not 2**n square")
    return dim.bit_length() - 1


def is_hermitian(op: np.ndarray, rtol: float = HERMITIAN_RTOL) -> bool:
    scale = max(np.abs(op).max(initial=0.0), 1.0)
    return bool(np.abs(op - np.swapaxes(op, -1, -2).conj()).max(initial=0.0) <= rtol * scale)


def is_unitary(op: np.ndarray, atol: float = 1e-10) -> bool:
    dim = op.shape[-1]
    err = op @ np.swapaxes(op, -1, -2).conj() - np.eye(dim)
    return bool(np.sqrt((np.abs(err) ** 2).sum(axis=(-2, -1))).max() <= atol)


def commutator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return a @ b - b @ a


def dagger(op: np.ndarray) -> np.ndarray:
    return np.swapaxes(op, -1, -2).conj()


def expm_skew(h: np.ndarray, t) -> np.ndarray:
    """Return ``exp(-i h t)`` for Hermitian ``h``.

    Uses the eigendecomposition of ``h``, so the result is unitary to
    roundoff. ``h`` may be a stack ``(..., d, d)``; ``t`` broadcasts against
    the leading dimensions.

    Raises:
        ArithmeticError: if ``h`` is not Hermitian to 1e-12 relative.
    """
    h = np.asarray(h, dtype=complex)
    if not is_hermitian(h):
        raise ArithmeticError("expm_skew requires a Hermitian generator")
    w, v = np.linalg.eigh(h)
    t = np.asarray(t, dtype=float)[..., None]
    phases = np.exp(-1j * w * t)
    return (v * phases[..., None, :]) @ dagger(v)


def rotation(axis: str, angle: float, n_spins: int) -> np.ndarray:
    """Collective rotation ``exp(-i angle I_axis)``."""
    return expm_skew(collective_operator(axis, n_spins), angle)


def rotate_operator(a: np.ndarray, axis: str, angle: float, n_spins: int) -> np.ndarray:
    """Conjugate ``a`` by a collective rotation: ``R a R^dagger`` with ``R = exp(-i angle I_axis)``.

    With this sense a positive angle about ``y`` carries ``I_z`` into ``I_x``.
    """
    a = np.asarray(a, dtype=complex)
    if a.shape[-2:] != (2**n_spins, 2**n_spins):
        raise ValueError(f"operator of shape {a.shape} does not act on {n_spins} spins")
    r = rotation(axis, angle, n_spins)
    return r @ a @ dagger(r)


def product_operator_basis(n_spins: int) -> dict[str, np.ndarray]:
    """Cartesian product-operator basis for two spins, keyed like ``'xz'``.

    Single-spin terms use ``'x-'``/``'-x'`` keys. Only implemented for
    ``n_spins == 2``; larger systems are not needed for projection checks.
    """
    if n_spins != 2:
        raise ValueError("product basis is only tabulated for two spins")
    basis = {}
    for a in AXES:
        basis[a + "-"] = spin_operator(a, 0, 2)
        basis["-" + a] = spin_operator(a, 1, 2)
        for b in AXES:
            basis[a + b] = spin_operator(a, 0, 2) @ spin_operator(b, 1, 2)
    return basis
