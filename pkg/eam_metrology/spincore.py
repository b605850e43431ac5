"""Dense linear algebra over small spin Hilbert spaces (hbar = 1)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache, reduce

import numpy as np
import numpy.typing as npt
from scipy import linalg

from .constants import HERMITIAN_TOLERANCE, MAX_SITES
from .exceptions import DimensionOverflow, InvalidParameter, NonHermitianError

LOGGER = logging.getLogger(f"{__package__}.spincore")

ComplexMatrix = npt.NDArray[np.complex128]

SUPPORTED_SPINS = (Fraction(1, 2), Fraction(1))


def _frozen(matrix: npt.ArrayLike) -> ComplexMatrix:
    array = np.array(matrix, dtype=np.complex128)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class SpinOperatorSet:
    """Spin matrices for a single site; sz is diagonal in descending order."""

    s: Fraction
    sx: ComplexMatrix = field(repr=False)
    sy: ComplexMatrix = field(repr=False)
    sz: ComplexMatrix = field(repr=False)

    @property
    def dim(self) -> int:
        """Return the single-site dimension 2s+1."""
        return int(2 * self.s + 1)

    @property
    def identity(self) -> ComplexMatrix:
        """Return the single-site identity."""
        return np.eye(self.dim, dtype=np.complex128)

    def vector(self, axis: npt.ArrayLike) -> ComplexMatrix:
        """Return axis . S for a real 3-vector axis."""
        ax, ay, az = np.asarray(axis, dtype=float)
        return ax * self.sx + ay * self.sy + az * self.sz


@dataclass(frozen=True)
class ProductState:
    """Uncorrelated environment state, the tensor power of 1/2 + P (axis . I)."""

    n: int
    polarization: float
    axis: tuple[float, float, float] = (0.0, 0.0, 1.0)

    def __post_init__(self) -> None:
        """Validate and normalize the polarization axis."""
        if self.n < 1:
            raise InvalidParameter("n", "at least one spin is required")
        if abs(self.polarization) > 1:
            raise InvalidParameter("polarization", "|P| must not exceed 1")
        norm = float(np.linalg.norm(self.axis))
        if norm == 0:
            raise InvalidParameter("axis", "polarization axis must be nonzero")
        object.__setattr__(self, "axis", tuple(float(a) / norm for a in self.axis))

    def single_site(self) -> ComplexMatrix:
        """Return the one-spin density matrix."""
        ops = spin_operators(Fraction(1, 2))
        return 0.5 * ops.identity + self.polarization * ops.vector(self.axis)


def _as_spin(s: float | Fraction) -> Fraction:
    spin = Fraction(s).limit_denominator(4)
    if spin not in SUPPORTED_SPINS:
        raise InvalidParameter("s", f"unsupported spin quantum number {s}; use 1/2 or 1")
    return spin


@lru_cache(maxsize=4)
def _spin_operators(spin: Fraction) -> SpinOperatorSet:
    dim = int(2 * spin + 1)
    s = float(spin)
    m = np.array([s - i for i in range(dim)])
    # <m+1|S+|m> sits one row above the diagonal in descending order
    raising = np.diag(np.sqrt(s * (s + 1) - m[1:] * (m[1:] + 1)), k=1).astype(complex)
    lowering = raising.conj().T
    return SpinOperatorSet(
        s=spin,
        sx=_frozen((raising + lowering) / 2),
        sy=_frozen((raising - lowering) / 2j),
        sz=_frozen(np.diag(m)),
    )


def spin_operators(s: float | Fraction) -> SpinOperatorSet:
    """Return sx, sy, sz for spin s in {1/2, 1}."""
    return _spin_operators(_as_spin(s))


def check_sites(n: int, dim: int = 2, cap: int = MAX_SITES) -> None:
    """Raise DimensionOverflow if dim**n exceeds the cap measured in spin-1/2 sites."""
    if dim**n > 2**cap:
        raise DimensionOverflow(n, cap)


def embed(op: npt.ArrayLike, site: int, n: int, cap: int = MAX_SITES) -> ComplexMatrix:
    """Place a single-site operator at `site` of an n-site register (identity elsewhere)."""
    matrix = np.asarray(op, dtype=np.complex128)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise InvalidParameter("op", "operator must be a square matrix")
    if not 0 <= site < n:
        raise InvalidParameter("site", f"site {site} out of range for {n} sites")
    dim = matrix.shape[0]
    check_sites(n, dim, cap)
    left = np.eye(dim**site, dtype=np.complex128)
    right = np.eye(dim ** (n - site - 1), dtype=np.complex128)
    return np.kron(np.kron(left, matrix), right)


@lru_cache(maxsize=32)
def site_operators(n: int, cap: int = MAX_SITES) -> tuple[tuple[ComplexMatrix, ...], ...]:
    """Return ((Ix, Iy, Iz) for each site) of an n-site spin-1/2 register, cached read-only."""
    ops = spin_operators(Fraction(1, 2))
    return tuple(
        tuple(_frozen(embed(op, k, n, cap)) for op in (ops.sx, ops.sy, ops.sz)) for k in range(n)
    )


def is_hermitian(matrix: npt.ArrayLike, tol: float = HERMITIAN_TOLERANCE) -> bool:
    """Return True if matrix equals its conjugate transpose within tol (max norm)."""
    array = np.asarray(matrix)
    return bool(np.max(np.abs(array - array.conj().T), initial=0.0) <= tol)


def unitarity_error(matrix: npt.ArrayLike) -> float:
    """Return max |U^dagger U - I|."""
    array = np.asarray(matrix)
    return float(np.max(np.abs(array.conj().T @ array - np.eye(array.shape[0]))))


def expm_hermitian(hamiltonian: npt.ArrayLike, t: float) -> ComplexMatrix:
    """Return exp(-i H t) through the Hermitian eigendecomposition of H."""
    matrix = np.asarray(hamiltonian, dtype=np.complex128)
    if not is_hermitian(matrix):
        msg = "generator is not Hermitian within tolerance"
        raise NonHermitianError("H", msg)
    # symmetrize away round-off before diagonalizing
    energies, vectors = linalg.eigh((matrix + matrix.conj().T) / 2)
    return (vectors * np.exp(-1j * energies * t)) @ vectors.conj().T


def density_matrix(state: ProductState, cap: int = MAX_SITES) -> ComplexMatrix:
    """Return the explicit 2**n density matrix of a product state."""
    check_sites(state.n, 2, cap)
    rho = state.single_site()
    return reduce(np.kron, [rho] * state.n)


def rotation_matrix(axis: npt.ArrayLike, angle: float) -> npt.NDArray[np.float64]:
    """Return the SO(3) matrix rotating vectors by `angle` about `axis` (right hand)."""
    n = np.asarray(axis, dtype=float)
    n = n / np.linalg.norm(n)
    cross = np.array([[0, -n[2], n[1]], [n[2], 0, -n[0]], [-n[1], n[0], 0]])
    return np.eye(3) + np.sin(angle) * cross + (1 - np.cos(angle)) * (cross @ cross)
