"""Random environment-spin placements, dipolar couplings and disjoint clusters."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import numpy.typing as npt

from .constants import EXCLUSION_RADIUS, STRONG_COUPLING_THRESHOLD
from .exceptions import CoincidentSpins, InvalidParameter

LOGGER = logging.getLogger(f"{__package__}.ensemble")

FloatArray = npt.NDArray[np.float64]

ENSEMBLE_HEADER = "# eam-ensemble v1"
KAPPA_MARKER = "# kappa"
# coincidence tolerance in length units
_MIN_DISTANCE = 1e-12


def _readonly(values: npt.ArrayLike) -> FloatArray:
    array = np.array(values, dtype=float)
    array.flags.writeable = False
    return array


@dataclass(frozen=True)
class SpinEnsemble:
    """Probe at the origin plus environment spins with their dipolar couplings."""

    env_positions: FloatArray = field(repr=False)
    couplings: FloatArray = field(repr=False)
    kappa: FloatArray = field(repr=False)
    gamma_s: float = 1.0
    gamma_i: float = 1.0
    polarization: float = 0.5
    probe_position: FloatArray = field(default_factory=lambda: _readonly(np.zeros(3)), repr=False)

    def __post_init__(self) -> None:
        """Validate shapes and the symmetry of the intra-bath couplings."""
        n = len(self.couplings)
        if self.env_positions.shape != (n, 3) or self.kappa.shape != (n, n):
            msg = "positions, couplings and kappa disagree on the spin count"
            raise InvalidParameter("ensemble", msg)
        if not np.allclose(self.kappa, self.kappa.T) or np.any(np.diag(self.kappa) != 0):
            raise InvalidParameter("kappa", "must be symmetric with a zero diagonal")
        if abs(self.polarization) > 1:
            raise InvalidParameter("polarization", "|P| must not exceed 1")

    @property
    def n(self) -> int:
        """Return the number of environment spins."""
        return len(self.couplings)

    @property
    def lambda_max(self) -> float:
        """Return the largest probe-environment coupling magnitude."""
        return float(np.max(np.abs(self.couplings), initial=0.0))

    def subset(self, indices: tuple[int, ...]) -> SpinEnsemble:
        """Return the ensemble restricted to the given environment spins."""
        idx = np.asarray(indices, dtype=int)
        return SpinEnsemble(
            env_positions=_readonly(self.env_positions[idx]),
            couplings=_readonly(self.couplings[idx]),
            kappa=_readonly(self.kappa[np.ix_(idx, idx)]),
            gamma_s=self.gamma_s,
            gamma_i=self.gamma_i,
            polarization=self.polarization,
            probe_position=self.probe_position,
        )

    def with_polarization(self, polarization: float) -> SpinEnsemble:
        """Return a copy with a different environment polarization."""
        return SpinEnsemble(
            env_positions=self.env_positions,
            couplings=self.couplings,
            kappa=self.kappa,
            gamma_s=self.gamma_s,
            gamma_i=self.gamma_i,
            polarization=polarization,
            probe_position=self.probe_position,
        )


@dataclass(frozen=True)
class ClusterPartition:
    """Disjoint index sets covering all environment spins."""

    clusters: tuple[tuple[int, ...], ...]
    gmax: int

    def is_valid(self, n: int) -> bool:
        """Return True if the clusters are disjoint, cover range(n) and respect gmax."""
        flat = [k for cluster in self.clusters for k in cluster]
        return (
            sorted(flat) == list(range(n))
            and all(0 < len(cluster) <= self.gmax for cluster in self.clusters)
        )


def build_ensemble(
    positions: npt.ArrayLike,
    gamma_s: float = 1.0,
    gamma_i: float = 1.0,
    polarization: float = 0.5,
) -> SpinEnsemble:
    """Compute the couplings for a placement and wrap everything in a SpinEnsemble."""
    couplings, kappa = dipolar_couplings(positions, gamma_s, gamma_i)
    return SpinEnsemble(
        env_positions=_readonly(np.asarray(positions, dtype=float).reshape(-1, 3)),
        couplings=_readonly(couplings),
        kappa=_readonly(kappa),
        gamma_s=gamma_s,
        gamma_i=gamma_i,
        polarization=polarization,
    )


def ensemble_from_couplings(
    couplings: npt.ArrayLike,
    polarization: float = 0.5,
    kappa: npt.ArrayLike | None = None,
    gamma_s: float = 1.0,
    gamma_i: float = 1.0,
) -> SpinEnsemble:
    """Build an ensemble with prescribed probe couplings and intra-bath couplings (default none).

    Positions only label the spins: positive couplings sit on the equator at the
    radius giving lambda_k, negative ones on the z axis, zero ones at the magic angle.
    """
    lambdas = np.asarray(couplings, dtype=float).reshape(-1)
    n = len(lambdas)
    strength = gamma_s * gamma_i
    positions = np.zeros((n, 3))
    for k, lam in enumerate(lambdas):
        azimuth = 2 * math.pi * k / max(n, 1)
        if lam > 0:
            radius = (strength / lam) ** (1 / 3)
            positions[k] = radius * np.array([math.cos(azimuth), math.sin(azimuth), 0.0])
        elif lam < 0:
            positions[k, 2] = (2 * strength / -lam) ** (1 / 3) * (1 if k % 2 == 0 else -1)
        else:
            rho = math.sqrt(2 / 3)
            direction = [rho * math.cos(azimuth), rho * math.sin(azimuth), 1 / math.sqrt(3)]
            positions[k] = (1 + k) * np.array(direction)
    matrix = np.zeros((n, n)) if kappa is None else np.asarray(kappa, dtype=float)
    return SpinEnsemble(
        env_positions=_readonly(positions),
        couplings=_readonly(lambdas),
        kappa=_readonly(matrix),
        gamma_s=gamma_s,
        gamma_i=gamma_i,
        polarization=polarization,
    )


def sample_cube(n: int, seed: int, exclusion_radius: float = EXCLUSION_RADIUS) -> FloatArray:
    """Place n spins uniformly in the unit cube centered on the probe."""
    if n < 1:
        raise InvalidParameter("n", "at least one spin is required")
    if not 0 <= exclusion_radius < 0.5:
        raise InvalidParameter("exclusion_radius", "must lie in [0, 0.5)")
    rng = np.random.default_rng(seed)
    positions = rng.uniform(-0.5, 0.5, size=(n, 3))
    while True:
        close = np.linalg.norm(positions, axis=1) <= exclusion_radius
        if not close.any():
            return positions
        positions[close] = rng.uniform(-0.5, 0.5, size=(int(close.sum()), 3))


def lattice_sites(extent: float) -> FloatArray:
    """Return the diamond-lattice sites (cell edge 1) in the box [-extent/2, extent/2)^3.

    The probe sits on the origin site, which is not included.
    """
    # quarter-cell integer coordinates
    grid = np.arange(math.ceil(-2 * extent), math.ceil(2 * extent))
    a, b, c = (axis.ravel() for axis in np.meshgrid(grid, grid, grid, indexing="ij"))
    total = a + b + c
    fcc = (a % 2 == 0) & (b % 2 == 0) & (c % 2 == 0) & (total % 4 == 0)
    shifted = (a % 2 == 1) & (b % 2 == 1) & (c % 2 == 1) & (total % 4 == 3)
    origin = (a == 0) & (b == 0) & (c == 0)
    keep = (fcc | shifted) & ~origin
    if not keep.any():
        raise InvalidParameter("extent", "box too small: no lattice sites besides the probe")
    return np.column_stack([a[keep], b[keep], c[keep]]) / 4.0


def sample_lattice(density: float, extent: float, seed: int) -> FloatArray:
    """Occupy each diamond-lattice site around the probe independently with `density`."""
    if not 0 < density <= 1:
        raise InvalidParameter("density", "must lie in (0, 1]")
    sites = lattice_sites(extent)
    rng = np.random.default_rng(seed)
    occupied = sites[rng.random(len(sites)) < density]
    LOGGER.debug("Occupied %s of %s lattice sites", len(occupied), len(sites))
    return occupied


def _one_minus_three_cos2(vectors: FloatArray, distances: FloatArray) -> FloatArray:
    with np.errstate(invalid="ignore", divide="ignore"):
        cos_theta = vectors[..., 2] / distances
    return 1 - 3 * cos_theta**2


def dipolar_couplings(
    positions: npt.ArrayLike, gamma_s: float = 1.0, gamma_i: float = 1.0
) -> tuple[FloatArray, FloatArray]:
    """Return (lambda_k, kappa_jk) for spins around a probe at the origin.

    lambda_k = gamma_s gamma_i (1 - 3 cos^2 theta_k) / r_k^3 and
    kappa_jk = (gamma_i^2 / 2)(1 - 3 cos^2 theta_jk) / r_jk^3, entering the
    bath Hamiltonian as sum_{j<k} kappa_jk (3 Iz^j Iz^k - I^j . I^k).
    """
    points = np.asarray(positions, dtype=float).reshape(-1, 3)
    radii = np.linalg.norm(points, axis=1)
    if np.any(radii < _MIN_DISTANCE):
        raise CoincidentSpins((-1, int(np.argmin(radii))))
    couplings = gamma_s * gamma_i * _one_minus_three_cos2(points, radii) / radii**3

    n = len(points)
    separations = points[:, None, :] - points[None, :, :]
    distances = np.linalg.norm(separations, axis=2)
    np.fill_diagonal(distances, np.inf)
    if np.any(distances < _MIN_DISTANCE):
        j, k = np.unravel_index(int(np.argmin(distances)), distances.shape)
        raise CoincidentSpins((int(min(j, k)), int(max(j, k))))
    kappa = 0.5 * gamma_i**2 * _one_minus_three_cos2(separations, distances) / distances**3
    kappa[np.arange(n), np.arange(n)] = 0.0
    return couplings, kappa


def partition_clusters(kappa: npt.ArrayLike, gmax: int) -> ClusterPartition:
    """Group spins greedily by descending |kappa_jk| into clusters of at most gmax spins."""
    if gmax < 1:
        raise InvalidParameter("gmax", "must be at least 1")
    matrix = np.abs(np.asarray(kappa, dtype=float))
    n = matrix.shape[0]
    group_of = list(range(n))
    members: dict[int, list[int]] = {k: [k] for k in range(n)}
    j_idx, k_idx = np.triu_indices(n, k=1)
    # stable sort keeps ascending (j, k) order among equal couplings
    order = np.argsort(-matrix[j_idx, k_idx], kind="stable")
    for pos in order:
        gj, gk = group_of[j_idx[pos]], group_of[k_idx[pos]]
        if gj == gk or len(members[gj]) + len(members[gk]) > gmax:
            continue
        keep, drop = min(gj, gk), max(gj, gk)
        for spin in members[drop]:
            group_of[spin] = keep
        members[keep].extend(members.pop(drop))
    clusters = tuple(sorted(tuple(sorted(group)) for group in members.values()))
    return ClusterPartition(clusters=clusters, gmax=gmax)


def count_strong(couplings: npt.ArrayLike, tau: float) -> int:
    """Return the number of spins with |lambda_k tau| >= 2 pi."""
    if tau <= 0:
        raise InvalidParameter("tau", "must be positive")
    products = np.abs(np.asarray(couplings, dtype=float)) * tau
    # relative slack keeps products landing exactly on 2 pi inclusive
    return int(np.count_nonzero(products >= STRONG_COUPLING_THRESHOLD * (1 - 1e-12)))


def t2_star(couplings: npt.ArrayLike) -> float:
    """Return the dephasing time 1/sqrt(sum lambda_k^2)."""
    second_moment = float(np.sum(np.square(np.asarray(couplings, dtype=float))))
    if second_moment == 0:
        raise InvalidParameter("couplings", "T2* is undefined when every coupling is zero")
    return 1 / math.sqrt(second_moment)


def quality_q(polarization: float, couplings: npt.ArrayLike, t2: float) -> float:
    """Return Q = P sqrt(sum lambda_k^2) T2."""
    if t2 <= 0:
        raise InvalidParameter("t2", "must be positive")
    return polarization * math.sqrt(float(np.sum(np.square(couplings)))) * t2


def t_pol_estimate(n_sc: int, t2_star_value: float) -> float:
    """Return the polarization-time estimate n_sc T2*."""
    if n_sc < 0:
        raise InvalidParameter("n_sc", "must be non-negative")
    return n_sc * t2_star_value


def export_ensemble(ensemble: SpinEnsemble) -> str:
    """Serialize an ensemble as a plain-text table (x y z lambda) plus a kappa block."""
    lines = [
        f"{ENSEMBLE_HEADER} n={ensemble.n} gamma_s={ensemble.gamma_s!r} "
        f"gamma_i={ensemble.gamma_i!r} polarization={ensemble.polarization!r}",
        "# x y z lambda",
    ]
    lines.extend(
        " ".join(repr(float(v)) for v in (*position, coupling))
        for position, coupling in zip(ensemble.env_positions, ensemble.couplings, strict=True)
    )
    lines.append(KAPPA_MARKER)
    lines.extend(" ".join(repr(float(v)) for v in row) for row in ensemble.kappa)
    return "\n".join(lines) + "\n"


def import_ensemble(text: str) -> SpinEnsemble:
    """Parse the table written by export_ensemble."""
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if not lines or not lines[0].startswith(ENSEMBLE_HEADER):
        raise InvalidParameter("text", "missing ensemble header line")
    header = dict(item.split("=", 1) for item in lines[0][len(ENSEMBLE_HEADER) :].split())
    n = int(header["n"])
    marker = lines.index(KAPPA_MARKER)
    rows = np.array([[float(v) for v in line.split()] for line in lines[2:marker]]).reshape(-1, 4)
    kappa = np.array([[float(v) for v in line.split()] for line in lines[marker + 1 :]])
    if len(rows) != n:
        raise InvalidParameter("text", f"header announces {n} spins, table has {len(rows)}")
    return SpinEnsemble(
        env_positions=_readonly(rows[:, :3]),
        couplings=_readonly(rows[:, 3]),
        kappa=_readonly(kappa.reshape(n, n)),
        gamma_s=float(header["gamma_s"]),
        gamma_i=float(header["gamma_i"]),
        polarization=float(header["polarization"]),
    )
