"""Propagation of the probe coherence through a compiled sequence and Monte-Carlo decay curves."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from enum import StrEnum

import numpy as np
import numpy.typing as npt
from joblib import Parallel, delayed
from mashumaro import DataClassDictMixin

from .constants import (
    DEFAULT_GMAX,
    DEFAULT_POLARIZATION,
    DEFAULT_SEED,
    DEFAULT_TRIALS,
    LATTICE_EXTENT,
    MAX_BRUTE_FORCE_SITES,
    MAX_SITES,
    PHASE_SLOPE_STEP,
)
from .ensemble import (
    ClusterPartition,
    SpinEnsemble,
    build_ensemble,
    partition_clusters,
    sample_cube,
    sample_lattice,
)
from .exceptions import DimensionOverflow, InvalidParameter
from .helpers import format_csv, format_metadata, parse_csv, parse_metadata
from .sequence import (
    BranchSegments,
    DecouplingMode,
    FieldKind,
    FieldWaveform,
    PulseSequence,
    ReadoutPhase,
    SequenceKind,
    build_sequence,
    compile_toggling,
    embed_wahuha,
)
from .spincore import ProductState, density_matrix, expm_hermitian, site_operators

LOGGER = logging.getLogger(f"{__package__}.dynamics")

ComplexMatrix = npt.NDArray[np.complex128]
AxisTerms = tuple[ComplexMatrix, ComplexMatrix, ComplexMatrix]
DECAY_COLUMNS = ("tau", "envelope_mean", "envelope_stderr", "trials")
_THRESHOLD = math.exp(-1)
# rounding applied to cache keys of repeated segment exponentials
_KEY_DIGITS = 14


@dataclass(frozen=True)
class CoherenceResult:
    """Probe coherence after a sequence, with the per-cluster factors it is built from."""

    value: complex
    per_cluster: tuple[complex, ...]
    probe_factor: complex
    readout: ReadoutPhase

    @property
    def signal(self) -> float:
        """Return the readout probability S."""
        component = self.value.imag if self.readout == ReadoutPhase.Y else self.value.real
        return (1 + component) / 2

    @property
    def envelope(self) -> float:
        """Return |C|, the decoherence envelope."""
        return abs(self.value)


def _segments_of(seq: PulseSequence | BranchSegments) -> BranchSegments:
    return seq if isinstance(seq, BranchSegments) else compile_toggling(seq)


def _default_b0(seq: PulseSequence | BranchSegments, b0: float | None) -> float:
    if b0 is not None:
        return b0
    return seq.field.b0 if isinstance(seq, PulseSequence) else 0.0


class _ClusterTerms:
    """Projected single-spin, coupling and dipolar operators of one cluster, per axis."""

    def __init__(self, ensemble: SpinEnsemble) -> None:
        self.ensemble = ensemble
        self.n = ensemble.n
        self.ops = site_operators(self.n, MAX_SITES)
        self.dim = 2**self.n
        self._cache: dict[tuple[float, ...], AxisTerms] = {}
        exchange = np.zeros((self.dim, self.dim), dtype=np.complex128)
        for j in range(self.n):
            for k in range(j + 1, self.n):
                kappa = self.ensemble.kappa[j, k]
                if kappa:
                    pairs = zip(self.ops[j], self.ops[k], strict=True)
                    exchange += kappa * sum(a @ b for a, b in pairs)
        self.exchange = exchange

    def terms(self, axis: tuple[float, float, float]) -> AxisTerms:
        """Return (sum_k n.I^k, sum_k lambda_k n.I^k, dipolar operator) along axis n."""
        key = tuple(round(a, _KEY_DIGITS) for a in axis)
        if key not in self._cache:
            projected = [axis[0] * ix + axis[1] * iy + axis[2] * iz for ix, iy, iz in self.ops]
            total = sum(projected, np.zeros((self.dim, self.dim), dtype=np.complex128))
            coupled = sum(
                (lam * p for lam, p in zip(self.ensemble.couplings, projected, strict=True)),
                np.zeros((self.dim, self.dim), dtype=np.complex128),
            )
            dipolar = -self.exchange.copy()
            for j in range(self.n):
                for k in range(j + 1, self.n):
                    kappa = self.ensemble.kappa[j, k]
                    if kappa:
                        dipolar += 3 * kappa * projected[j] @ projected[k]
            self._cache[key] = (total, coupled, dipolar)
        return self._cache[key]


def branch_propagators(
    segments: BranchSegments,
    cluster: tuple[int, ...],
    ensemble: SpinEnsemble,
    b0: float = 0.0,
) -> tuple[ComplexMatrix, ComplexMatrix]:
    """Return the environment propagators (U0, U1) of a cluster along both probe paths.

    Each segment contributes exp(-i G) with G the segment Hamiltonian integrated
    exactly; later segments multiply from the left. Couplings to spins outside
    the cluster are ignored.
    """
    if len(cluster) > MAX_SITES:
        raise DimensionOverflow(len(cluster), MAX_SITES)
    sub = ensemble.subset(tuple(cluster))
    terms = _ClusterTerms(sub)
    propagators = [np.eye(terms.dim, dtype=np.complex128) for _ in range(2)]
    exponentials: dict[tuple[float, ...], ComplexMatrix] = {}
    for segment in segments.segments:
        total, coupled, dipolar = terms.terms(segment.axis)
        field_phase = sub.gamma_i * b0 * segment.field_weight
        for path in (0, 1):
            manifold = segment.manifolds[path]
            key = (
                *(round(a, _KEY_DIGITS) for a in segment.axis),
                segment.linear_scale,
                segment.dipolar_scale,
                manifold,
                round(segment.duration, _KEY_DIGITS),
                round(field_phase, _KEY_DIGITS),
            )
            if key not in exponentials:
                generator = segment.linear_scale * (
                    field_phase * total + manifold * segment.duration * coupled
                ) + segment.dipolar_scale * segment.duration * dipolar
                exponentials[key] = expm_hermitian(generator, 1.0)
            propagators[path] = exponentials[key] @ propagators[path]
    return propagators[0], propagators[1]


def _cluster_factor(
    segments: BranchSegments, cluster: tuple[int, ...], ensemble: SpinEnsemble, b0: float
) -> complex:
    u0, u1 = branch_propagators(segments, cluster, ensemble, b0)
    rho = density_matrix(ProductState(len(cluster), ensemble.polarization), MAX_SITES)
    return complex(np.trace(u1 @ rho @ u0.conj().T))


def coherence(
    seq: PulseSequence | BranchSegments,
    ensemble: SpinEnsemble,
    partition: ClusterPartition,
    b0: float | None = None,
) -> CoherenceResult:
    """Return the probe coherence with the bath factorized into disjoint clusters.

    The total is the probe's own field phase times the product of the cluster
    factors Tr[U1 rho_c U0^dagger]. b0 defaults to the amplitude on the sequence.
    """
    if not partition.is_valid(ensemble.n):
        raise InvalidParameter("partition", "clusters must be disjoint and cover every spin")
    segments = _segments_of(seq)
    amplitude = _default_b0(seq, b0)
    factors = tuple(_cluster_factor(segments, c, ensemble, amplitude) for c in partition.clusters)
    probe_factor = complex(np.exp(-1j * segments.probe_phase(amplitude, ensemble.gamma_s)))
    value = probe_factor * complex(np.prod(factors)) if factors else probe_factor
    return CoherenceResult(value, factors, probe_factor, segments.readout)


def brute_force_signal(
    seq: PulseSequence | BranchSegments, ensemble: SpinEnsemble, b0: float | None = None
) -> CoherenceResult:
    """Return the coherence evaluated in the full environment Hilbert space."""
    if ensemble.n > MAX_BRUTE_FORCE_SITES:
        raise DimensionOverflow(ensemble.n, MAX_BRUTE_FORCE_SITES)
    everything = tuple(range(ensemble.n))
    partition = ClusterPartition((everything,) if everything else (), max(ensemble.n, 1))
    return coherence(seq, ensemble, partition, b0)


def phase_slope(
    seq: PulseSequence,
    ensemble: SpinEnsemble,
    partition: ClusterPartition,
    delta: float = PHASE_SLOPE_STEP,
) -> float:
    """Return dS/db0 at b0 = 0 from a central difference with step delta."""
    if delta <= 0:
        raise InvalidParameter("delta", "must be positive")
    segments = compile_toggling(seq)
    upper = coherence(segments, ensemble, partition, delta).signal
    lower = coherence(segments, ensemble, partition, -delta).signal
    return (upper - lower) / (2 * delta)


def average_signal_random_phase(
    seq: PulseSequence,
    ensemble: SpinEnsemble,
    partition: ClusterPartition,
    b0: float,
    draws: int,
    rng: np.random.Generator,
) -> float:
    """Return the readout signal averaged over uniformly random field phases."""
    if draws < 1:
        raise InvalidParameter("draws", "must be at least 1")
    total = 0.0
    for _ in range(draws):
        phase = float(rng.uniform(0, 2 * math.pi))
        shifted = seq.with_field(seq.field.with_phase(phase))
        total += coherence(shifted, ensemble, partition, b0).signal
    return total / draws


@dataclass(frozen=True)
class T2Estimate:
    """Coherence time and whether the curve never crossed the threshold."""

    value: float
    censored: bool


def extract_t2(tau: npt.ArrayLike, envelope: npt.ArrayLike) -> T2Estimate:
    """Return the first downward crossing of 1/e, interpolated linearly.

    If the envelope never crosses, the largest tau is returned flagged as censored.
    """
    times = np.asarray(tau, dtype=float)
    values = np.asarray(envelope, dtype=float)
    if times.size == 0 or times.shape != values.shape:
        raise InvalidParameter("curve", "need matching, non-empty tau and envelope arrays")
    if values[0] < _THRESHOLD:
        raise InvalidParameter("curve", "envelope starts below 1/e")
    below = np.flatnonzero(values < _THRESHOLD)
    if below.size == 0:
        return T2Estimate(float(times[-1]), censored=True)
    k = int(below[0])
    t0, t1, v0, v1 = times[k - 1], times[k], values[k - 1], values[k]
    return T2Estimate(float(t0 + (v0 - _THRESHOLD) * (t1 - t0) / (v0 - v1)), censored=False)


class Placement(StrEnum):
    """How trial ensembles are drawn."""

    CUBE = "cube"
    LATTICE = "lattice"


@dataclass(frozen=True)
class DecaySpec:
    """Everything a Monte-Carlo decay run depends on besides the worker count.

    With normalize_time set, tau values are in units of pi/lambda_max of each trial.
    """

    tau: tuple[float, ...]
    sequence: SequenceKind = SequenceKind.EAM
    placement: Placement = Placement.LATTICE
    n_spins: int = 25
    density: float = 0.06
    extent: float = LATTICE_EXTENT
    polarization: float = DEFAULT_POLARIZATION
    gamma_s: float = 1.0
    gamma_i: float = 1.0
    field: FieldKind = FieldKind.AC_LOCKED
    b0: float = 0.0
    wahuha_cycles: int = 0
    wahuha_mode: DecouplingMode = DecouplingMode.EXPLICIT
    symmetrized: bool = False
    trials: int = DEFAULT_TRIALS
    seed: int = DEFAULT_SEED
    gmax: int = DEFAULT_GMAX
    normalize_time: bool = True

    def __post_init__(self) -> None:
        """Validate the grid and trial count."""
        if self.trials < 1:
            raise InvalidParameter("trials", "must be at least 1")
        if not self.tau or min(self.tau) <= 0:
            raise InvalidParameter("tau", "grid must be non-empty and positive")
        if self.wahuha_cycles < 0:
            raise InvalidParameter("wahuha_cycles", "must not be negative")

    def trial_ensemble(self, index: int) -> SpinEnsemble:
        """Return the placement of one trial, seeded with seed + index."""
        seed = self.seed + index
        if self.placement == Placement.CUBE:
            positions = sample_cube(self.n_spins, seed)
        else:
            positions = sample_lattice(self.density, self.extent, seed)
        return build_ensemble(positions, self.gamma_s, self.gamma_i, self.polarization)

    def build(self, tau: float, waveform: FieldWaveform) -> PulseSequence:
        """Return the sequence for one grid point."""
        seq = build_sequence(self.sequence, tau, waveform)
        if self.wahuha_cycles:
            seq = embed_wahuha(seq, self.wahuha_cycles, self.symmetrized, self.wahuha_mode)
        return seq


def run_trial(spec: DecaySpec, index: int) -> npt.NDArray[np.float64]:
    """Return the envelope of one trial over the tau grid."""
    ensemble = spec.trial_ensemble(index)
    partition = partition_clusters(ensemble.kappa, spec.gmax)
    unit = math.pi / ensemble.lambda_max if spec.normalize_time and ensemble.lambda_max else 1.0
    # random-phase draws come from a sub-stream of the trial seed
    rng = np.random.default_rng([spec.seed + index, 1])
    waveform = FieldWaveform(spec.field, spec.b0).draw_phase(rng)
    return np.array(
        [coherence(spec.build(t * unit, waveform), ensemble, partition).envelope for t in spec.tau]
    )


@dataclass
class DecayCurve(DataClassDictMixin):
    """Trial-averaged envelope over a tau grid with its extracted T2."""

    tau: list[float]
    envelope_mean: list[float]
    envelope_stderr: list[float]
    trials: int
    t2: float
    censored: bool
    sequence: str = SequenceKind.EAM.value
    extra: dict[str, str] = field(default_factory=dict)

    @classmethod
    def from_envelopes(
        cls, tau: npt.ArrayLike, envelopes: npt.ArrayLike, sequence: str = SequenceKind.EAM.value
    ) -> DecayCurve:
        """Aggregate a (trials, len(tau)) array of envelopes."""
        values = np.atleast_2d(np.asarray(envelopes, dtype=float))
        trials = values.shape[0]
        mean = values.mean(axis=0)
        stderr = np.zeros_like(mean)
        if trials > 1:
            stderr = values.std(axis=0, ddof=1) / math.sqrt(trials)
        estimate = extract_t2(tau, mean)
        return cls(
            tau=[float(t) for t in np.asarray(tau, dtype=float)],
            envelope_mean=mean.tolist(),
            envelope_stderr=stderr.tolist(),
            trials=trials,
            t2=estimate.value,
            censored=estimate.censored,
            sequence=sequence,
        )

    def to_csv(self) -> str:
        """Return the curve as CSV with the mandatory header row."""
        rows = (
            (t, m, s, self.trials)
            for t, m, s in zip(self.tau, self.envelope_mean, self.envelope_stderr, strict=True)
        )
        return format_csv(DECAY_COLUMNS, rows)

    def metadata(self) -> str:
        """Return the key = value sidecar carrying T2 and the censoring flag."""
        return format_metadata(
            {"sequence": self.sequence, "t2": self.t2, "censored": self.censored, **self.extra}
        )

    @classmethod
    def from_files(cls, csv_text: str, metadata_text: str) -> DecayCurve:
        """Rebuild a curve from its CSV table and metadata sidecar."""
        header, rows = parse_csv(csv_text)
        if tuple(header) != DECAY_COLUMNS:
            raise InvalidParameter("csv", f"unexpected columns {header}")
        meta = parse_metadata(metadata_text)
        sequence = meta.pop("sequence", SequenceKind.EAM.value)
        t2 = float(meta.pop("t2"))
        censored = meta.pop("censored") == "true"
        return cls(
            tau=[float(row[0]) for row in rows],
            envelope_mean=[float(row[1]) for row in rows],
            envelope_stderr=[float(row[2]) for row in rows],
            trials=int(rows[0][3]) if rows else 0,
            t2=t2,
            censored=censored,
            sequence=sequence,
            extra=meta,
        )


def decay_curve(spec: DecaySpec, n_jobs: int = 1) -> DecayCurve:
    """Average the envelope over independent trials; deterministic for any n_jobs."""
    start = time.monotonic()
    LOGGER.info(
        "Running %s trials of %s over %s tau points (n_jobs=%s)",
        spec.trials,
        spec.sequence,
        len(spec.tau),
        n_jobs,
    )
    # joblib returns results in submission order, so aggregation is keyed by trial index
    envelopes = Parallel(n_jobs=n_jobs)(delayed(run_trial)(spec, i) for i in range(spec.trials))
    curve = DecayCurve.from_envelopes(spec.tau, np.vstack(envelopes), spec.sequence.value)
    LOGGER.info(
        "Decay run finished in %.1f s: T2 = %.4g%s",
        time.monotonic() - start,
        curve.t2,
        " (censored)" if curve.censored else "",
    )
    return curve
