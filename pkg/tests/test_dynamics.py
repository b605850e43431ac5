"""Tests for coherence propagation, the cluster product and Monte-Carlo decay curves."""

from __future__ import annotations

import math
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest
from scipy import linalg

from eam_metrology.analytic import (
    PhaseInputs,
    enhancement_factor,
    nopol_curvature,
    random_phase_mean_signal,
    signal_nopol,
)
from eam_metrology.constants import PROPAGATED_ENHANCEMENT_WEIGHT
from eam_metrology.dynamics import (
    DECAY_COLUMNS,
    DecayCurve,
    DecaySpec,
    Placement,
    average_signal_random_phase,
    branch_propagators,
    brute_force_signal,
    coherence,
    decay_curve,
    extract_t2,
    phase_slope,
    run_trial,
)
from eam_metrology.ensemble import (
    ClusterPartition,
    SpinEnsemble,
    build_ensemble,
    ensemble_from_couplings,
    partition_clusters,
    sample_cube,
)
from eam_metrology.exceptions import DimensionOverflow, InvalidParameter
from eam_metrology.sequence import (
    Channel,
    DecouplingMode,
    FieldKind,
    FieldWaveform,
    ReadoutPhase,
    SequenceKind,
    build_eam,
    build_echo,
    build_sequence,
    compile_toggling,
    embed_wahuha,
)
from eam_metrology.spincore import spin_operators, unitarity_error

AC = FieldWaveform(FieldKind.AC_LOCKED)
HALF = spin_operators(Fraction(1, 2))


def _singletons(n: int) -> ClusterPartition:
    return ClusterPartition(tuple((k,) for k in range(n)), 1)


def _everything(ensemble: SpinEnsemble) -> ClusterPartition:
    return ClusterPartition((tuple(range(ensemble.n)),), ensemble.n)


def test_echo_refocuses_without_intra_bath_couplings() -> None:
    """With kappa = 0 and no field the echo returns the probe exactly."""
    ensemble = ensemble_from_couplings([0.9, -2.3, 4.1, 0.2], polarization=0.5)
    result = coherence(build_echo(1.7, AC), ensemble, _singletons(4))
    assert abs(result.value - 1) < 1e-12
    assert result.envelope == pytest.approx(1.0, abs=1e-12)


def test_echo_slope_without_environment(empty_ensemble: SpinEnsemble) -> None:
    """A bare probe measures dS_y/db0 = -gamma_s tau / pi at b0 = 0."""
    empty = ClusterPartition((), 1)
    tau = 0.8
    slope = phase_slope(build_echo(tau, AC), empty_ensemble, empty)
    assert slope == pytest.approx(-tau / math.pi, rel=1e-6)
    result = coherence(build_echo(tau, AC), empty_ensemble, empty, b0=0.3)
    assert result.per_cluster == ()
    assert result.value == pytest.approx(np.exp(-1j * 2 * 0.3 * tau / math.pi))


@pytest.mark.parametrize(
    ("lambda_tau", "polarization"), [(4 * math.pi, 1.0), (math.pi, 0.5), (2 * math.pi, 0.25)]
)
def test_eam_slope_enhancement(lambda_tau: float, polarization: float) -> None:
    """The EAM slope over the echo slope matches the propagated closed form."""
    ensemble = ensemble_from_couplings([1.0], polarization)
    partition = _singletons(1)
    eam = phase_slope(build_eam(lambda_tau, AC), ensemble, partition)
    echo = phase_slope(build_echo(lambda_tau, AC), ensemble, partition)
    inputs = PhaseInputs(
        couplings=(1.0,),
        tau=lambda_tau,
        polarization=polarization,
        b1bar=2 / math.pi,
        b2bar=1 / (2 * math.pi),
        weight=PROPAGATED_ENHANCEMENT_WEIGHT,
    )
    assert eam / echo == pytest.approx(enhancement_factor(inputs), rel=1e-4)


def test_eam_enhancement_reference_point() -> None:
    """At lambda tau = 4 pi and P = 1 the slope grows by a quarter."""
    ensemble = ensemble_from_couplings([1.0], 1.0)
    eam = phase_slope(build_eam(4 * math.pi, AC), ensemble, _singletons(1))
    echo = phase_slope(build_echo(4 * math.pi, AC), ensemble, _singletons(1))
    assert eam / echo == pytest.approx(1.25, rel=1e-4)


def test_eam_enhancement_adds_over_spins() -> None:
    """Without intra-bath couplings each spin adds its own sin^2 term."""
    couplings = (0.7, -1.3, 2.1)
    ensemble = ensemble_from_couplings(couplings, 0.5)
    tau = 3.0
    eam = phase_slope(build_eam(tau, AC), ensemble, _singletons(3))
    echo = phase_slope(build_echo(tau, AC), ensemble, _singletons(3))
    inputs = PhaseInputs(
        couplings, tau, 0.5, 2 / math.pi, 1 / (2 * math.pi), weight=PROPAGATED_ENHANCEMENT_WEIGHT
    )
    assert eam / echo == pytest.approx(enhancement_factor(inputs), rel=1e-4)


def test_branch_propagators_match_matrix_exponentials() -> None:
    """Single-spin EAM propagators equal the product of the quarter exponentials."""
    tau, b0, lam = 1.3, 0.4, 2.2
    ensemble = ensemble_from_couplings([lam], 0.5)
    u0, u1 = branch_propagators(compile_toggling(build_eam(tau, AC)), (0,), ensemble, b0)
    quarters = [(k * tau / 4, (k + 1) * tau / 4) for k in range(4)]
    axes = [HALF.sz, HALF.sx, HALF.sz, HALF.sx]
    manifolds = {1: (1, 1, 0, 0), 0: (0, 0, 1, 1)}
    for path, actual in ((0, u0), (1, u1)):
        expected = np.eye(2, dtype=complex)
        for (t0, t1), op, m in zip(quarters, axes, manifolds[path], strict=True):
            strength = b0 * AC.unit_integral(t0, t1, tau) + m * lam * tau / 4
            expected = linalg.expm(-1j * strength * op) @ expected
        assert np.allclose(actual, expected, atol=1e-12)


def test_propagators_are_unitary(cube_ensemble: SpinEnsemble) -> None:
    """Propagators with intra-bath couplings stay unitary."""
    segments = compile_toggling(embed_wahuha(build_eam(0.4, AC), 2))
    u0, u1 = branch_propagators(segments, (0, 1, 2, 3, 4, 5), cube_ensemble, 0.2)
    assert max(unitarity_error(u0), unitarity_error(u1)) < 1e-10


def test_cluster_product_is_exact_without_kappa() -> None:
    """Singleton clusters reproduce the full Hilbert space when kappa = 0."""
    ensemble = ensemble_from_couplings([1.1, -0.4, 2.9, 0.6, -3.3], polarization=0.7)
    seq = embed_wahuha(build_eam(0.9, FieldWaveform(FieldKind.AC_LOCKED, b0=0.25)), 1)
    clustered = coherence(seq, ensemble, _singletons(5))
    full = brute_force_signal(seq, ensemble)
    assert abs(clustered.value - full.value) < 1e-10


def test_full_cluster_equals_brute_force(cube_ensemble: SpinEnsemble) -> None:
    """One cluster holding every spin is the brute-force evaluation."""
    seq = build_eam(0.3, FieldWaveform(FieldKind.AC_LOCKED, b0=0.1))
    clustered = coherence(seq, cube_ensemble, _everything(cube_ensemble))
    assert abs(clustered.value - brute_force_signal(seq, cube_ensemble).value) < 1e-12


@pytest.fixture
def eight_spins() -> SpinEnsemble:
    """Eight spins in the unit cube with full intra-bath couplings."""
    return build_ensemble(sample_cube(8, seed=3), polarization=0.5)


@pytest.mark.parametrize("kind", [SequenceKind.ECHO, SequenceKind.EAM])
def test_single_cluster_matches_brute_force_on_a_grid(
    eight_spins: SpinEnsemble, kind: SequenceKind
) -> None:
    """With gmax = 8 the cluster product equals the full evaluation at 20 tau points."""
    partition = partition_clusters(eight_spins.kappa, 8)
    assert len(partition.clusters) == 1
    unit = math.pi / eight_spins.lambda_max
    waveform = FieldWaveform(FieldKind.AC_LOCKED, b0=0.2)
    for t in np.linspace(0.05, 2.0, 20):
        seq = build_sequence(kind, float(t) * unit, waveform)
        clustered = coherence(seq, eight_spins, partition).value
        assert abs(clustered - brute_force_signal(seq, eight_spins).value) < 1e-10


def test_small_clusters_approximate_brute_force(eight_spins: SpinEnsemble) -> None:
    """Clusters of at most 4 stay within 0.05 of the full evaluation at short times."""
    partition = partition_clusters(eight_spins.kappa, 4)
    assert len(partition.clusters) >= 2
    seq = build_eam(0.2 * math.pi / eight_spins.lambda_max)
    clustered = coherence(seq, eight_spins, partition).value
    assert abs(clustered - brute_force_signal(seq, eight_spins).value) < 0.05


def test_environment_pulse_phases_leave_coherence_unchanged(
    cube_ensemble: SpinEnsemble,
) -> None:
    """Turning every environment pulse axis about z is a symmetry of the bath.

    rho and the secular couplings are invariant under a global z rotation.
    """
    partition = partition_clusters(cube_ensemble.kappa, 3)
    seq = build_eam(0.7, FieldWaveform(FieldKind.AC_LOCKED, b0=0.3))
    turned = replace(
        seq,
        events=tuple(
            replace(event, phase=event.phase + 0.9)
            if event.channel == Channel.ENVIRONMENT
            else event
            for event in seq.events
        ),
    )
    expected = coherence(seq, cube_ensemble, partition).value
    assert abs(coherence(turned, cube_ensemble, partition).value - expected) < 1e-10


@pytest.mark.parametrize("symmetrized", [False, True])
def test_explicit_wahuha_converges_quadratically(symmetrized: bool) -> None:
    """The explicit-pulse coherence approaches the averaged one as the cycle time squared."""
    kappa = np.array(
        [
            [0.0, 0.4, -0.3, 0.2],
            [0.4, 0.0, 0.5, -0.25],
            [-0.3, 0.5, 0.0, 0.35],
            [0.2, -0.25, 0.35, 0.0],
        ]
    )
    ensemble = ensemble_from_couplings([0.9, -1.4, 2.0, 0.6], 0.5, kappa=kappa)
    partition = ClusterPartition(((0, 1, 2, 3),), 4)
    seq = build_eam(1.0, FieldWaveform(FieldKind.AC_LOCKED, b0=0.5))
    averaged = coherence(
        embed_wahuha(seq, 1, symmetrized, DecouplingMode.AVERAGED), ensemble, partition
    ).value
    cycles = np.array([4, 8, 16, 32])
    errors = [
        abs(coherence(embed_wahuha(seq, int(n), symmetrized), ensemble, partition).value - averaged)
        for n in cycles
    ]
    slopes = np.diff(np.log(errors)) / np.diff(np.log(cycles))
    assert np.all((slopes > -2.3) & (slopes < -1.7)), slopes


def test_envelope_is_bounded(cube_ensemble: SpinEnsemble) -> None:
    """|C| never exceeds one."""
    partition = partition_clusters(cube_ensemble.kappa, 3)
    for tau in (0.01, 0.1, 1.0):
        for kind in SequenceKind:
            result = coherence(build_sequence(kind, tau), cube_ensemble, partition)
            assert result.envelope <= 1 + 1e-12


def test_brute_force_dimension_cap() -> None:
    """The brute-force oracle refuses more than twelve spins."""
    ensemble = ensemble_from_couplings(np.linspace(0.5, 1.5, 13))
    with pytest.raises(DimensionOverflow):
        brute_force_signal(build_echo(1.0), ensemble)


def test_invalid_partition_rejected(cube_ensemble: SpinEnsemble) -> None:
    """Partitions that miss a spin are rejected."""
    with pytest.raises(InvalidParameter):
        coherence(build_echo(1.0), cube_ensemble, _singletons(5))


def test_echo_is_immune_to_static_fields(cube_ensemble: SpinEnsemble) -> None:
    """A static field leaves the echo signal unchanged at any polarization."""
    partition = partition_clusters(cube_ensemble.kappa, 3)
    seq = build_echo(0.6, FieldWaveform(FieldKind.STATIC))
    reference = coherence(seq, cube_ensemble, partition, b0=0.0)
    shifted = coherence(seq, cube_ensemble, partition, b0=0.8)
    assert abs(shifted.value - reference.value) < 1e-12


def test_unpolarized_eam_is_immune_to_static_fields() -> None:
    """At P = 0 without intra-bath couplings a static field drops out of the EAM signal."""
    ensemble = ensemble_from_couplings([1.5, -0.8, 3.0], polarization=0.0)
    seq = build_eam(1.1, FieldWaveform(FieldKind.STATIC))
    reference = coherence(seq, ensemble, _singletons(3), b0=0.0)
    shifted = coherence(seq, ensemble, _singletons(3), b0=0.8)
    assert shifted.signal == pytest.approx(reference.signal, abs=1e-12)


def test_unpolarized_curvature() -> None:
    """At P = 0 the x-readout signal falls as 1 - K b0^2."""
    couplings = [0.8, -1.7, 2.6]
    tau, b0 = 2.4, 1e-3
    ensemble = ensemble_from_couplings(couplings, polarization=0.0)
    seq = build_sequence(SequenceKind.EAM_X, tau, FieldWaveform(FieldKind.AC_LOCKED, b0=b0))
    signal = coherence(seq, ensemble, _singletons(3)).signal
    assert (1 - signal) / b0**2 == pytest.approx(nopol_curvature(couplings, tau), rel=1e-4)


def _x_readout_coefficient(ensemble: SpinEnsemble, tau: float, b0: float) -> float:
    seq = build_sequence(SequenceKind.EAM_X, tau, FieldWaveform(FieldKind.AC_LOCKED, b0=b0))
    return (1 - coherence(seq, ensemble, _singletons(ensemble.n)).signal) / b0**2


def test_two_spin_x_readout_coefficient() -> None:
    """At b tau / 2 pi = 1e-2 two spins follow the propagated curvature, not the exact-sum form."""
    couplings, tau = (1.3, -2.1), 2.0
    b0 = 2 * math.pi * 1e-2 / tau
    ensemble = ensemble_from_couplings(couplings, polarization=0.0)
    simulated = _x_readout_coefficient(ensemble, tau, b0)
    assert simulated == pytest.approx(nopol_curvature(couplings, tau), rel=2e-3)
    assert simulated == pytest.approx(0.4373, rel=2e-3)
    exact_sum = (1 - signal_nopol(couplings, b0, tau).exact) / b0**2
    assert exact_sum == pytest.approx(0.1792, rel=2e-3)

    blind = replace(ensemble, gamma_s=0.0)
    unpolarized = _x_readout_coefficient(blind, tau, b0)
    polarized = _x_readout_coefficient(blind.with_polarization(0.3), tau, b0)
    assert polarized == pytest.approx(unpolarized, rel=1e-2)


def test_single_spin_x_readout_ignores_polarization(single_spin: SpinEnsemble) -> None:
    """Without a probe field coupling the x-readout of one spin does not depend on P."""
    blind = replace(single_spin, gamma_s=0.0)
    seq = build_sequence(SequenceKind.EAM_X, 5.0, FieldWaveform(FieldKind.AC_LOCKED, b0=0.3))
    signals = [
        coherence(seq, blind.with_polarization(p), _singletons(1)).signal for p in (0.0, 0.5, 1.0)
    ]
    assert np.allclose(signals, signals[0], atol=1e-12)


def test_spin_half_signal_is_linear_in_polarization(single_spin: SpinEnsemble) -> None:
    """The spin-1/2 variant's slope shifts linearly with P."""
    seq = build_sequence(SequenceKind.EAM_SPINHALF, 2 * math.pi, AC)
    slopes = [
        phase_slope(seq, single_spin.with_polarization(p), _singletons(1)) for p in (0.0, 0.5, 1.0)
    ]
    assert slopes[2] - slopes[0] == pytest.approx(2 * (slopes[1] - slopes[0]), abs=1e-8)
    assert abs(slopes[2] - slopes[0]) > 1e-3


def test_random_phase_average(empty_ensemble: SpinEnsemble) -> None:
    """Averaging over the field phase gives 1/2 for y and (1 + J0) / 2 for x readout."""
    tau, b0 = 1.0, math.pi
    empty = ClusterPartition((), 1)
    waveform = FieldWaveform(FieldKind.AC_RANDOM_PHASE)
    amplitude = 2 * b0 * tau / math.pi
    for readout in ReadoutPhase:
        seq = build_echo(tau, waveform, readout)
        rng = np.random.default_rng(42)
        mean = average_signal_random_phase(seq, empty_ensemble, empty, b0, 4000, rng)
        assert mean == pytest.approx(random_phase_mean_signal(amplitude, readout), abs=0.03)


def test_extract_t2() -> None:
    """The 1/e crossing is interpolated; curves that never cross are censored."""
    estimate = extract_t2([1.0, 2.0, 3.0], [1.0, 0.5, 0.2])
    assert estimate.value == pytest.approx(2 + (0.5 - math.exp(-1)) / 0.3)
    assert not estimate.censored
    censored = extract_t2([1.0, 2.0, 3.0], [1.0, 0.9, 0.8])
    assert censored.value == 3.0
    assert censored.censored
    with pytest.raises(InvalidParameter):
        extract_t2([1.0, 2.0], [0.2, 0.1])
    with pytest.raises(InvalidParameter):
        extract_t2([1.0, 2.0], [1.0])


def test_extract_t2_of_cubic_decay() -> None:
    """A sampled exp(-(tau/2)^3) decay gives T2 = 2 to grid resolution."""
    tau = np.linspace(0.01, 4.0, 400)
    estimate = extract_t2(tau, np.exp(-((tau / 2) ** 3)))
    assert estimate.value == pytest.approx(2.0, abs=tau[1] - tau[0])


SMALL = DecaySpec(
    tau=(0.2, 0.6, 1.0),
    sequence=SequenceKind.EAM,
    placement=Placement.CUBE,
    n_spins=5,
    trials=3,
    seed=4,
    gmax=3,
)


def test_trials_are_seeded_by_index() -> None:
    """Each trial draws its own placement from seed + index."""
    assert np.array_equal(SMALL.trial_ensemble(1).couplings, SMALL.trial_ensemble(1).couplings)
    assert not np.array_equal(
        SMALL.trial_ensemble(0).couplings, SMALL.trial_ensemble(1).couplings
    )
    assert np.array_equal(run_trial(SMALL, 2), run_trial(replace(SMALL, trials=1), 2))


def test_decay_curve_is_deterministic() -> None:
    """Serial and parallel runs give identical curves."""
    serial = decay_curve(SMALL, n_jobs=1)
    parallel = decay_curve(SMALL, n_jobs=2)
    assert serial == parallel
    assert serial.to_csv() == decay_curve(SMALL).to_csv()
    assert serial.trials == 3
    assert all(0 <= value <= 1 + 1e-12 for value in serial.envelope_mean)


def test_decay_curve_files() -> None:
    """The CSV table and metadata sidecar read back into the same curve."""
    curve = DecayCurve.from_envelopes([0.5, 1.0, 1.5], [[1.0, 0.6, 0.1], [1.0, 0.4, 0.3]])
    csv_text = curve.to_csv()
    assert csv_text.splitlines()[0] == ",".join(DECAY_COLUMNS)
    assert "censored = false" in curve.metadata()
    assert DecayCurve.from_files(csv_text, curve.metadata()) == curve
    assert curve.to_dict()["trials"] == 2


def test_decay_spec_validation() -> None:
    """Empty or non-positive grids and zero trials are rejected."""
    with pytest.raises(InvalidParameter):
        DecaySpec(tau=())
    with pytest.raises(InvalidParameter):
        DecaySpec(tau=(0.0, 1.0))
    with pytest.raises(InvalidParameter):
        DecaySpec(tau=(1.0,), trials=0)


FIGURE_TAU = tuple(np.geomspace(0.05, 100.0, 40).tolist())


def _lattice_spec(sequence: SequenceKind, density: float, **overrides: object) -> DecaySpec:
    return DecaySpec(
        tau=FIGURE_TAU,
        sequence=sequence,
        placement=Placement.LATTICE,
        density=density,
        polarization=0.5,
        trials=100,
        seed=1,
        gmax=6,
        normalize_time=False,
        **overrides,
    )


@pytest.mark.slow
def test_eam_and_echo_decay_on_the_same_scale() -> None:
    """With about 25 spins the EAM decays faster than the echo, but within a factor of 6.

    The z, x, z, x toggling axes expose the transverse spin components to the
    Ising part of the intra-bath coupling, which the echo never sees.
    """
    eam = decay_curve(_lattice_spec(SequenceKind.EAM, 0.06), n_jobs=-1)
    echo = decay_curve(_lattice_spec(SequenceKind.ECHO, 0.06), n_jobs=-1)
    assert not eam.censored
    assert not echo.censored
    assert 1 / 6 <= eam.t2 / echo.t2 < 1


@pytest.mark.slow
@pytest.mark.parametrize("sequence", [SequenceKind.ECHO, SequenceKind.EAM])
def test_denser_bath_decays_faster(sequence: SequenceKind) -> None:
    """Doubling the density shortens the coherence time."""
    sparse = decay_curve(_lattice_spec(sequence, 0.06), n_jobs=-1)
    dense = decay_curve(_lattice_spec(sequence, 0.125), n_jobs=-1)
    assert dense.t2 < sparse.t2


@pytest.mark.slow
def test_wahuha_slows_the_decay() -> None:
    """Ten explicit WAHUHA cycles per interval raise the envelope where the bare echo is 1/2."""
    bare = decay_curve(_lattice_spec(SequenceKind.ECHO, 0.06), n_jobs=-1)
    index = next(k for k, value in enumerate(bare.envelope_mean) if value <= 0.5)
    spec = _lattice_spec(
        SequenceKind.ECHO, 0.06, wahuha_cycles=10, wahuha_mode=DecouplingMode.EXPLICIT
    )
    decoupled = decay_curve(replace(spec, tau=(bare.tau[index],)), n_jobs=-1)
    assert decoupled.envelope_mean[0] > bare.envelope_mean[index]
    assert decoupled.envelope_mean[0] < 1
