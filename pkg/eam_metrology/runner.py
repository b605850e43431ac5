"""Batch runner: dispatch a RunConfig to its pipeline and write CSV tables plus run metadata."""

from __future__ import annotations

import logging
import math
import time
from collections.abc import Callable
from dataclasses import dataclass, field, replace
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import numpy as np

from .analytic import (
    PhaseInputs,
    enhancement_factor,
    nopol_curvature,
    optimize_tau,
    ratio_asymptote,
    ratio_curves,
    sensitivity_echo1,
    sensitivity_nopol,
    signal_nopol,
)
from .config import Command, RunConfig, config_hash
from .constants import (
    CURVATURE_FIELD_FRACTION,
    PROPAGATED_ENHANCEMENT_WEIGHT,
    WAHUHA_SCALING,
)
from .dynamics import (
    branch_propagators,
    brute_force_signal,
    coherence,
    decay_curve,
    phase_slope,
)
from .ensemble import (
    ClusterPartition,
    SpinEnsemble,
    build_ensemble,
    ensemble_from_couplings,
    partition_clusters,
    sample_cube,
)
from .exceptions import VerificationFailed
from .helpers import format_csv, json_dumps, write_atomic
from .sequence import (
    DecouplingMode,
    FieldKind,
    FieldWaveform,
    PulseSequence,
    SequenceKind,
    avg_fields,
    build_eam,
    build_echo,
    build_sequence,
    compile_toggling,
    embed_wahuha,
)
from .spincore import unitarity_error

CheckResult = tuple[bool, str]


def package_version() -> str:
    """Return the installed package version."""
    try:
        return version("eam_metrology")
    except PackageNotFoundError:
        return "0.0.0"


@dataclass
class RunReport:
    """Outcome of one run: written files and, for verify, the per-check results."""

    command: Command
    files: list[Path] = field(default_factory=list)
    checks: dict[str, CheckResult] = field(default_factory=dict)
    wall_time: float = 0.0

    @property
    def failed(self) -> list[str]:
        """Return the names of failing checks."""
        return [name for name, (passed, _) in self.checks.items() if not passed]


class Runner:
    """Execute one configured command and write its artifacts."""

    def __init__(
        self, config: RunConfig, output_dir: str | Path | None = None, threads: int = -1
    ) -> None:
        """Initialize the runner."""
        self.config = config
        self.output_dir = Path(output_dir if output_dir is not None else config.output)
        self.threads = threads
        self.logger = logging.getLogger(__package__)

    def run(self) -> RunReport:
        """Run the configured command; raise VerificationFailed after writing a failing verify."""
        start = time.monotonic()
        self.output_dir.mkdir(parents=True, exist_ok=True)
        report = RunReport(self.config.command)
        self.logger.info("Starting %s run (seed %s)", self.config.command, self.config.seed)
        handlers: dict[Command, Callable[[RunReport], None]] = {
            Command.DECAY: self._run_decay,
            Command.SENSITIVITY: self._run_sensitivity,
            Command.PHASE: self._run_phase,
            Command.NOPOL: self._run_nopol,
            Command.VERIFY: self._run_verify,
        }
        handlers[self.config.command](report)
        report.wall_time = time.monotonic() - start
        report.files.append(self._write_metadata(report))
        self.logger.info(
            "Finished in %.2f s, wrote %s file(s)", report.wall_time, len(report.files)
        )
        if report.failed:
            raise VerificationFailed(report.failed)
        return report

    def _write(self, report: RunReport, name: str, text: str) -> None:
        report.files.append(write_atomic(self.output_dir / name, text))
        self.logger.debug("Wrote %s", name)

    def _write_metadata(self, report: RunReport) -> Path:
        metadata = {
            "command": self.config.command.value,
            "seed": self.config.seed,
            "config_hash": config_hash(self.config),
            "version": package_version(),
            "wall_time": report.wall_time,
            "threads": self.threads,
            "files": [path.name for path in report.files],
            "config": self.config.to_dict(),
        }
        if report.checks:
            metadata["checks"] = {name: passed for name, (passed, _) in report.checks.items()}
        return write_atomic(self.output_dir / "metadata.json", json_dumps(metadata, indent=True))

    def _run_decay(self, report: RunReport) -> None:
        curve = decay_curve(self.config.decay_spec(), n_jobs=self.threads)
        curve.extra["seed"] = str(self.config.seed)
        curve.extra["config_hash"] = config_hash(self.config)
        self._write(report, "decay.csv", curve.to_csv())
        self._write(report, "decay.meta", curve.metadata())

    def _run_sensitivity(self, report: RunReport) -> None:
        cfg = self.config
        table = ratio_curves(cfg.q_list, cfg.r_grid, cfg.t2b, cfg.c, cfg.gamma)
        self._write(report, "ratios.csv", table.to_csv())

    def _run_phase(self, report: RunReport) -> None:
        """Tabulate the enhancement factor of a single spin against lambda tau and P.

        With normalize_time the tau grid is read in units of pi/lambda, as in decay runs.
        """
        cfg = self.config
        rows = []
        for t in cfg.tau_grid:
            tau = t * math.pi if cfg.normalize_time else t
            b1, b2 = avg_fields(FieldWaveform(FieldKind.AC_LOCKED, 1.0), tau)
            for polarization in cfg.p_list:
                inputs = PhaseInputs((1.0,), tau, polarization, b1, b2, cfg.gamma_s, cfg.gamma_i)
                printed = enhancement_factor(inputs)
                propagated = enhancement_factor(
                    replace(inputs, weight=PROPAGATED_ENHANCEMENT_WEIGHT)
                )
                simulated = _simulated_enhancement(tau, polarization, cfg.gamma_s, cfg.gamma_i)
                rows.append((tau, polarization, printed, propagated, simulated))
        header = (
            "lambda_tau",
            "P",
            "enhancement_printed",
            "enhancement_propagated",
            "enhancement_simulated",
        )
        self._write(report, "phase.csv", format_csv(header, rows))

    def _run_nopol(self, report: RunReport) -> None:
        """Tabulate the zero-polarization signal with three estimates of its curvature.

        The printed curvature comes from the exact-sum signal, the propagated one from
        the closed form and the simulated ones from the x-readout EAM at
        b0 tau / 2 pi = CURVATURE_FIELD_FRACTION, unpolarized and at the configured P.
        """
        cfg = self.config
        ensemble = cfg.decay_spec().trial_ensemble(0)
        unit = _time_unit(ensemble) if cfg.normalize_time else 1.0
        if ensemble.n == 0:
            self.logger.warning("Empty bath; curvatures reduce to the bare probe")
        rows = []
        for t in cfg.tau_grid:
            tau = t * unit
            signal = signal_nopol(ensemble.couplings, cfg.nopol_b, tau)
            rows.append(
                (
                    tau,
                    signal.n_sc,
                    signal.exact,
                    signal.approximate,
                    (1 - signal.exact) / cfg.nopol_b**2,
                    nopol_curvature(ensemble.couplings, tau, cfg.gamma_s, cfg.gamma_i),
                    _simulated_curvature(ensemble, tau, 0.0),
                    _simulated_curvature(ensemble, tau, cfg.polarization),
                    sensitivity_nopol(cfg.gamma, cfg.c, tau, signal.n_sc, "echo"),
                    sensitivity_nopol(cfg.gamma, cfg.c, tau, signal.n_sc, "eam"),
                )
            )
        header = (
            "tau",
            "n_sc",
            "signal_exact",
            "signal_approx",
            "curvature_printed",
            "curvature_propagated",
            "curvature_simulated",
            "curvature_simulated_polarized",
            "eta_echo",
            "eta_eam",
        )
        self._write(report, "nopol.csv", format_csv(header, rows))

    def _run_verify(self, report: RunReport) -> None:
        for name, check in VERIFY_CHECKS.items():
            try:
                report.checks[name] = check(self.config, self.threads)
            except Exception as err:  # noqa: BLE001
                report.checks[name] = (False, f"raised {type(err).__name__}: {err}")
            passed, detail = report.checks[name]
            if passed:
                self.logger.info("PASS %s: %s", name, detail)
            else:
                self.logger.error("FAIL %s: %s", name, detail)
        rows = [(name, passed, detail) for name, (passed, detail) in report.checks.items()]
        self._write(report, "verify.csv", format_csv(("check", "passed", "detail"), rows))
        self.logger.info(
            "%s of %s checks passed", len(rows) - len(report.failed), len(report.checks)
        )


def _simulated_enhancement(
    tau: float, polarization: float, gamma_s: float, gamma_i: float
) -> float:
    """Return the EAM phase slope over the echo slope for one spin with lambda = 1."""
    ensemble = ensemble_from_couplings([1.0], polarization, gamma_s=gamma_s, gamma_i=gamma_i)
    partition = ClusterPartition(((0,),), 1)
    waveform = FieldWaveform(FieldKind.AC_LOCKED)
    eam = phase_slope(build_eam(tau, waveform), ensemble, partition)
    echo = phase_slope(build_echo(tau, waveform), ensemble, partition)
    return eam / echo


def _simulated_curvature(ensemble: SpinEnsemble, tau: float, polarization: float) -> float:
    """Return (1 - S_x) / b0^2 of the x-readout EAM with the bath couplings dropped."""
    bath = ensemble_from_couplings(
        ensemble.couplings, polarization, gamma_s=ensemble.gamma_s, gamma_i=ensemble.gamma_i
    )
    b0 = 2 * math.pi * CURVATURE_FIELD_FRACTION / tau
    seq = build_sequence(SequenceKind.EAM_X, tau, FieldWaveform(FieldKind.AC_LOCKED, b0))
    singletons = ClusterPartition(tuple((k,) for k in range(bath.n)), 1)
    return (1 - coherence(seq, bath, singletons).signal) / b0**2


def _time_unit(ensemble: SpinEnsemble) -> float:
    """Return pi / lambda_max, or 1 for a bath without couplings."""
    return math.pi / ensemble.lambda_max if ensemble.lambda_max > 0 else 1.0


def _cube_ensemble(config: RunConfig, n: int) -> tuple[SpinEnsemble, ClusterPartition]:
    positions = sample_cube(n, config.seed)
    ensemble = build_ensemble(positions, config.gamma_s, config.gamma_i, config.polarization)
    return ensemble, partition_clusters(ensemble.kappa, config.gmax)


def check_unitarity(config: RunConfig, threads: int) -> CheckResult:
    """Propagators of a four-spin cluster stay unitary."""
    ensemble, _ = _cube_ensemble(config, 4)
    segments = compile_toggling(build_eam(0.5 * math.pi / ensemble.lambda_max))
    u0, u1 = branch_propagators(segments, (0, 1, 2, 3), ensemble, 0.1)
    error = max(unitarity_error(u0), unitarity_error(u1))
    return error < 1e-10, f"max |U^dagger U - I| = {error:.2e}"


def check_envelope_bounds(config: RunConfig, threads: int) -> CheckResult:
    """Every cluster factor lies in the unit disk and the product is bounded by each factor."""
    ensemble = config.decay_spec().trial_ensemble(0)
    partition = partition_clusters(ensemble.kappa, config.gmax)
    unit = _time_unit(ensemble)
    worst = 0.0
    for t in config.tau_grid[:5]:
        result = coherence(build_eam(t * unit), ensemble, partition)
        moduli = [abs(f) for f in result.per_cluster]
        largest = max(moduli, default=1.0)
        smallest = min(moduli, default=1.0)
        worst = max(worst, largest - 1, result.envelope - smallest)
    return worst <= 1e-12, f"largest excess {worst:.2e} over {ensemble.n} spin(s)"


def check_partition_validity(config: RunConfig, threads: int) -> CheckResult:
    """Partitions of several trial ensembles are disjoint covers within gmax."""
    spec = config.decay_spec()
    for index in range(5):
        ensemble = spec.trial_ensemble(index)
        if not partition_clusters(ensemble.kappa, config.gmax).is_valid(ensemble.n):
            return False, f"trial {index} has an invalid partition"
    return True, "5 trials checked"


def check_determinism(config: RunConfig, threads: int) -> CheckResult:
    """A short decay run is identical with one worker and with several."""
    spec = config.decay_spec(trials=2, tau=config.tau_grid[:3])
    serial = decay_curve(spec, n_jobs=1).to_csv()
    parallel = decay_curve(spec, n_jobs=threads if threads not in (0, 1) else 2).to_csv()
    return serial == parallel, "serial and parallel CSV bodies compared"


def check_oracle_equivalence(config: RunConfig, threads: int) -> CheckResult:
    """Eight spins in one cluster match the brute-force coherence; clusters of 4 stay close."""
    ensemble, _ = _cube_ensemble(config, 8)
    unit = _time_unit(ensemble)
    exact = partition_clusters(ensemble.kappa, 8)
    worst = 0.0
    for t in np.linspace(0.05, 2.0, 20):
        seq = build_eam(float(t) * unit)
        clustered = coherence(seq, ensemble, exact).value
        worst = max(worst, abs(clustered - brute_force_signal(seq, ensemble).value))
    seq = build_eam(0.2 * unit)
    approximate = coherence(seq, ensemble, partition_clusters(ensemble.kappa, 4)).value
    deviation = abs(approximate - brute_force_signal(seq, ensemble).value)
    passed = worst < 1e-10 and deviation < 0.05
    return passed, f"max difference {worst:.2e} at gmax 8, {deviation:.2e} at gmax 4"


def check_refocusing(config: RunConfig, threads: int) -> CheckResult:
    """Without intra-bath couplings and field, echo and EAM envelopes stay at 1."""
    cube, _ = _cube_ensemble(config, 6)
    ensemble = ensemble_from_couplings(cube.couplings, config.polarization)
    partition = partition_clusters(ensemble.kappa, config.gmax)
    worst = 0.0
    for t in config.tau_grid:
        tau = t * math.pi / ensemble.lambda_max
        for seq in (build_echo(tau), build_eam(tau)):
            worst = max(worst, abs(1 - coherence(seq, ensemble, partition).envelope))
    return worst < 1e-10, f"max |1 - envelope| = {worst:.2e}"


def check_static_immunity(config: RunConfig, threads: int) -> CheckResult:
    """A static field leaves the echo unchanged, and the unpolarized EAM without bath couplings."""
    cube, partition = _cube_ensemble(config, 6)
    unpolarized = ensemble_from_couplings(cube.couplings, 0.0)
    static = FieldWaveform(FieldKind.STATIC, 0.3)
    tau = 0.4 * math.pi / cube.lambda_max
    worst = 0.0
    cases = (
        (cube, partition, build_echo),
        (unpolarized, partition_clusters(unpolarized.kappa, config.gmax), build_eam),
    )
    for ensemble, clusters, builder in cases:
        with_field = coherence(builder(tau, static), ensemble, clusters).signal
        without = coherence(builder(tau), ensemble, clusters).signal
        worst = max(worst, abs(with_field - without))
    return worst < 1e-10, f"max signal change {worst:.2e}"


def check_phase_reproduction(config: RunConfig, threads: int) -> CheckResult:
    """Single spin, lambda tau = 4 pi, P = 1: the EAM phase slope is 1.25 times the echo slope."""
    ratio = _simulated_enhancement(4 * math.pi, 1.0, 1.0, 1.0)
    return abs(ratio / 1.25 - 1) < 5e-3, f"slope ratio {ratio:.6f}"


def check_optimizer(config: RunConfig, threads: int) -> CheckResult:
    """Golden-section search finds the echo optimum 6^(-1/3) T2B."""
    t2b = config.t2b
    result = optimize_tau(lambda tau: sensitivity_echo1(1.0, 1.0, tau, t2b), t2b=t2b)
    passed = abs(result.tau / (6 ** (-1 / 3) * t2b) - 1) < 1e-4 and not result.at_boundary
    return passed, f"tau* = {result.tau:.6g}"


def check_wahuha_scaling(config: RunConfig, threads: int) -> CheckResult:
    """A static Zeeman term precesses 1/sqrt(3) as fast under WAHUHA, explicit or averaged.

    The explicit cycle also integrates the secular dipolar tensor 3 a a^T - 1 to zero.
    """
    ensemble = ensemble_from_couplings([0.0], 0.0)
    singleton = (0,)
    b0 = 1e-3

    def rotation(seq: PulseSequence) -> float:
        u0, _ = branch_propagators(compile_toggling(seq), singleton, ensemble, b0)
        return float(np.ptp(np.angle(np.linalg.eigvals(u0))))

    echo = build_echo(1.0, FieldWaveform(FieldKind.STATIC))
    bare = rotation(echo)
    averaged = rotation(embed_wahuha(echo, 1, mode=DecouplingMode.AVERAGED)) / bare
    explicit_seq = embed_wahuha(echo, 1)
    explicit = rotation(explicit_seq) / bare
    tensor = np.zeros((3, 3))
    for segment in compile_toggling(explicit_seq).segments:
        axis = np.asarray(segment.axis)
        tensor += segment.duration * (3 * np.outer(axis, axis) - np.eye(3))
    passed = (
        abs(averaged - WAHUHA_SCALING) < 1e-6
        and abs(explicit - WAHUHA_SCALING) < 1e-2
        and bool(np.allclose(tensor, 0, atol=1e-9))
    )
    return passed, f"rotation ratio {averaged:.6f} averaged, {explicit:.6f} explicit"


def check_asymptote(config: RunConfig, threads: int) -> CheckResult:
    """At r = 30 the environment-normalized ratio approaches the large-r asymptote."""
    table = ratio_curves((10.0, 20.0, 30.0, 50.0), [30.0], config.t2b, config.c, config.gamma)
    worst = max(abs(row.ratio_b / ratio_asymptote(row.q) - 1) for row in table.rows)
    return worst < 0.02, f"max relative deviation {worst:.4f}"


VERIFY_CHECKS: dict[str, Callable[[RunConfig, int], CheckResult]] = {
    "unitarity": check_unitarity,
    "envelope_bounds": check_envelope_bounds,
    "partition_validity": check_partition_validity,
    "determinism": check_determinism,
    "oracle_equivalence": check_oracle_equivalence,
    "refocusing": check_refocusing,
    "static_immunity": check_static_immunity,
    "phase_reproduction": check_phase_reproduction,
    "optimizer": check_optimizer,
    "wahuha_scaling": check_wahuha_scaling,
    "asymptote": check_asymptote,
}
