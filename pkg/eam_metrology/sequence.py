"""Pulse sequences on the probe and environment channels and their toggling-frame form."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from enum import StrEnum
from fractions import Fraction

import numpy as np
import numpy.typing as npt

from .constants import WAHUHA_SCALING
from .exceptions import InvalidParameter, SequenceError
from .spincore import rotation_matrix

LOGGER = logging.getLogger(f"{__package__}.sequence")

TIMELINE_HEADER = "# time channel phase angle"
# events closer than this (relative to the duration) share a time stamp
_TIME_EPS = 1e-12
_HALF_PI = math.pi / 2


class Channel(StrEnum):
    """Control channel a pulse acts on."""

    PROBE = "probe"
    ENVIRONMENT = "environment"


class ReadoutPhase(StrEnum):
    """Axis of the final probe pi/2 pulse."""

    Y = "y"
    X = "x"


class FieldKind(StrEnum):
    """Waveform of the field to be measured."""

    AC_LOCKED = "ac_locked"
    STATIC = "static"
    AC_RANDOM_PHASE = "ac_random_phase"


class SequenceKind(StrEnum):
    """Built-in sequence families."""

    ECHO = "echo"
    EAM = "eam"
    EAM_X = "eam_x"
    EAM_SPINHALF = "eam_spinhalf"


class DecouplingMode(StrEnum):
    """How WAHUHA cycles enter the compiled segments."""

    EXPLICIT = "explicit"
    AVERAGED = "averaged"


@dataclass(frozen=True)
class FieldWaveform:
    """Field b(t); the ac kinds oscillate with the sequence period tau."""

    kind: FieldKind = FieldKind.AC_LOCKED
    b0: float = 0.0
    phase: float = 0.0

    def value(self, t: float, tau: float) -> float:
        """Return b(t) for a sequence of duration tau."""
        if self.kind == FieldKind.STATIC:
            return self.b0
        return self.b0 * math.sin(2 * math.pi * t / tau + self.phase)

    def unit_integral(self, t0: float, t1: float, tau: float) -> float:
        """Return the integral of b(t)/b0 over [t0, t1] from the closed-form antiderivative."""
        if self.kind == FieldKind.STATIC:
            return t1 - t0
        omega = 2 * math.pi / tau
        return (math.cos(omega * t0 + self.phase) - math.cos(omega * t1 + self.phase)) / omega

    def integral(self, t0: float, t1: float, tau: float) -> float:
        """Return the integral of b(t) over [t0, t1]."""
        return self.b0 * self.unit_integral(t0, t1, tau)

    def with_phase(self, phase: float) -> FieldWaveform:
        """Return the waveform with a different phase (used for random-phase draws)."""
        return replace(self, phase=phase)

    def draw_phase(self, rng: np.random.Generator) -> FieldWaveform:
        """Return a copy with a phase drawn uniformly from [0, 2 pi) for random-phase fields."""
        if self.kind != FieldKind.AC_RANDOM_PHASE:
            return self
        return self.with_phase(float(rng.uniform(0, 2 * math.pi)))


@dataclass(frozen=True)
class PulseEvent:
    """Instantaneous rotation by `angle` about the xy-plane axis at azimuth `phase`."""

    time: float
    channel: Channel
    phase: float
    angle: float

    def __post_init__(self) -> None:
        """Validate the rotation angle range (-2 pi, 2 pi]."""
        if not -2 * math.pi < self.angle <= 2 * math.pi:
            raise SequenceError(f"pulse angle {self.angle} outside (-2pi, 2pi]")

    @property
    def axis(self) -> npt.NDArray[np.float64]:
        """Return the rotation axis as a unit vector in the xy-plane."""
        return np.array([math.cos(self.phase), math.sin(self.phase), 0.0])

    def rotation(self) -> npt.NDArray[np.float64]:
        """Return the SO(3) rotation this pulse applies to environment spin vectors."""
        return rotation_matrix(self.axis, self.angle)


@dataclass(frozen=True)
class Decoupling:
    """WAHUHA embedding parameters recorded on a sequence."""

    cycles_per_interval: int
    symmetrized: bool = False
    mode: DecouplingMode = DecouplingMode.EXPLICIT


@dataclass(frozen=True)
class PulseSequence:
    """Timed probe and environment pulses of duration tau plus the field waveform."""

    duration: float
    events: tuple[PulseEvent, ...]
    field: FieldWaveform = field(default_factory=FieldWaveform)
    readout: ReadoutPhase = ReadoutPhase.Y
    probe_spin: Fraction = Fraction(1)
    decoupling: Decoupling | None = None

    def __post_init__(self) -> None:
        """Validate ordering, time bounds and the probe pi/2 framing."""
        if self.duration <= 0:
            raise InvalidParameter("tau", "must be positive")
        times = [event.time for event in self.events]
        if times != sorted(times):
            raise SequenceError("events out of order")
        slack = _TIME_EPS * self.duration
        if times and (times[0] < -slack or times[-1] > self.duration + slack):
            raise SequenceError("event outside [0, tau]")
        probe = [event for event in self.events if event.channel == Channel.PROBE]
        if len(probe) < 2:
            raise SequenceError("a sequence needs the opening and closing probe pi/2 pulses")
        first, last = probe[0], probe[-1]
        if not (
            abs(first.time) <= slack
            and abs(last.time - self.duration) <= slack
            and math.isclose(abs(first.angle), _HALF_PI)
            and math.isclose(abs(last.angle), _HALF_PI)
        ):
            raise SequenceError("first and last probe events must be pi/2 pulses at 0 and tau")

    def environment_events(self) -> tuple[PulseEvent, ...]:
        """Return the environment-channel pulses."""
        return tuple(e for e in self.events if e.channel == Channel.ENVIRONMENT)

    def with_field(self, waveform: FieldWaveform) -> PulseSequence:
        """Return the same pulses with another field waveform."""
        return replace(self, field=waveform)


def _probe_frame(tau: float, readout: ReadoutPhase) -> tuple[PulseEvent, PulseEvent, PulseEvent]:
    readout_phase = _HALF_PI if readout == ReadoutPhase.Y else 0.0
    return (
        PulseEvent(0.0, Channel.PROBE, 0.0, _HALF_PI),
        PulseEvent(tau / 2, Channel.PROBE, 0.0, math.pi),
        PulseEvent(tau, Channel.PROBE, readout_phase, _HALF_PI),
    )


def _sorted(events: list[PulseEvent]) -> tuple[PulseEvent, ...]:
    return tuple(sorted(events, key=lambda event: event.time))


def build_echo(
    tau: float, waveform: FieldWaveform | None = None, readout: ReadoutPhase = ReadoutPhase.Y
) -> PulseSequence:
    """Return the probe spin echo pi/2 - tau/2 - pi - tau/2 - pi/2."""
    if tau <= 0:
        raise InvalidParameter("tau", "must be positive")
    return PulseSequence(
        duration=tau,
        events=_probe_frame(tau, readout),
        field=waveform or FieldWaveform(),
        readout=readout,
    )


def _eam_environment_pulses(tau: float) -> list[PulseEvent]:
    # toggling-frame axes per quarter: z, x, z, x (the same e^{-iaIx} e^{-iaIz} on both paths)
    minus_y, plus_y = -_HALF_PI, _HALF_PI
    return [
        PulseEvent(tau / 4, Channel.ENVIRONMENT, minus_y, _HALF_PI),
        PulseEvent(tau / 2, Channel.ENVIRONMENT, plus_y, _HALF_PI),
        PulseEvent(3 * tau / 4, Channel.ENVIRONMENT, minus_y, _HALF_PI),
    ]


def build_eam(
    tau: float, waveform: FieldWaveform | None = None, readout: ReadoutPhase = ReadoutPhase.Y
) -> PulseSequence:
    """Return the environment-assisted sequence: probe echo plus environment pi/2 pulses."""
    if tau <= 0:
        raise InvalidParameter("tau", "must be positive")
    return PulseSequence(
        duration=tau,
        events=_sorted([*_probe_frame(tau, readout), *_eam_environment_pulses(tau)]),
        field=waveform or FieldWaveform(),
        readout=readout,
    )


def build_eam_spinhalf(tau: float, waveform: FieldWaveform | None = None) -> PulseSequence:
    """Return the spin-1/2 probe variant: environment rotated from z to +y, then the EAM pulses."""
    if tau <= 0:
        raise InvalidParameter("tau", "must be positive")
    # rotation by -pi/2 about x maps +z to +y
    prepare = PulseEvent(0.0, Channel.ENVIRONMENT, 0.0, -_HALF_PI)
    events = [prepare, *_probe_frame(tau, ReadoutPhase.Y), *_eam_environment_pulses(tau)]
    return PulseSequence(
        duration=tau,
        events=_sorted(events),
        field=waveform or FieldWaveform(),
        readout=ReadoutPhase.Y,
        probe_spin=Fraction(1, 2),
    )


def build_sequence(
    kind: SequenceKind | str, tau: float, waveform: FieldWaveform | None = None
) -> PulseSequence:
    """Return a built-in sequence by kind."""
    match SequenceKind(kind):
        case SequenceKind.ECHO:
            return build_echo(tau, waveform)
        case SequenceKind.EAM:
            return build_eam(tau, waveform)
        case SequenceKind.EAM_X:
            return build_eam(tau, waveform, ReadoutPhase.X)
        case SequenceKind.EAM_SPINHALF:
            return build_eam_spinhalf(tau, waveform)
    msg = f"unknown sequence kind {kind}"
    raise SequenceError(msg)


# WHH-4: tc/6 - X - tc/6 - Ybar - tc/3 - Y - tc/6 - Xbar - tc/6
WAHUHA_WINDOWS = (1 / 6, 1 / 6, 1 / 3, 1 / 6, 1 / 6)
WAHUHA_PULSES = ((0.0, _HALF_PI), (_HALF_PI, -_HALF_PI), (_HALF_PI, _HALF_PI), (0.0, -_HALF_PI))


def mirrored_cycle(
    windows: tuple[float, ...], pulses: tuple[tuple[float, float], ...]
) -> tuple[tuple[float, ...], tuple[tuple[float, float], ...]]:
    """Return the time-mirrored cycle: windows reversed, pulses inverted in reverse order."""
    return windows[::-1], tuple((phase, -angle) for phase, angle in reversed(pulses))


def _cycle_events(
    start: float, length: float, windows: tuple[float, ...], pulses: tuple[tuple[float, float], ...]
) -> list[PulseEvent]:
    events = []
    t = start
    for window, (phase, angle) in zip(windows[:-1], pulses, strict=True):
        t += window * length
        events.append(PulseEvent(t, Channel.ENVIRONMENT, phase, angle))
    return events


def embed_wahuha(
    seq: PulseSequence,
    cycles_per_interval: int,
    symmetrized: bool = False,
    mode: DecouplingMode | str = DecouplingMode.EXPLICIT,
) -> PulseSequence:
    """Fill every free-evolution interval with WAHUHA cycles on the environment channel.

    In explicit mode the pulses are inserted. In averaged mode only the embedding
    is recorded and compile_toggling applies the cycle average: the linear terms
    scale by 1/sqrt(3) and the secular dipolar term vanishes.
    """
    if cycles_per_interval < 1:
        raise InvalidParameter("cycles_per_interval", "must be at least 1")
    if seq.decoupling is not None:
        raise SequenceError("sequence already carries a decoupling embedding")
    mode = DecouplingMode(mode)
    decoupling = Decoupling(cycles_per_interval, symmetrized, mode)
    if mode == DecouplingMode.AVERAGED:
        return replace(seq, decoupling=decoupling)

    windows, pulses = WAHUHA_WINDOWS, WAHUHA_PULSES
    if symmetrized:
        mirror_windows, mirror_pulses = mirrored_cycle(windows, pulses)
        # the joint unit is cycle + mirror, each half of the unit length
        windows = tuple(w / 2 for w in windows[:-1]) + (
            windows[-1] / 2 + mirror_windows[0] / 2,
        ) + tuple(w / 2 for w in mirror_windows[1:])
        pulses = pulses + mirror_pulses

    boundaries = sorted({0.0, seq.duration, *(event.time for event in seq.events)})
    inserted: list[PulseEvent] = []
    for start, stop in zip(boundaries[:-1], boundaries[1:], strict=True):
        length = stop - start
        if length <= _TIME_EPS * seq.duration:
            continue
        cycle = length / cycles_per_interval
        if cycle * min(windows) <= _TIME_EPS * seq.duration:
            msg = f"WAHUHA cycle of {cycle} does not fit the interval [{start}, {stop}]"
            raise SequenceError(msg)
        for index in range(cycles_per_interval):
            inserted.extend(_cycle_events(start + index * cycle, cycle, windows, pulses))
    LOGGER.debug("Inserted %s WAHUHA pulses", len(inserted))
    return replace(seq, events=_sorted([*seq.events, *inserted]), decoupling=decoupling)


@dataclass(frozen=True)
class Segment:
    """Piecewise-constant stretch of the toggling-frame environment Hamiltonian.

    In manifold m the generator over the segment is
    linear_scale * (gamma_i b0 field_weight + m lambda_k duration) (axis . I^k)
    plus dipolar_scale * duration * kappa_jk (3 (axis . I^j)(axis . I^k) - I^j . I^k).
    """

    start: float
    stop: float
    axis: tuple[float, float, float]
    manifolds: tuple[float, float]
    field_weight: float
    linear_scale: float = 1.0
    dipolar_scale: float = 1.0

    @property
    def duration(self) -> float:
        """Return the segment length."""
        return self.stop - self.start


@dataclass(frozen=True)
class BranchSegments:
    """Compiled sequence: both probe paths share the segment list, with per-path manifolds.

    Path 1 starts in the upper probe manifold (m = 1, or +1/2), path 0 in the lower one.
    """

    duration: float
    segments: tuple[Segment, ...]
    readout: ReadoutPhase
    probe_spin: Fraction

    def field_coefficients(self, b0: float) -> npt.NDArray[np.float64]:
        """Return the compiled field integral of every segment for amplitude b0."""
        return b0 * np.array([segment.field_weight for segment in self.segments])

    def probe_phase(self, b0: float, gamma_s: float) -> float:
        """Return gamma_s times the integral of b (m_1 - m_0) dt over the sequence."""
        return gamma_s * sum(
            b0 * segment.field_weight * (segment.manifolds[1] - segment.manifolds[0])
            for segment in self.segments
        )


def _manifold_values(probe_spin: Fraction) -> tuple[float, float]:
    if probe_spin == 1:
        return 0.0, 1.0
    if probe_spin == Fraction(1, 2):
        return -0.5, 0.5
    msg = f"unsupported probe spin {probe_spin}"
    raise SequenceError(msg)


_AVERAGE_DIRECTION = np.ones(3) / 3


def compile_toggling(seq: PulseSequence) -> BranchSegments:
    """Compile a sequence into per-path piecewise-constant toggling-frame segments.

    A probe pi pulse swaps the manifold of both paths; an environment pulse
    multiplies the accumulated frame rotation R, and a segment's lab z axis
    becomes R^T z.
    """
    lower, upper = _manifold_values(seq.probe_spin)
    manifolds = (lower, upper)
    frame = np.eye(3)
    averaged = seq.decoupling is not None and seq.decoupling.mode == DecouplingMode.AVERAGED
    slack = _TIME_EPS * seq.duration

    segments: list[Segment] = []
    cursor = 0.0
    for event in (*seq.events, None):
        stop = seq.duration if event is None else min(max(event.time, 0.0), seq.duration)
        if stop - cursor > slack:
            if averaged:
                direction = frame.T @ _AVERAGE_DIRECTION
                axis = direction / np.linalg.norm(direction)
                linear, dipolar = WAHUHA_SCALING, 0.0
            else:
                axis = frame.T @ np.array([0.0, 0.0, 1.0])
                linear, dipolar = 1.0, 1.0
            segments.append(
                Segment(
                    start=cursor,
                    stop=stop,
                    axis=(float(axis[0]), float(axis[1]), float(axis[2])),
                    manifolds=manifolds,
                    field_weight=seq.field.unit_integral(cursor, stop, seq.duration),
                    linear_scale=linear,
                    dipolar_scale=dipolar,
                )
            )
            cursor = stop
        if event is None:
            break
        if event.channel == Channel.ENVIRONMENT:
            frame = event.rotation() @ frame
        elif math.isclose(abs(event.angle), math.pi):
            manifolds = (manifolds[1], manifolds[0])
        elif not math.isclose(abs(event.angle), _HALF_PI):
            msg = f"probe pulse angle {event.angle} at t={event.time}: only pi and pi/2 allowed"
            raise SequenceError(msg)

    # close the time budget exactly on tau
    if segments and segments[-1].stop != seq.duration:
        segments[-1] = replace(segments[-1], stop=seq.duration)
    return BranchSegments(
        duration=seq.duration,
        segments=tuple(segments),
        readout=seq.readout,
        probe_spin=seq.probe_spin,
    )


def avg_fields(waveform: FieldWaveform, tau: float) -> tuple[float, float]:
    """Return (B1bar, B2bar) for a waveform over a sequence of duration tau."""
    if tau <= 0:
        raise InvalidParameter("tau", "must be positive")
    b1 = (waveform.integral(0, tau / 2, tau) - waveform.integral(tau / 2, tau, tau)) / tau
    b2 = -waveform.integral(tau / 2, 3 * tau / 4, tau) / tau
    return b1, b2


def format_timeline(seq: PulseSequence) -> str:
    """Return one event per line: time, channel, phase and angle (radians)."""
    lines = [TIMELINE_HEADER]
    lines.extend(
        f"{event.time!r} {event.channel.value} {event.phase!r} {event.angle!r}"
        for event in seq.events
    )
    return "\n".join(lines) + "\n"


def parse_timeline(text: str) -> tuple[PulseEvent, ...]:
    """Parse the events written by format_timeline."""
    events = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        time, channel, phase, angle = line.split()
        events.append(PulseEvent(float(time), Channel(channel), float(phase), float(angle)))
    return tuple(events)
