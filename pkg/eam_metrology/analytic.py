"""Closed-form phases and sensitivities, interrogation-time optimization and ratio curves."""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Iterable
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from scipy import special

from .constants import (
    OPTIMIZER_BRACKET,
    OPTIMIZER_RTOL,
    PRINTED_ENHANCEMENT_WEIGHT,
    STRONG_COUPLING_THRESHOLD,
)
from .ensemble import count_strong
from .exceptions import InvalidParameter
from .helpers import format_csv
from .sequence import ReadoutPhase

LOGGER = logging.getLogger(f"{__package__}.analytic")

RATIO_COLUMNS = ("r", "Q", "ratio_a", "ratio_b", "tau_star")
_INV_PHI = (math.sqrt(5) - 1) / 2


@dataclass(frozen=True)
class SensitivityModel:
    """Environment quality Q, coherence ratio r = T2B/T2 and readout constants."""

    q: float
    r: float
    t2b: float = 1.0
    c: float = 1.0
    gamma: float = 1.0
    polarization: float = 1.0

    def __post_init__(self) -> None:
        """Validate the parameter ranges."""
        if self.q < 0:
            raise InvalidParameter("Q", "must not be negative")
        if self.r <= 0:
            raise InvalidParameter("r", "must be positive")
        if self.t2b <= 0:
            raise InvalidParameter("t2b", "must be positive")
        if not 0 < self.c <= 1:
            raise InvalidParameter("C", "must lie in (0, 1]")


@dataclass(frozen=True)
class PhaseInputs:
    """Couplings, duration, polarization and averaged fields entering the phase formulas.

    `weight` multiplies P in the enhancement term; the conventional closed form uses 2,
    propagating rho = 1/2 + P Iz through the sequence gives 1.
    """

    couplings: tuple[float, ...]
    tau: float
    polarization: float
    b1bar: float
    b2bar: float
    gamma_s: float = 1.0
    gamma_i: float = 1.0
    weight: float = PRINTED_ENHANCEMENT_WEIGHT

    def __post_init__(self) -> None:
        """Validate tau and P."""
        if self.tau <= 0:
            raise InvalidParameter("tau", "must be positive")
        if abs(self.polarization) > 1:
            raise InvalidParameter("polarization", "|P| must not exceed 1")

    @property
    def lambdas(self) -> npt.NDArray[np.float64]:
        """Return the couplings as an array."""
        return np.asarray(self.couplings, dtype=float)

    @property
    def probe_phase(self) -> float:
        """Return gamma_s B1bar tau, the bare echo phase."""
        return self.gamma_s * self.b1bar * self.tau

    def environment_phase(self, sin2_sum: float) -> float:
        """Return the environment-assisted contribution for a given sum of sin^2 terms."""
        return self.weight * self.polarization * self.gamma_i * self.b2bar * self.tau * sin2_sum


def phase_eam(inputs: PhaseInputs) -> float:
    """Return gamma_s B1 tau [1 + w P (gamma_i B2)/(gamma_s B1) sum_k sin^2(lambda_k tau/8)].

    Evaluated in the additive form, which stays defined when B1bar is zero.
    """
    sin2_sum = float(np.sum(np.sin(inputs.lambdas * inputs.tau / 8) ** 2))
    return inputs.probe_phase + inputs.environment_phase(sin2_sum)


def enhancement_factor(inputs: PhaseInputs) -> float:
    """Return phase_eam divided by the bare echo phase."""
    if inputs.probe_phase == 0:
        raise InvalidParameter("b1bar", "the ratio form needs gamma_s B1bar != 0")
    return phase_eam(inputs) / inputs.probe_phase


def phase_general(inputs: PhaseInputs, ma: float, mb: float) -> float:
    """Return the phase for probe manifolds (ma, mb); sin^2 arguments scale by |ma| - |mb|."""
    factor = abs(ma) - abs(mb)
    if factor == 0:
        raise InvalidParameter("manifolds", f"|{ma}| and |{mb}| are degenerate")
    sin2_sum = float(np.sum(np.sin(factor * inputs.lambdas * inputs.tau / 8) ** 2))
    return inputs.probe_phase + inputs.environment_phase(sin2_sum)


def phase_strong(inputs: PhaseInputs) -> float:
    """Return the phase with strongly coupled spins averaged to 1/2 and weak ones expanded.

    Spins with |lambda tau| >= 2 pi contribute 1/2 each; the others (lambda tau/8)^2.
    """
    products = np.abs(inputs.lambdas) * inputs.tau
    n_sc = count_strong(inputs.lambdas, inputs.tau) if products.size else 0
    weak = products[products < STRONG_COUPLING_THRESHOLD * (1 - 1e-12)]
    return inputs.probe_phase + inputs.environment_phase(n_sc / 2 + float(np.sum((weak / 8) ** 2)))


def phase_spin_half(
    couplings: Iterable[float],
    tau: float,
    polarization: float,
    b: float,
    proportionality: float = 1.0,
) -> float:
    """Return proportionality * b tau P sum_k sin^3(lambda_k tau/4) for a spin-1/2 probe."""
    if tau <= 0:
        raise InvalidParameter("tau", "must be positive")
    lambdas = np.asarray(list(couplings), dtype=float)
    return proportionality * b * tau * polarization * float(np.sum(np.sin(lambdas * tau / 4) ** 3))


def echo_phase(b0: float, tau: float, gamma: float = 1.0) -> float:
    """Return 2 gamma b0 tau/pi, the echo phase under the locked sinusoidal field."""
    return 2 * gamma * b0 * tau / math.pi


def ideal_dqc1_signal(n: int, b: float, t: float) -> float:
    """Return sin(n b t), the signal of n perfectly polarized spins acting coherently."""
    return math.sin(n * b * t)


def sql_sensitivity(n: int, single: float) -> float:
    """Return the standard-quantum-limit scaling single/sqrt(n)."""
    if n < 1:
        raise InvalidParameter("n", "must be at least 1")
    return single / math.sqrt(n)


def heisenberg_sensitivity(n: int, single: float) -> float:
    """Return the Heisenberg scaling single/n."""
    if n < 1:
        raise InvalidParameter("n", "must be at least 1")
    return single / n


def _check_positive(**values: float) -> None:
    for name, value in values.items():
        if value <= 0:
            raise InvalidParameter(name, "must be positive")


def _decay(*terms: float) -> float:
    # exp of large cubic exponents overflows to inf, which the optimizer treats as worse
    with np.errstate(over="ignore"):
        return float(np.exp(sum(terms)))


def sensitivity_ideal(gamma: float, c: float, polarization: float, n_sc: int, tau: float) -> float:
    """Return pi/[C gamma (2 + P n_sc/2) sqrt(tau)]."""
    if polarization == 0:
        msg = "valid only for P != 0; use signal_nopol and sensitivity_nopol at zero polarization"
        raise InvalidParameter("polarization", msg)
    _check_positive(tau=tau)
    return math.pi / (c * gamma * (2 + 0.5 * polarization * n_sc) * math.sqrt(tau))


def sensitivity_real(
    gamma: float, c: float, polarization: float, n_sc: int, tau: float, t2: float, t2b: float
) -> float:
    """Return the ideal sensitivity degraded by exp((tau/T2)^3) exp((tau/T2B)^3)."""
    _check_positive(t2=t2, t2b=t2b, tau=tau)
    decay = _decay((tau / t2) ** 3, (tau / t2b) ** 3)
    return math.pi * decay / (c * gamma * math.sqrt(tau) * (2 + 0.5 * polarization * n_sc))


def sensitivity_params(model: SensitivityModel, tau: float) -> float:
    """Return the sensitivity in terms of Q and r only."""
    _check_positive(tau=tau)
    x = tau / model.t2b
    decay = _decay((1 + model.r**3) * x**3)
    gain = 2 + (x / 2) * model.r * model.q
    return math.pi * decay / (model.c * model.gamma * math.sqrt(tau) * gain)


def sensitivity_echo1(gamma: float, c: float, tau: float, t2b: float) -> float:
    """Return the spin-echo sensitivity with the background bath only."""
    _check_positive(t2b=t2b, tau=tau)
    return math.pi * _decay((tau / t2b) ** 3) / (2 * c * gamma * math.sqrt(tau))


def sensitivity_echo_env(gamma: float, c: float, tau: float, t2b: float, r: float) -> float:
    """Return the spin-echo sensitivity with the environment spins present but unused."""
    _check_positive(t2b=t2b, tau=tau, r=r)
    return math.pi * _decay((1 + r**3) * (tau / t2b) ** 3) / (2 * c * gamma * math.sqrt(tau))


def sensitivity_nopol(gamma: float, c: float, tau: float, n_sc: int, scheme: str) -> float:
    """Return the zero-polarization sensitivity of the echo or the x-readout EAM scheme."""
    _check_positive(tau=tau)
    base = math.pi / (c * gamma * math.sqrt(tau))
    if scheme == "echo":
        return base
    if scheme == "eam":
        return base / math.sqrt(1 + 1.5 * n_sc)
    raise InvalidParameter("scheme", f"unknown scheme {scheme!r}, expected echo or eam")


@dataclass(frozen=True)
class OptimizationResult:
    """Minimizer of a sensitivity over tau."""

    tau: float
    eta: float
    at_boundary: bool


def optimize_tau(
    eta: Callable[[float], float],
    bracket: tuple[float, float] | None = None,
    t2b: float = 1.0,
    rtol: float = OPTIMIZER_RTOL,
) -> OptimizationResult:
    """Minimize eta(tau) by golden-section search in log(tau).

    The default bracket is OPTIMIZER_BRACKET scaled by t2b. A minimum that is not
    below both bracket ends is reported at the better end with at_boundary set.
    """
    low, high = bracket if bracket is not None else tuple(b * t2b for b in OPTIMIZER_BRACKET)
    if not 0 < low < high:
        raise InvalidParameter("bracket", "need 0 < low < high")
    a, b = math.log(low), math.log(high)
    c, d = b - _INV_PHI * (b - a), a + _INV_PHI * (b - a)
    fc, fd = eta(math.exp(c)), eta(math.exp(d))
    while b - a > rtol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = eta(math.exp(c))
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = eta(math.exp(d))
    tau_star = math.exp((a + b) / 2)
    eta_star = eta(tau_star)
    edges = ((low, eta(low)), (high, eta(high)))
    best_tau, best_eta = min(edges, key=lambda edge: edge[1])
    if eta_star >= best_eta:
        LOGGER.debug("No interior minimum in [%s, %s]", low, high)
        return OptimizationResult(best_tau, best_eta, at_boundary=True)
    return OptimizationResult(tau_star, eta_star, at_boundary=False)


def ratio_asymptote(q: float) -> float:
    """Return (e^2/3)^(1/6)/(1 + 2^(-7/3) Q), the large-r limit of the Q-normalized ratio."""
    if q < 0:
        raise InvalidParameter("Q", "must not be negative")
    return (math.e**2 / 3) ** (1 / 6) / (1 + 2 ** (-7 / 3) * q)


@dataclass(frozen=True)
class RatioRow:
    """One (Q, r) point of the optimized sensitivity ratios."""

    r: float
    q: float
    ratio_a: float
    ratio_b: float
    tau_star: float


@dataclass(frozen=True)
class RatioTable:
    """Rectangular grid of ratio rows, Q-major."""

    rows: tuple[RatioRow, ...]

    def to_csv(self) -> str:
        """Return the table with columns r, Q, ratio_a, ratio_b, tau_star."""
        rows = ((row.r, row.q, row.ratio_a, row.ratio_b, row.tau_star) for row in self.rows)
        return format_csv(RATIO_COLUMNS, rows)

    def column(self, q: float, name: str) -> list[float]:
        """Return one column restricted to a Q value, in r order."""
        return [getattr(row, name) for row in self.rows if row.q == q]


def ratio_curves(
    q_list: Iterable[float],
    r_grid: Iterable[float],
    t2b: float = 1.0,
    c: float = 1.0,
    gamma: float = 1.0,
) -> RatioTable:
    """Return the tau-optimized EAM sensitivity divided by the optimized echo sensitivities.

    ratio_a normalizes by the echo without environment spins, ratio_b by the
    echo that carries the environment's extra decoherence.
    """
    qs, rs = list(q_list), list(r_grid)
    if not qs or not rs:
        raise InvalidParameter("grid", "Q and r grids must be non-empty")
    echo1 = optimize_tau(lambda tau: sensitivity_echo1(gamma, c, tau, t2b), t2b=t2b).eta
    rows = []
    for q in qs:
        for r in rs:
            model = SensitivityModel(q=q, r=r, t2b=t2b, c=c, gamma=gamma)
            eam = optimize_tau(lambda tau, m=model: sensitivity_params(m, tau), t2b=t2b)
            echo_env = optimize_tau(
                lambda tau, rr=r: sensitivity_echo_env(gamma, c, tau, t2b, rr), t2b=t2b
            ).eta
            rows.append(RatioRow(r, q, eam.eta / echo1, eam.eta / echo_env, eam.tau))
    LOGGER.debug("Computed %s ratio points", len(rows))
    return RatioTable(tuple(rows))


@dataclass(frozen=True)
class NopolSignal:
    """Zero-polarization x-readout signal, exact sum and the 3/4 n_sc approximation."""

    exact: float
    approximate: float
    n_sc: int


def signal_nopol(couplings: Iterable[float], b: float, t: float) -> NopolSignal:
    """Return S_x = 1 - (bt/2pi)^2/2 (2 + sum_k [1 + cos^2(l_k t/4)] sin^2(l_k t/4))."""
    _check_positive(t=t)
    lambdas = np.asarray(list(couplings), dtype=float)
    prefactor = 0.5 * (b * t / (2 * math.pi)) ** 2
    angles = lambdas * t / 4
    total = float(np.sum((1 + np.cos(angles) ** 2) * np.sin(angles) ** 2))
    n_sc = count_strong(lambdas, t) if lambdas.size else 0
    return NopolSignal(
        exact=1 - prefactor * (2 + total),
        approximate=1 - prefactor * (2 + 0.75 * n_sc),
        n_sc=n_sc,
    )


def nopol_curvature(
    couplings: Iterable[float], tau: float, gamma_s: float = 1.0, gamma_i: float = 1.0
) -> float:
    """Return K with S_x = 1 - K b0^2 + O(b0^4) for the x-readout EAM at zero polarization.

    Propagated through the locked sinusoidal field with kappa = 0; each spin adds
    gamma_i^2 (tau/2pi)^2 [sin^2(l tau/8)/2 + sin^2(l tau/4)/8].
    """
    _check_positive(tau=tau)
    lambdas = np.asarray(list(couplings), dtype=float)
    scale = (tau / (2 * math.pi)) ** 2
    bath = np.sin(lambdas * tau / 8) ** 2 / 2 + np.sin(lambdas * tau / 4) ** 2 / 8
    return scale * (4 * gamma_s**2 + gamma_i**2 * float(np.sum(bath)))


def random_phase_mean_signal(phase_amplitude: float, readout: ReadoutPhase | str) -> float:
    """Return the readout signal averaged over a uniformly random field phase.

    A field phase phi turns the accumulated phase into phase_amplitude cos(phi): the
    y readout averages sin to zero, the x readout averages cos to J0.
    """
    if ReadoutPhase(readout) == ReadoutPhase.Y:
        return 0.5
    return (1 + float(special.j0(phase_amplitude))) / 2


def t_pol_upper_bound(n_sc: int, t: float) -> float:
    """Return the loose polarization-time bound n_sc T/pi."""
    if n_sc < 0:
        raise InvalidParameter("n_sc", "must be non-negative")
    _check_positive(t=t)
    return n_sc * t / math.pi
