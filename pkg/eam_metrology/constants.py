"""Constants for the environment-assisted metrology toolkit."""

import math
from typing import Final

# explicit Hilbert spaces are capped at this many spin-1/2 sites
MAX_SITES: Final[int] = 14
# brute-force oracle cap (environment spins)
MAX_BRUTE_FORCE_SITES: Final[int] = 12

HERMITIAN_TOLERANCE: Final[float] = 1e-10

# probe exclusion radius in cube units
EXCLUSION_RADIUS: Final[float] = 0.02

# strong coupling threshold |lambda * tau| >= 2 pi (inclusive)
STRONG_COUPLING_THRESHOLD: Final[float] = 2 * math.pi

# central finite-difference step for phase slopes (normalized field units)
PHASE_SLOPE_STEP: Final[float] = 1e-4

# golden-section defaults; the bracket is in units of T2^B
OPTIMIZER_BRACKET: Final[tuple[float, float]] = (1e-4, 5.0)
OPTIMIZER_RTOL: Final[float] = 1e-6

WAHUHA_SCALING: Final[float] = 1 / math.sqrt(3)

# weight on P in the enhancement term: the conventional closed form, and the value
# obtained by propagating rho = 1/2 + P I_z through the sequence
PRINTED_ENHANCEMENT_WEIGHT: Final[float] = 2.0
PROPAGATED_ENHANCEMENT_WEIGHT: Final[float] = 1.0

# run defaults
DEFAULT_TRIALS: Final[int] = 100
DEFAULT_GMAX: Final[int] = 6
DEFAULT_POLARIZATION: Final[float] = 0.5
DEFAULT_SEED: Final[int] = 1

# diamond-lattice box edge (conventional cells): 426 candidate sites around the probe,
# about 25 spins at 6% density and about 53 at 1/8
LATTICE_EXTENT: Final[float] = 3.75

# b0 tau / 2 pi at which simulated x-readout curvatures are evaluated
CURVATURE_FIELD_FRACTION: Final[float] = 1e-2
