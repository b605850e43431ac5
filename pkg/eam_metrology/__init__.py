"""Environment-assisted metrology: spin-bath simulator and analytic sensitivity toolkit."""

from .config import RunConfig, parse_config  # noqa: F401
from .runner import Runner  # noqa: F401
