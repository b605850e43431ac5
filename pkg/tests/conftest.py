"""Shared fixtures for the eam_metrology tests."""

from __future__ import annotations

import numpy as np
import pytest

from eam_metrology.ensemble import (
    ClusterPartition,
    SpinEnsemble,
    build_ensemble,
    ensemble_from_couplings,
    sample_cube,
)


@pytest.fixture
def cube_ensemble() -> SpinEnsemble:
    """Six spins in the unit cube with full intra-bath couplings."""
    return build_ensemble(sample_cube(6, seed=7), polarization=0.5)


@pytest.fixture
def single_spin() -> SpinEnsemble:
    """One fully polarized environment spin with lambda = 1."""
    return ensemble_from_couplings([1.0], polarization=1.0)


@pytest.fixture
def singleton() -> ClusterPartition:
    """Partition of a one-spin ensemble."""
    return ClusterPartition(((0,),), 1)


@pytest.fixture
def empty_ensemble() -> SpinEnsemble:
    """Probe without any environment spins."""
    return SpinEnsemble(
        env_positions=np.zeros((0, 3)), couplings=np.zeros(0), kappa=np.zeros((0, 0))
    )
