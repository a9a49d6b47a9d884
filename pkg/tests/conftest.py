"""Shared fixtures: the planar benchmark stack used across the suite.

Everything heavy is session-scoped — the merged function, the locality
scan, and the reference trajectory batch are deterministic, so tests can
share one instance without coupling.
"""

import numpy as np
import pytest

from issf import (
    SafetyGeometry,
    bundled_spec,
    compact_support_transform,
    disk,
    field_from_expression,
    gradient_control,
    input_sweep,
    integrate_batch,
    merged_W,
    planar_integrator,
    seeded_noise_signal,
)
from issf.pipeline import derive_locality


V_EXPR = "x1^2 + x1*x2 + x2^2"
B_EXPR = "4 - (x1 - 4)^2 - (x2 - 6)^2"
CENTER = (4.0, 6.0)


@pytest.fixture(scope="session")
def unsafe_disk():
    return disk(CENTER, 2.0)


@pytest.fixture(scope="session")
def window_disk():
    return disk(CENTER, 3.0)


@pytest.fixture(scope="session")
def geometry(unsafe_disk, window_disk):
    return SafetyGeometry(unsafe_disk, window_disk)


@pytest.fixture(scope="session")
def value_field():
    return field_from_expression(V_EXPR, 2, name="V")


@pytest.fixture(scope="session")
def barrier_field():
    return field_from_expression(B_EXPR, 2, name="B")


@pytest.fixture(scope="session")
def compact_barrier(barrier_field, unsafe_disk, window_disk):
    return compact_support_transform(barrier_field, unsafe_disk, window_disk)


@pytest.fixture(scope="session")
def merged(value_field, compact_barrier):
    return merged_W(value_field, compact_barrier, 100.0, -10.0)


@pytest.fixture(scope="session")
def feedback(merged):
    return gradient_control(merged)


@pytest.fixture(scope="session")
def open_loop():
    return planar_integrator()


@pytest.fixture(scope="session")
def closed_loop(open_loop, feedback):
    return open_loop.with_feedback(feedback)


@pytest.fixture(scope="session")
def sweep():
    return input_sweep(2, 3.0, norms=[0.75, 1.5, 2.25, 3.0], n_angles=8)


@pytest.fixture(scope="session")
def benchmark_spec():
    return bundled_spec("paper_sec4")


@pytest.fixture(scope="session")
def locality(benchmark_spec, compact_barrier, closed_loop, unsafe_disk, sweep):
    return derive_locality(benchmark_spec, compact_barrier.as_field(),
                           closed_loop, unsafe_disk, sweep)


@pytest.fixture(scope="session")
def reference_trajectories(open_loop, feedback, geometry):
    """The four benchmark initial conditions under seed-42 noise."""
    sig = seeded_noise_signal(3.0, seed=42, hold_dt=0.1, dim_u=2)
    x0s = np.array([[5.0, 8.0], [6.0, 10.0], [2.0, 10.0], [9.0, 4.0]])
    return integrate_batch(open_loop, x0s, sig, law=feedback,
                           t_end=10.0, dt=1e-3, geom=geometry)
