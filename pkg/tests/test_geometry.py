import jax.numpy as jnp
import jax.random as jr
import numpy as np
import pytest

from tubechannel.geometry import (
    SPEED_OF_LIGHT,
    AntennaArray,
    DegenerateGeometryError,
    MotionState,
    NoWallIntersectionError,
    TubeScene,
    advance_rx,
    los_delay,
    los_doppler,
    los_vector,
    ray_displacements,
    uniform_linear_array,
    wall_point_from_angles,
)


def test_tube_scene_defaults():
    scene = TubeScene()
    assert scene.radius == 2
    assert scene.initial_distance == pytest.approx(np.hypot(600, 1))
    # The default Tx sits exactly on the top of the wall
    assert scene.contains(scene.tx_reference)
    assert scene.tx_origin == pytest.approx(jnp.array([0.0, 0.0, 2.0]))
    assert scene.rx_origin == pytest.approx(jnp.array([600.0, 0.0, 2.0]))


test_cases = {
    "non_positive_radius": (
        lambda: TubeScene(radius=0.0),
        "radius must be positive",
    ),
    "coincident": (
        lambda: TubeScene(rx_initial=jnp.array([0.0, 0.0, 4.0])),
        "must not coincide",
    ),
    "tx_outside": (
        lambda: TubeScene(tx_reference=jnp.array([0.0, 0.0, 4.5])),
        "inside the tube",
    ),
    "bad_shape": (
        lambda: TubeScene(rx_initial=jnp.array([600.0, 0.0])),
        "trailing axis of size 3",
    ),
}


@pytest.mark.parametrize(
    ("constructor", "match"), test_cases.values(), ids=test_cases.keys()
)
def test_tube_scene_errors(constructor, match):
    with pytest.raises(ValueError, match=match):
        constructor()


def test_uniform_linear_array():
    center = jnp.array([600.0, 0.0, 3.0])
    arr = uniform_linear_array(center, 3, 0.1)
    assert arr.element_count == 3
    assert arr.center == pytest.approx(center)
    assert arr.positions[:, 0] == pytest.approx(jnp.array([599.9, 600.0, 600.1]))

    vertical = uniform_linear_array(center, 2, 0.5, axis=jnp.array([0.0, 0.0, 2.0]))
    assert vertical.positions[:, 2] == pytest.approx(jnp.array([2.75, 3.25]))

    with pytest.raises(ValueError, match="positive integer"):
        uniform_linear_array(center, 0, 0.1)


def test_antenna_array_spacing_checked():
    positions = jnp.array([[0.0, 0.0, 3.0], [0.2, 0.0, 3.0]])
    with pytest.raises(ValueError, match="separated by spacing"):
        AntennaArray(positions, 0.1)


def test_los_vector_and_delay():
    key_tx, key_rx = jr.split(jr.key(0))
    tx = jr.uniform(key_tx, (10, 3), minval=-5, maxval=5)
    rx = jr.uniform(key_rx, (10, 3), minval=-5, maxval=5)
    d = los_vector(tx, rx)
    for i in range(10):
        expected = np.asarray(rx[i]) - np.asarray(tx[i])
        assert d[i] == pytest.approx(expected, abs=1e-12)
    assert los_delay(d) == pytest.approx(
        np.linalg.norm(np.asarray(d), axis=-1) / SPEED_OF_LIGHT
    )
    assert los_delay(jnp.array([600.0, 0.0, 0.0])) == pytest.approx(2.0014e-6, rel=1e-4)


def test_los_doppler():
    wavelength = SPEED_OF_LIGHT / 58e9
    velocity = jnp.array([-300.0, 0.0, 0.0])
    d = jnp.array([600.0, 0.0, -1.0])
    doppler = los_doppler(d, velocity, wavelength)
    assert doppler < 0  # Moving toward the Tx
    expected = -300 * 600 / np.hypot(600, 1) / wavelength
    assert doppler == pytest.approx(expected)

    # Bounded by the maximum Doppler for any direction
    d = jr.normal(jr.key(1), (200, 3))
    velocity = jnp.array([120.0, 30.0, -5.0])
    bound = float(jnp.linalg.norm(velocity)) / wavelength
    assert jnp.all(jnp.abs(los_doppler(d, velocity, wavelength)) <= bound * (1 + 1e-12))


def test_los_doppler_errors():
    with pytest.raises(DegenerateGeometryError):
        los_doppler(jnp.zeros(3), jnp.array([1.0, 0, 0]), 0.005)
    with pytest.raises(ValueError, match="wavelength"):
        los_doppler(jnp.ones(3), jnp.array([1.0, 0, 0]), 0.0)


def test_wall_point_from_angles():
    radius = 2.0
    key_az, key_el = jr.split(jr.key(2))
    azimuth = jr.uniform(key_az, (1000,), minval=-jnp.pi, maxval=jnp.pi)
    elevation = jr.uniform(key_el, (1000,), minval=-1.5, maxval=1.5)
    points = wall_point_from_angles(azimuth, elevation, radius)
    residual = points[:, 1] ** 2 + points[:, 2] ** 2 - radius**2
    assert jnp.max(jnp.abs(residual)) < 1e-9 * radius**2

    # The point lies along the direction given by the angles
    direction = jnp.stack(
        [
            jnp.cos(elevation) * jnp.cos(azimuth),
            jnp.cos(elevation) * jnp.sin(azimuth),
            jnp.sin(elevation),
        ],
        axis=-1,
    )
    cross = jnp.cross(points, direction)
    assert jnp.max(jnp.abs(cross)) < 1e-9

    assert wall_point_from_angles(0.0, jnp.pi / 2, radius) == pytest.approx(
        jnp.array([0.0, 0.0, 2.0]), abs=1e-12
    )


def test_wall_point_parallel_to_axis():
    with pytest.raises(NoWallIntersectionError):
        wall_point_from_angles(0.0, 0.0, 2.0)
    with pytest.raises(NoWallIntersectionError):
        wall_point_from_angles(jnp.pi, 0.0, 2.0)


def test_ray_displacements():
    scene = TubeScene()
    tx = scene.tx_reference
    rx = scene.rx_initial
    tx_angles = jnp.array([[0.4, 0.2], [1.0, -0.3], [2.5, 0.0]])
    rx_angles = jnp.array([[2.8, 0.1], [-1.2, 0.4], [3.0, -0.2]])
    d_tx, d_rx = ray_displacements(tx_angles, rx_angles, scene, tx, rx)
    assert d_tx.shape == (3, 3)
    assert d_rx.shape == (3, 3)

    tx_wall = wall_point_from_angles(tx_angles[:, 0], tx_angles[:, 1], 2.0)
    rx_wall = wall_point_from_angles(rx_angles[:, 0], rx_angles[:, 1], 2.0)
    assert d_tx == pytest.approx(tx_wall + scene.tx_origin - tx, abs=1e-12)
    assert d_rx == pytest.approx(rx_wall + scene.rx_origin - rx, abs=1e-12)

    # Wall points stay put as the Rx moves; only the Rx leg changes
    moved = rx + jnp.array([-3.0, 0.0, 0.0])
    d_tx_moved, d_rx_moved = ray_displacements(tx_angles, rx_angles, scene, tx, moved)
    assert d_tx_moved == pytest.approx(d_tx)
    assert d_rx_moved == pytest.approx(d_rx + jnp.array([3.0, 0.0, 0.0]))


def test_ray_displacements_batch_shapes():
    scene = TubeScene()
    tx_angles = jnp.full((4, 5, 2), 0.5)
    rx_angles = jnp.full((4, 5, 2), 2.5)
    d_tx, d_rx = ray_displacements(
        tx_angles, rx_angles, scene, scene.tx_reference, scene.rx_initial
    )
    assert d_tx.shape == (4, 5, 3)
    assert d_rx.shape == (4, 5, 3)


def test_advance_rx():
    positions = jnp.array([[600.0, 0.0, 3.0], [600.005, 0.0, 3.0]])
    velocity = jnp.array([-300.0, 0.0, 0.0])
    moved = advance_rx(positions, velocity, 1e-3)
    assert moved.shape == positions.shape
    assert moved[:, 0] == pytest.approx(jnp.array([599.7, 599.705]))

    with pytest.raises(ValueError, match="non-negative"):
        advance_rx(positions, velocity, -1.0)


def test_motion_state():
    motion = MotionState(jnp.array([-300.0, 0.0, 0.0]), 1e-3)
    assert motion.speed == pytest.approx(300)
    assert motion.time == 1e-3
