import equinox as eqx
import jax.numpy as jnp
import jax.random as jr
import numpy as np
import pytest
from jax import lax

from tubechannel.evolution import (
    AngleTables,
    Cluster,
    ClusterState,
    EvolutionParams,
    evolve_step,
    initial_state,
    mean_new_clusters,
    ray_powers,
    sample_new_cluster,
    scattering_coefficient,
    survival_probability,
    update_cluster_delay,
    update_ray_power,
    update_virtual_delay,
)
from tubechannel.geometry import SPEED_OF_LIGHT, MotionState, TubeScene
from tubechannel.model import ChannelModel

WAVELENGTH = SPEED_OF_LIGHT / 58e9
VELOCITY = jnp.array([-300.0, 0.0, 0.0])


@pytest.fixture(scope="module")
def setup():
    params = EvolutionParams()
    return {
        "scene": TubeScene(),
        "params": params,
        "tables": AngleTables.build(params, 12),
    }


def _initial(setup, key, capacity=64):
    return initial_state(
        key,
        scene=setup["scene"],
        motion=MotionState(VELOCITY),
        params=setup["params"],
        tables=setup["tables"],
        wavelength=WAVELENGTH,
        capacity=capacity,
    )


def _step(setup, state, key, time, dt):
    return evolve_step(
        state,
        key,
        dt=dt,
        scene=setup["scene"],
        motion=MotionState(VELOCITY, time),
        params=setup["params"],
        tables=setup["tables"],
        wavelength=WAVELENGTH,
    )


test_cases = {
    "birth_rate": {"birth_rate": 0.0},
    "death_rate": {"death_rate": -1.0},
    "rho_s0": {"rho_s0": 1.5},
    "roughness": {"roughness": -1e-3},
    "intra_power_decay": {"intra_power_decay": 1.0},
    "shadow": {"per_ray_shadow_sigma": -1.0},
    "birth_scale": {"birth_scale": 0.0},
}


@pytest.mark.parametrize("kwargs", test_cases.values(), ids=test_cases.keys())
def test_evolution_params_errors(kwargs):
    with pytest.raises(ValueError):  # noqa: PT011
        EvolutionParams(**kwargs)


def test_survival_probability():
    params = EvolutionParams(death_rate=4.0, correlation_distance=10.0)
    assert survival_probability(0.0, 300.0, params) == 1
    expected = np.exp(-4 * 300 * 1e-3 / 10)
    assert survival_probability(1e-3, 300.0, params) == pytest.approx(expected)
    dts = jnp.linspace(0, 1e-2, 20)
    assert jnp.all(jnp.diff(survival_probability(dts, 300.0, params)) < 0)


def test_scattering_coefficient():
    assert scattering_coefficient(0.0, 0.3, WAVELENGTH) == 1
    roughness = jnp.linspace(0, 3e-3, 10)
    rho = scattering_coefficient(roughness, 0.0, WAVELENGTH)
    assert jnp.all(jnp.diff(rho) < 0)
    expected = np.exp(-8 * (np.pi * 2e-3 * np.cos(0.2) / WAVELENGTH) ** 2)
    assert scattering_coefficient(2e-3, 0.2, WAVELENGTH) == pytest.approx(expected)


def test_mean_new_clusters():
    params = EvolutionParams()
    # No births without travel
    assert mean_new_clusters(1.0, 500.0, 600.0, 1.0, params) == 0
    # No births at the initial distance through the waveguide factor
    assert mean_new_clusters(0.9, 600.0, 600.0, 1.0, params) == 0
    # Clipped to zero when the link is longer than the initial distance
    assert mean_new_clusters(0.9, 700.0, 600.0, 1.0, params) == 0

    expected = 80 / 4 * 0.1 * (1 - 300 / 600)
    assert mean_new_clusters(0.9, 300.0, 600.0, 1.0, params) == pytest.approx(expected)

    open_air = EvolutionParams(waveguide_factor=False, birth_scale=3.0)
    assert mean_new_clusters(0.9, 600.0, 600.0, 1.0, open_air) == pytest.approx(6.0)

    # Rough walls give fewer births
    rough = mean_new_clusters(0.9, 300.0, 600.0, 0.5, params)
    assert rough == pytest.approx(expected / 2)


def test_ray_powers():
    params = EvolutionParams(mean_intra_delay=5e-9, intra_power_decay=2.3)
    delays = jnp.array([0.0, 5e-9, 20e-9])
    powers = ray_powers(delays, params)
    assert powers[0] == 1
    assert jnp.all(jnp.diff(powers) < 0)
    assert powers[1] == pytest.approx(np.exp(-1.3 / 2.3))

    shadowed = EvolutionParams(per_ray_shadow_sigma=3.0)
    with pytest.raises(ValueError, match="key is required"):
        ray_powers(delays, shadowed)
    assert ray_powers(delays, shadowed, jr.key(0)).shape == (3,)


def test_update_virtual_delay():
    fresh = jnp.array([40e-9, 10e-9])
    old = jnp.array([20e-9, 30e-9])
    assert update_virtual_delay(old, 0.0, 1e-3, fresh) == pytest.approx(old)
    assert update_virtual_delay(old, 1.0, 1e-3, fresh) == pytest.approx(fresh)
    assert update_virtual_delay(old, 1.0, jnp.inf, fresh) == pytest.approx(old)
    mid = update_virtual_delay(old, 1e-3, 1e-3, fresh)
    keep = np.exp(-1)
    assert mid == pytest.approx(keep * old + (1 - keep) * fresh)


def test_update_cluster_delay():
    delay = update_cluster_delay(3.0, 1.5, 30e-9)
    assert delay == pytest.approx(4.5 / SPEED_OF_LIGHT + 30e-9)


def test_update_ray_power():
    power = jnp.array([0.2, 0.5, 0.3])
    ray_delay = jnp.array([0.0, 2e-9, 7e-9])
    # Unchanged delay leaves the powers unchanged
    same = update_ray_power(power, 50e-9, 50e-9, ray_delay)
    assert same == pytest.approx(power, rel=1e-12)
    # A growing delay attenuates every ray
    grown = update_ray_power(power, 50e-9, 55e-9, ray_delay)
    assert jnp.all(grown < power)
    # Large jumps clamp to zero
    assert jnp.all(update_ray_power(power, 10e-9, 40e-9, ray_delay) == 0)


def test_empty_state():
    state = ClusterState.empty(8, 4)
    assert state.capacity == 8
    assert state.max_rays == 4
    assert state.count == 0
    assert state.total_power == 0
    assert state.clusters() == []


def test_initial_state(setup):
    state = _initial(setup, jr.key(0))
    count = int(state.count)
    assert count > 0
    assert state.total_power == pytest.approx(1, abs=1e-12)
    alive_ids = np.sort(np.asarray(state.ids)[np.asarray(state.alive)])
    assert np.array_equal(alive_ids, np.arange(count))
    assert int(state.next_id) == count
    assert jnp.all(jnp.where(state.alive, state.ray_mask.sum(-1) >= 1, True))
    assert jnp.all(jnp.where(state.alive, state.ray_mask.sum(-1) <= 12, True))
    # Dead slots are zeroed
    assert jnp.all(jnp.where(state.alive[:, None], True, state.ray_power == 0))

    clusters = state.clusters()
    assert len(clusters) == count
    assert all(isinstance(c, Cluster) for c in clusters)
    assert [c.id for c in clusters] == list(range(count))
    assert sum(c.power for c in clusters) == pytest.approx(1, abs=1e-12)
    for cluster in clusters:
        assert cluster.delay > cluster.virtual_delay
        assert all(0 <= ray.initial_phase < 2 * np.pi for ray in cluster.rays)
        assert -np.pi <= cluster.tx_azimuth <= np.pi


def test_initial_state_mean_count(setup):
    keys = jr.split(jr.key(1), 200)
    states = eqx.filter_vmap(lambda k: _initial(setup, k))(keys)
    # Poisson with mean birth_rate / death_rate
    assert jnp.mean(states.count) == pytest.approx(20, abs=1.5)


def test_sample_new_cluster(setup):
    cluster = sample_new_cluster(
        jr.key(3),
        scene=setup["scene"],
        motion=MotionState(VELOCITY, 1e-3),
        params=setup["params"],
        tables=setup["tables"],
        cluster_id=17,
    )
    assert cluster.id == 17
    assert cluster.birth_time == pytest.approx(1e-3)
    assert 1 <= len(cluster.rays) <= 12
    assert cluster.power == pytest.approx(1)
    assert cluster.delay > cluster.virtual_delay
    assert all(ray.delay_offset >= 0 for ray in cluster.rays)

    # Departure angles concentrate around the LoS direction, which is close to
    # the tube axis (azimuth 0)
    azimuths = [
        sample_new_cluster(
            key,
            scene=setup["scene"],
            motion=MotionState(VELOCITY),
            params=setup["params"],
            tables=setup["tables"],
        ).tx_azimuth
        for key in jr.split(jr.key(4), 50)
    ]
    assert np.mean(np.cos(azimuths)) > 0.8


def test_evolve_step_zero_dt(setup):
    state = _initial(setup, jr.key(5))
    stepped = _step(setup, state, jr.key(6), 0.0, 0.0)
    assert jnp.array_equal(stepped.alive, state.alive)
    assert jnp.array_equal(stepped.ids, state.ids)
    assert stepped.virtual_delay == pytest.approx(state.virtual_delay)
    assert stepped.delay == pytest.approx(state.delay, rel=1e-12)
    assert stepped.ray_power == pytest.approx(state.ray_power, abs=1e-12)


def test_evolve_step(setup):
    state = _initial(setup, jr.key(7))
    dt = 1e-3
    for index in range(30):
        previous = state
        time = index * dt
        state = _step(setup, state, jr.fold_in(jr.key(8), index), time, dt)

        assert state.total_power == pytest.approx(1, abs=1e-9) or state.count == 0
        new = state.alive & ~previous.alive | (state.ids >= previous.next_id)
        new = new & state.alive
        # Fresh clusters get fresh ids and the current birth time
        assert jnp.all(jnp.where(new, state.ids >= previous.next_id, True))
        assert jnp.all(jnp.where(new, state.birth_time == time + dt, True))
        # Survivors keep their ids and angles
        kept = previous.alive & state.alive & (state.ids < previous.next_id)
        assert jnp.all(jnp.where(kept, state.ids == previous.ids, True))
        assert jnp.array_equal(
            jnp.where(kept[:, None], state.angles, 0),
            jnp.where(kept[:, None], previous.angles, 0),
        )
    assert int(state.next_id) >= int(state.count)


def _scalar_birth_death(rng, steps, survival, mean_births, start):
    counts = np.empty(steps)
    n = start
    for i in range(steps):
        n = rng.binomial(n, survival) + rng.poisson(mean_births)
        counts[i] = n
    return counts


def test_long_run_count_matches_birth_death_oracle():
    params = EvolutionParams(
        birth_rate=80.0,
        death_rate=4.0,
        delay_relaxation=jnp.inf,
        waveguide_factor=False,
    )
    model = ChannelModel(
        TubeScene(),
        jnp.array([300.0, 0.0, 0.0]),
        58e9,
        params,
        capacity=64,
        max_rays=8,
    )
    dt, steps = 1e-3, 3000

    @eqx.filter_jit
    def run(key):
        init_key, steps_key = jr.split(key)

        def body(state, index):
            state = model.step(state, jr.fold_in(steps_key, index), index * dt, dt)
            return state, state.count

        _, counts = lax.scan(body, model.initial_state(init_key), jnp.arange(steps))
        return counts

    counts = np.asarray(run(jr.key(9)))[200:]
    survival = float(survival_probability(dt, 300.0, params))
    oracle = _scalar_birth_death(
        np.random.default_rng(0), steps, survival, 20 * (1 - survival), 20
    )[200:]
    assert np.mean(oracle) == pytest.approx(20, rel=0.1)
    assert np.mean(counts) == pytest.approx(np.mean(oracle), rel=0.1)
