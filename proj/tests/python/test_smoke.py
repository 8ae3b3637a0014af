"""Smoke tests for the python bindings: shapes, determinism and the key
numerical identities, all at sizes that run in seconds."""

import numpy as np
import pytest

import oatinv


@pytest.fixture(scope="module")
def small_operator():
    grid = oatinv.build_grid(24, 24, 120e-6, 120e-6)
    sensors = oatinv.place_sensors(6, 8e-3, 360.0, 0.0)
    return grid, oatinv.build_system_matrix(grid, sensors, 1490.0, 384, 2e-8)


def test_grid_and_sensors():
    grid = oatinv.build_grid(64, 64, 120e-6, 120e-6)
    assert grid.nx == 64
    cx, cy = grid.pixel_center(0, 0)
    assert cx == pytest.approx(-3.78e-3)
    sensors = oatinv.place_sensors(16, 10e-3, 360.0, 0.0)
    assert sensors.positions.shape == (16, 2)
    radii = np.hypot(sensors.positions[:, 0], sensors.positions[:, 1])
    np.testing.assert_allclose(radii, 10e-3, rtol=1e-12)


def test_forward_adjoint_dot_product(small_operator):
    grid, op = small_operator
    rng = np.random.default_rng(7)
    x = rng.normal(size=(grid.ny, grid.nx))
    y = rng.normal(size=(op.n_detectors, op.n_t))
    ax = oatinv.apply_forward(op, x)
    aty = oatinv.apply_adjoint(op, y)
    lhs = float(np.sum(ax * y))
    rhs = float(np.sum(x * aty))
    assert abs(lhs - rhs) / (np.linalg.norm(ax) * np.linalg.norm(y)) < 1e-12


def test_lbp_is_normalized(small_operator):
    grid, op = small_operator
    phantom = oatinv.generate_vessel_phantom(grid, seed=3)
    spec = oatinv.EnvironmentSpec(n_detectors=6, snr_db=(60.0, 60.0))
    env = oatinv.realize_environment(spec, 1490.0, 8e-3, seed=5)
    sino = oatinv.synthesize_sinogram(phantom, env, grid, n_t=384, dt=2e-8, seed=11)
    recon, scale = oatinv.lbp_reconstruct(op, sino)
    assert recon.shape == (grid.ny, grid.nx)
    assert np.max(np.abs(recon)) == pytest.approx(1.0)
    assert scale > 0.0


def test_phantom_determinism():
    grid = oatinv.build_grid(32, 32, 120e-6, 120e-6)
    a = oatinv.generate_vessel_phantom(grid, seed=42)
    b = oatinv.generate_vessel_phantom(grid, seed=42)
    assert np.array_equal(a, b)
    assert 0.005 <= np.mean(a > 0.1) <= 0.30
    flipped = oatinv.augment(a, seed=9)
    assert flipped.shape == a.shape


def test_metrics_identities():
    rng = np.random.default_rng(1)
    x = rng.uniform(size=(32, 32))
    assert oatinv.ssim(x, x) == pytest.approx(1.0)
    assert oatinv.rmse(x, x) == 0.0
    assert oatinv.pearson_correlation(x, 2.0 * x + 1.0) == pytest.approx(1.0)
    y = x + 0.1
    assert oatinv.psnr(x, y) == pytest.approx(20.0)


def test_andmask_semantics():
    grads = np.array([[1.0], [2.0], [3.0], [-1.0], [-2.0]])
    masked, survival = oatinv.andmask_aggregate(grads, tau=0.4)
    assert masked[0] == 0.0
    assert survival == 0.0
    kept, survival = oatinv.andmask_aggregate(grads, tau=0.0)
    assert kept[0] == pytest.approx(0.6)
    assert survival == 1.0


def test_network_identity_and_loss():
    cfg = oatinv.NetworkConfig(n_scales=2, base_channels=4, dense_growth_rate=2,
                               dense_layers_per_block=1, input_size=16)
    n_params = oatinv.network_parameter_count(cfg)
    assert 0 < n_params < 10_000
    rng = np.random.default_rng(2)
    batch = rng.normal(size=(3, 16, 16))

    zero = np.zeros(n_params)
    out = oatinv.network_forward(zero, cfg, batch)
    np.testing.assert_array_equal(out, batch)  # global residual only

    params = oatinv.init_network(cfg, seed=8)
    assert params.shape == (n_params,)
    out2 = oatinv.network_forward(params, cfg, batch)
    assert out2.shape == batch.shape
    assert not np.array_equal(out2, batch)

    value, grad = oatinv.mse_loss(out2, batch)
    assert value > 0.0
    assert grad.shape == batch.shape


def test_selftest_passes():
    results = oatinv.run_selftest()
    assert all(ok for _, ok, _ in results), results
