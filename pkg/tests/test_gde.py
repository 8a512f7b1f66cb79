import math

import numpy as np
import pytest

from gdekit.gde import (
    RHO_MIN,
    GaussianParams,
    GaussianSet,
    brute_force_project,
    encode,
    encode_grad,
    encode_grad_reference,
    encode_reference,
    project_max,
    to_local,
)
from gdekit.geom import Ray, quat_from_axis_angle, quat_to_matrix, random_quaternions
from gdekit.gradcheck import check_encoding_gradients


def iso(mu=(0, 0, 0), sigma=1.0, rot=(1, 0, 0, 0)):
    return GaussianParams(np.array(mu, float), np.full(3, -math.log(sigma)), np.array(rot, float))


def random_gaussian(rng):
    return GaussianParams(rng.normal(size=3), rng.uniform(-1.0, 1.0, size=3), random_quaternions(rng, 1)[0])


# --- to_local --------------------------------------------------------------


def test_to_local_centered_identity():
    d = np.array([0.6, 0.0, 0.8])
    o_loc, d_loc = to_local(iso(mu=(1, 2, 3)), Ray([1, 2, 3], d))
    np.testing.assert_allclose(o_loc, 0)
    np.testing.assert_allclose(d_loc, d)


def test_to_local_axis_scaling():
    g = GaussianParams(np.zeros(3), np.log([2.0, 1.0, 1.0]), np.array([1.0, 0, 0, 0]))
    o_loc, _ = to_local(g, Ray([1, 0, 0], [0, 0, 1]))
    np.testing.assert_allclose(o_loc, [2, 0, 0])


def test_to_local_matches_matrix_composition():
    rng = np.random.default_rng(0)
    for _ in range(20):
        g = random_gaussian(rng)
        o, d = rng.normal(size=3), rng.normal(size=3)
        w, x, y, z = g.rot / np.linalg.norm(g.rot)
        # rotation matrix written out from the axis-angle form
        angle = 2 * math.atan2(math.sqrt(x * x + y * y + z * z), w)
        axis = np.array([x, y, z]) / math.sqrt(x * x + y * y + z * z)
        kx = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
        r = np.eye(3) + math.sin(angle) * kx + (1 - math.cos(angle)) * kx @ kx
        s = np.diag(np.exp(g.log_inv_scale))
        o_loc, d_loc = to_local(g, Ray(o, d))
        np.testing.assert_allclose(o_loc, s @ r.T @ (o - g.mu), atol=1e-12)
        np.testing.assert_allclose(d_loc, s @ r.T @ d, atol=1e-12)


# --- project_max -----------------------------------------------------------


def test_origin_at_center_is_peak():
    rng = np.random.default_rng(1)
    g = random_gaussian(rng)
    for rho in (0.1, 1.0, 3.0):
        assert project_max(g, Ray(g.mu, rng.normal(size=3)), rho) == 1.0


def test_perpendicular_foot_point():
    v = project_max(iso(), Ray([2, 1, 0], [-1, 0, 0]), 1.0)
    assert v == pytest.approx(math.exp(-1), rel=1e-12)


def test_receding_ray_takes_origin_value():
    assert project_max(iso(), Ray([2, 0, 0], [1, 0, 0]), 1.0) == pytest.approx(math.exp(-4), rel=1e-12)


def test_rho_must_be_positive():
    with pytest.raises(ValueError):
        project_max(iso(), Ray([1, 0, 0], [1, 0, 0]), 0.0)


def test_matches_brute_force_rotated_anisotropic():
    rng = np.random.default_rng(2)
    g = GaussianParams(np.array([0.3, -0.2, 0.5]), np.log([0.5, 2.0, 1.3]),
                       quat_from_axis_angle([1, 2, 3], 0.9))
    d = rng.normal(size=3)
    ray = Ray([2.0, 1.0, -1.0], d / np.linalg.norm(d))
    want = brute_force_project(g, ray, 0.7)
    assert project_max(g, ray, 0.7) == pytest.approx(want, rel=1e-6)


def test_brute_force_boundary_cases():
    assert brute_force_project(iso(), Ray([2, 0, 0], [1, 0, 0])) == math.exp(-4)
    assert brute_force_project(iso(mu=(1, 1, 1)), Ray([1, 1, 1], [0, 0, 1])) == 1.0


def test_branch_continuity():
    rng = np.random.default_rng(3)
    for _ in range(200):
        g = random_gaussian(rng)
        d = rng.normal(size=3)
        # place the origin so the local origin is orthogonal to the local direction
        r = quat_to_matrix(g.rot)
        s = np.exp(g.log_inv_scale)
        d_loc = s * (r.T @ d)
        a = rng.normal(size=3)
        a -= (a @ d_loc) / (d_loc @ d_loc) * d_loc
        o = g.mu + r @ (a / s)
        o_loc, dl = to_local(g, Ray(o, d))
        ab, aa, bb = o_loc @ dl, o_loc @ o_loc, dl @ dl
        assert abs(ab) < 1e-8
        assert abs(math.exp(ab * ab / bb - aa) - math.exp(-aa)) < 1e-12


def test_direction_scale_invariance():
    rng = np.random.default_rng(4)
    gs = GaussianSet.from_params([random_gaussian(rng) for _ in range(8)])
    o, d = rng.normal(size=(5, 3)), rng.normal(size=(5, 3))
    a = encode(gs, Ray(o, d), 0.8)
    b = encode(gs, Ray(o, 3.7 * d), 0.8)
    np.testing.assert_allclose(a, b, rtol=1e-12)


# --- encode ----------------------------------------------------------------


def test_encode_single_through_center():
    gs = GaussianSet.from_params([iso(mu=(1, 0, 0))])
    np.testing.assert_allclose(encode(gs, Ray([0, 0, 0], [1, 0, 0]), 1.0), [1.0])


def test_encode_permutation_and_batch():
    rng = np.random.default_rng(5)
    gs = GaussianSet.from_params([random_gaussian(rng) for _ in range(10)])
    o, d = rng.normal(size=(7, 3)), rng.normal(size=(7, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    batch = encode(gs, Ray(o, d), 0.5)
    for m in range(7):
        loop = [project_max(gs[i], Ray(o[m], d[m]), 0.5) for i in range(10)]
        np.testing.assert_allclose(batch[m], loop, rtol=1e-12)
    perm = rng.permutation(10)
    shuffled = GaussianSet(gs.mu[perm], gs.log_inv_scale[perm], gs.rot[perm])
    np.testing.assert_allclose(encode(shuffled, Ray(o, d), 0.5), batch[:, perm])


def test_encode_range():
    rng = np.random.default_rng(6)
    gs = GaussianSet.from_params([random_gaussian(rng) for _ in range(16)])
    o, d = rng.normal(scale=2, size=(500, 3)), rng.normal(size=(500, 3))
    v = encode(gs, Ray(o, d), rng.uniform(0.2, 2, size=500))
    assert np.all(v <= 1.0)
    assert np.all(v[v > 0] > 0)  # underflow only, never negative


def test_encode_floors_rho():
    gs = GaussianSet.from_params([iso(mu=(0, 0.01, 0), sigma=1.0)])
    ray = Ray([0, 0, -1], [0, 0, 1])
    np.testing.assert_array_equal(encode(gs, ray, 1e-9), encode(gs, ray, RHO_MIN))


def test_compiled_kernels_match_numpy_reference():
    rng = np.random.default_rng(8)
    gs = GaussianSet.from_params([random_gaussian(rng) for _ in range(12)])
    o, d = rng.normal(scale=2, size=(300, 3)), rng.normal(size=(300, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    rho = rng.uniform(1e-4, 2, size=300)  # some below the floor
    ray = Ray(o, d)
    np.testing.assert_allclose(encode(gs, ray, rho), encode_reference(gs, ray, rho), rtol=1e-10, atol=1e-300)
    up = rng.normal(size=(300, 12))
    va, ga = encode_grad(gs, ray, rho, up)
    vb, gb = encode_grad_reference(gs, ray, rho, up)
    np.testing.assert_allclose(va, vb, rtol=1e-10, atol=1e-300)
    for name in ("mu", "log_inv_scale", "rot", "origin", "direction", "rho"):
        a, b = getattr(ga, name), getattr(gb, name)
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12 * max(1.0, np.abs(b).max()), err_msg=name)


# --- gradients -------------------------------------------------------------


def test_encode_grad_finite_differences():
    report = check_encoding_gradients(n_configs=200, seed=11)
    assert report.passed, report.lines()


def test_grad_zero_in_perpendicular_plane_at_peak():
    gs = GaussianSet.from_params([iso(mu=(0, 0, 0), sigma=0.7)])
    ray = Ray(np.array([[0.0, 0.0, -3.0]]), np.array([[0.0, 0.0, 1.0]]))
    _, g = encode_grad(gs, ray, 1.0, np.ones((1, 1)))
    np.testing.assert_allclose(g.mu[0, :2], 0.0, atol=1e-14)


def test_grad_rho_positive_for_receding_ray():
    gs = GaussianSet.from_params([iso()])
    ray = Ray(np.array([[1.5, 0.0, 0.0]]), np.array([[1.0, 0.0, 0.0]]))
    _, g = encode_grad(gs, ray, np.array([0.8]), np.ones((1, 1)))
    assert g.rho[0] > 0


def test_grad_detects_sign_flip_mutation():
    def broken(gs, ray, rho, up):
        v, g = encode_grad(gs, ray, rho, up)
        g.direction = -g.direction
        return v, g

    assert not check_encoding_gradients(n_configs=20, seed=3, grad_fn=broken).passed


# --- properties ------------------------------------------------------------


def _fan_tv(gs, origin, rho, axis_a, axis_b, n=360):
    ang = np.linspace(0, 2 * np.pi, n, endpoint=False)
    dirs = np.cos(ang)[:, None] * axis_a + np.sin(ang)[:, None] * axis_b
    v = encode(gs, Ray(np.broadcast_to(origin, dirs.shape), dirs), rho)
    return np.abs(np.diff(np.vstack([v, v[:1]]), axis=0)).sum(0)


def _random_fan_scene(rng, n=8):
    gs = GaussianSet(rng.normal(size=(n, 3)), rng.uniform(np.log(1 / 3), np.log(1 / 0.3), size=(n, 3)),
                     random_quaternions(rng, n))
    a = rng.normal(size=3)
    a /= np.linalg.norm(a)
    b = np.cross(a, rng.normal(size=3))
    b /= np.linalg.norm(b)
    return gs, a, b


def test_roughness_smooths_peak_normalized_fan():
    rng = np.random.default_rng(7)
    for _ in range(100):
        gs, a, b = _random_fan_scene(rng)
        rho = rng.uniform(0.3, 1.0)
        tv1, tv2 = _fan_tv(gs, np.zeros(3), rho, a, b), _fan_tv(gs, np.zeros(3), 2 * rho, a, b)
        ang = np.linspace(0, 2 * np.pi, 360, endpoint=False)
        dirs = np.cos(ang)[:, None] * a + np.sin(ang)[:, None] * b
        peak1 = encode(gs, Ray(np.zeros_like(dirs), dirs), rho).max(0)
        peak2 = encode(gs, Ray(np.zeros_like(dirs), dirs), 2 * rho).max(0)
        assert np.all(tv2 / peak2 <= tv1 / peak1 + 1e-12)


def test_roughness_smooths_fan_inside_gaussian():
    # raw TV only shrinks when the origin sits inside the rho-scaled 1-sigma ellipsoid
    rng = np.random.default_rng(8)
    checked = 0
    for _ in range(100):
        gs, a, b = _random_fan_scene(rng)
        rho = rng.uniform(0.3, 1.0)
        tv1, tv2 = _fan_tv(gs, np.zeros(3), rho, a, b), _fan_tv(gs, np.zeros(3), 2 * rho, a, b)
        for i in range(len(gs)):
            if np.linalg.norm(to_local(gs[i], Ray(np.zeros(3), a), rho)[0]) <= 1.0:
                assert tv2[i] <= tv1[i] + 1e-12
                checked += 1
    assert checked > 50


def test_roughness_can_raise_raw_tv_of_distant_gaussian():
    gs = GaussianSet.from_params([iso(mu=(0, 3, 4), sigma=1.0)])
    a, b = np.array([0.0, 0, 1]), np.array([1.0, 0, 0])
    assert _fan_tv(gs, np.zeros(3), 2.0, a, b)[0] > _fan_tv(gs, np.zeros(3), 1.0, a, b)[0]


def test_far_field_translation_insensitive():
    rng = np.random.default_rng(8)
    for _ in range(20):
        dirs = rng.normal(size=(8, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        gs = GaussianSet(1e3 * dirs * rng.uniform(1.0, 2.0, size=(8, 1)), np.zeros((8, 3)),
                         random_quaternions(rng, 8))
        d = rng.normal(size=(50, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        delta = rng.normal(size=3)
        delta *= rng.uniform(0, 1) / np.linalg.norm(delta)
        o = rng.normal(scale=0.1, size=(50, 3))
        v0 = encode(gs, Ray(o, d), 1.0)
        v1 = encode(gs, Ray(o + delta, d), 1.0)
        assert np.abs(v1 - v0).max() <= 10 * np.linalg.norm(delta) / 1e3


# --- serialization ---------------------------------------------------------


def test_gde1_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    gs = GaussianSet.default_init([-1, 0, -1], [1, 2, 1], n=32, rng=rng)
    gs.mu += rng.normal(size=gs.mu.shape) * 1e-3
    path = tmp_path / "g.gde"
    gs.save(path, bbox=[[-1, 0, -1], [1, 2, 1]])
    blob = path.read_bytes()
    assert blob[:4] == b"GDE1" and len(blob) == 8 + 32 * 40
    back = GaussianSet.load(path)
    np.testing.assert_allclose(back.mu, gs.mu, rtol=1e-6)
    back.save(tmp_path / "h.gde")
    assert (tmp_path / "h.gde").read_bytes() == blob
    assert (tmp_path / "g.gde.json").exists()


def test_default_init_layout():
    gs = GaussianSet.default_init([0, 0, 0], [4, 2, 4], n=256, rng=0)
    assert len(gs) == 256
    assert np.all(gs.mu >= [-0.5, -0.25, -0.5]) and np.all(gs.mu <= [4.5, 2.25, 4.5])
    np.testing.assert_allclose(np.exp(-gs.log_inv_scale), 0.6)
    np.testing.assert_allclose(gs.rot, np.tile([1, 0, 0, 0], (256, 1)))
