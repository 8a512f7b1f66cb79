import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gdekit.geom import (
    Camera,
    generate_rays,
    quat_from_axis_angle,
    quat_rotate,
    quat_to_matrix,
    random_quaternions,
    stereographic_project,
    stereographic_unproject,
    tangent_frame,
)
from gdekit.image import ImageBuffer, mae_degrees, psnr, ssim
from gdekit.sh import sh_basis

unit_floats = st.floats(-1.0, 1.0, allow_nan=False)


def test_quat_identity():
    np.testing.assert_allclose(quat_rotate([1, 0, 0, 0], [1, 2, 3]), [1, 2, 3])


def test_quat_quarter_turn_about_z():
    q = quat_from_axis_angle([0, 0, 1], np.pi / 2)
    np.testing.assert_allclose(quat_rotate(q, [1, 0, 0]), [0, 1, 0], atol=1e-15)


def _matrix_oracle(q):
    # Rodrigues from axis-angle, independent of the quaternion formula
    w, v = q[0], np.asarray(q[1:])
    angle = 2 * math.atan2(np.linalg.norm(v), w)
    if np.linalg.norm(v) == 0:
        return np.eye(3)
    k = v / np.linalg.norm(v)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(angle) * kx + (1 - math.cos(angle)) * kx @ kx


def test_quat_matches_matrix_form():
    rng = np.random.default_rng(0)
    for q in random_quaternions(rng, 50):
        v = rng.normal(size=3)
        np.testing.assert_allclose(quat_rotate(q, v), _matrix_oracle(q) @ v, atol=1e-12)
        np.testing.assert_allclose(quat_to_matrix(q), _matrix_oracle(q), atol=1e-12)


@settings(max_examples=200)
@given(st.lists(unit_floats, min_size=4, max_size=4), st.lists(unit_floats, min_size=6, max_size=6))
def test_quat_rotate_is_rigid(qs, vs):
    q = np.array(qs)
    if np.linalg.norm(q) < 1e-3:
        return
    q = q / np.linalg.norm(q)
    a, b = np.array(vs[:3]), np.array(vs[3:])
    ra, rb = quat_rotate(q, a), quat_rotate(q, b)
    assert abs(np.linalg.norm(ra) - np.linalg.norm(a)) < 1e-9
    assert abs(ra @ rb - a @ b) < 1e-9


def test_quat_drift_renormalized():
    q = np.array([1.0 + 1e-3, 0, 0, 0])
    np.testing.assert_allclose(quat_rotate(q, [0, 0, 2]), [0, 0, 2])


# --- spherical harmonics ---------------------------------------------------


def _sh_oracle(d, lmax):
    """Real SH from an associated-Legendre recurrence (no Condon-Shortley phase)."""
    x, y, z = d
    theta, phi = math.acos(np.clip(z, -1, 1)), math.atan2(y, x)
    ct, stt = math.cos(theta), math.sin(theta)
    p = {}
    for m in range(lmax + 1):
        # P_m^m without the (-1)^m phase
        pmm = 1.0
        for i in range(1, m + 1):
            pmm *= (2 * i - 1) * stt
        p[(m, m)] = pmm
        if m + 1 <= lmax:
            p[(m + 1, m)] = ct * (2 * m + 1) * pmm
        for ll in range(m + 2, lmax + 1):
            p[(ll, m)] = ((2 * ll - 1) * ct * p[(ll - 1, m)] - (ll + m - 1) * p[(ll - 2, m)]) / (ll - m)
    out = []
    for ll in range(lmax + 1):
        for m in range(-ll, ll + 1):
            am = abs(m)
            k = math.sqrt((2 * ll + 1) / (4 * math.pi) * math.factorial(ll - am) / math.factorial(ll + am))
            if m == 0:
                out.append(k * p[(ll, 0)])
            elif m > 0:
                out.append(math.sqrt(2) * k * math.cos(m * phi) * p[(ll, am)])
            else:
                out.append(math.sqrt(2) * k * math.sin(am * phi) * p[(ll, am)])
    return np.array(out)


def test_sh_degree0_constant():
    np.testing.assert_allclose(sh_basis([0.6, 0.0, 0.8], 0), [0.2820947918], atol=1e-10)


def test_sh_band1_on_z():
    np.testing.assert_allclose(sh_basis([0, 0, 1], 1)[1:], [0, 0.4886025119, 0], atol=1e-10)


def test_sh_matches_recurrence_oracle():
    rng = np.random.default_rng(1)
    for d in rng.normal(size=(30, 3)):
        d /= np.linalg.norm(d)
        np.testing.assert_allclose(sh_basis(d, 4), _sh_oracle(d, 4), atol=1e-12)
    assert sh_basis([0, 0, 1], 4).shape == (25,)


def test_sh_orthonormal_monte_carlo():
    rng = np.random.default_rng(2)
    d = rng.normal(size=(1_000_000, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    y = sh_basis(d, 4)
    gram = 4 * np.pi * (y.T @ y) / len(d)
    np.testing.assert_allclose(gram, np.eye(25), atol=0.01)


@pytest.mark.parametrize("deg", [-1, 5])
def test_sh_degree_out_of_range(deg):
    with pytest.raises(ValueError):
        sh_basis([0, 0, 1], deg)


# --- cameras and rays ------------------------------------------------------


def _cam(fx=100.0, fy=100.0):
    rot = quat_to_matrix(quat_from_axis_angle([0.3, 1.0, -0.2], 0.7))
    return Camera(fx, fy, 32.0, 24.0, rot, [0.5, 1.0, -2.0], 64, 48)


def test_principal_point_ray_is_optical_axis():
    cam = _cam()
    ray = generate_rays(cam, [[cam.cx, cam.cy]])
    np.testing.assert_allclose(ray.direction[0], cam.rotation @ [0, 0, 1], atol=1e-15)
    np.testing.assert_allclose(ray.origin[0], cam.translation)


def test_corner_pixel_unprojection():
    cam = _cam(fx=80.0, fy=120.0)
    ray = generate_rays(cam, [[0.5, 0.5]])
    # hand computation: view dir ((0.5-32)/80, (0.5-24)/120, 1)
    view = np.array([-31.5 / 80.0, -23.5 / 120.0, 1.0])
    expect = cam.rotation @ (view / np.linalg.norm(view))
    np.testing.assert_allclose(ray.direction[0], expect, atol=1e-15)
    assert ray.direction[0] @ (cam.rotation @ [1, 0, 0]) < 0  # left of center
    assert ray.direction[0] @ (cam.rotation @ [0, 1, 0]) < 0  # above center (y down)


def test_base_radius():
    assert generate_rays(_cam(), [[1, 1]]).base_radius[0] == pytest.approx(0.01)


def test_camera_rejects_bad_rotation():
    with pytest.raises(ValueError):
        Camera(1, 1, 0, 0, np.diag([1, 1, -1.0]), [0, 0, 0], 2, 2)


def test_look_at_points_at_target():
    cam = Camera.look_at([0, 1.5, 1.0], [0, 0, -1.0], 32, 24)
    ray = generate_rays(cam, [[cam.cx, cam.cy]])
    want = np.array([0, -1.5, -2.0]) / np.linalg.norm([0, -1.5, -2.0])
    np.testing.assert_allclose(ray.direction[0], want, atol=1e-12)


def test_tangent_frame_orthonormal():
    rng = np.random.default_rng(3)
    n = rng.normal(size=(1000, 3))
    n /= np.linalg.norm(n, axis=1, keepdims=True)
    t, b = tangent_frame(n)
    np.testing.assert_allclose(np.cross(t, b), n, atol=1e-12)
    np.testing.assert_allclose(np.sum(t * n, -1), 0, atol=1e-12)


# --- stereographic ---------------------------------------------------------


@pytest.mark.parametrize(
    "d,st_",
    [([0, 0, 1], [0, 0]), ([1, 0, 0], [1, 0]), ([0, 1, 0], [0, 1])],
)
def test_stereographic_examples(d, st_):
    np.testing.assert_allclose(stereographic_project(d), st_)


def test_stereographic_pole_raises():
    with pytest.raises(ValueError, match="pole"):
        stereographic_project([0, 0, -1])


def test_stereographic_round_trip():
    rng = np.random.default_rng(4)
    d = rng.normal(size=(10000, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    d = d[d[:, 2] > -0.99]
    np.testing.assert_allclose(stereographic_unproject(stereographic_project(d)), d, atol=1e-9)


# --- metrics ---------------------------------------------------------------


def test_psnr_cap_and_constant_offset():
    a = ImageBuffer(np.full((8, 8, 3), 0.5))
    assert psnr(a, a) == 99.0
    assert psnr(a, ImageBuffer(np.full((8, 8, 3), 0.6))) == pytest.approx(20.0)


def test_psnr_matches_loop_oracle():
    rng = np.random.default_rng(5)
    a, b = rng.uniform(size=(6, 7, 3)), rng.uniform(size=(6, 7, 3))
    valid = rng.uniform(size=(6, 7)) > 0.3
    total, count = 0.0, 0
    for i in range(6):
        for j in range(7):
            if valid[i, j]:
                for c in range(3):
                    total += (a[i, j, c] - b[i, j, c]) ** 2
                    count += 1
    want = 10 * math.log10(1 / (total / count))
    assert psnr(ImageBuffer(a, valid), ImageBuffer(b)) == pytest.approx(want, rel=1e-12)


def test_psnr_symmetric_and_monotone():
    rng = np.random.default_rng(6)
    base = rng.uniform(0.2, 0.8, size=(16, 16, 3))
    noise = rng.uniform(-1, 1, size=base.shape)
    vals = [psnr(ImageBuffer(base), ImageBuffer(base + s * noise)) for s in (0.01, 0.05, 0.1, 0.2)]
    assert all(x > y for x, y in zip(vals, vals[1:]))
    a, b = ImageBuffer(base), ImageBuffer(base + 0.05 * noise)
    assert psnr(a, b) == psnr(b, a)


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(ImageBuffer(np.zeros((2, 2, 3))), ImageBuffer(np.zeros((2, 3, 3))))


def test_ssim_identical_is_one():
    rng = np.random.default_rng(7)
    a = ImageBuffer(rng.uniform(size=(20, 20, 3)))
    assert ssim(a, a) == pytest.approx(1.0)


def test_mae_examples():
    n = np.zeros((4, 5, 3))
    n[..., 2] = 1.0
    assert mae_degrees(ImageBuffer(n), ImageBuffer(n)) == 0.0
    ortho = np.zeros_like(n)
    ortho[..., 0] = 1.0
    assert mae_degrees(ImageBuffer(n), ImageBuffer(ortho)) == pytest.approx(90.0)
    flipped = n.copy()
    flipped[0, 0] *= -1
    assert mae_degrees(ImageBuffer(flipped), ImageBuffer(n)) == pytest.approx(180.0 / 20)
