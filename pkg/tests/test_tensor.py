"""Tensor ops: validation, projection, conv/resize/pad linear algebra, EMTN IO."""

import struct

import numpy as np
import pytest

from advm.errors import (
    BadMagic,
    CorruptFile,
    LengthMismatch,
    PlacementOutOfBounds,
    ShapeMismatch,
    VersionMismatch,
    ZeroGradient,
)
from advm.tensor import (
    Kernel2D,
    clamp01,
    conv2d_same,
    identity_kernel,
    l1_normalize,
    load_tensor,
    pad_zero,
    pad_zero_adjoint,
    project_linf,
    resize_bilinear,
    resize_bilinear_adjoint,
    save_tensor,
    sign,
    tensor_from_bytes,
    tensor_to_bytes,
    validate_image,
)

from conftest import rand_pixel_image


# -- validation ---------------------------------------------------------------


def test_validate_image_accepts_well_formed():
    validate_image(np.zeros((4, 5, 2)))
    validate_image(np.full((2, 2, 1), 0.5), pixel_domain=True)


def test_validate_image_rank_and_dtype():
    with pytest.raises(ShapeMismatch):
        validate_image(np.zeros((4, 5)))
    with pytest.raises(ShapeMismatch):
        validate_image(np.zeros((4, 5, 2, 1)))
    with pytest.raises(ShapeMismatch):
        validate_image(np.zeros((4, 5, 2), dtype=np.float32))
    with pytest.raises(ShapeMismatch):
        validate_image([[0.0]])


def test_validate_image_rejects_nonfinite_and_out_of_domain():
    bad = np.zeros((2, 2, 1))
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        validate_image(bad)
    with pytest.raises(ValueError):
        validate_image(np.full((2, 2, 1), 1.5), pixel_domain=True)
    with pytest.raises(ValueError):
        validate_image(np.full((2, 2, 1), -0.1), pixel_domain=True)
    # out-of-domain is fine when pixel_domain is not requested
    validate_image(np.full((2, 2, 1), 1.5))


def test_sign_values():
    t = np.array([[-3.0, 0.0, 5.0]])
    assert np.array_equal(sign(t), np.array([[-1.0, 0.0, 1.0]]))


def test_l1_normalize_hand_case():
    t = np.array([1.0, -2.0, 3.0])
    got = l1_normalize(t)
    assert np.allclose(got, np.array([1.0, -2.0, 3.0]) / 6.0, atol=0, rtol=0)
    assert abs(np.abs(got).sum() - 1.0) < 1e-15


def test_l1_normalize_zero_raises():
    with pytest.raises(ZeroGradient):
        l1_normalize(np.zeros((3, 3)))


def test_l1_normalize_tiny_but_nonzero_ok():
    t = np.full((2, 2), 1e-100)
    got = l1_normalize(t)
    assert abs(np.abs(got).sum() - 1.0) < 1e-12


def test_clamp01():
    t = np.array([-0.5, 0.3, 1.7])
    assert np.array_equal(clamp01(t), np.array([0.0, 0.3, 1.0]))


# -- projection ---------------------------------------------------------------


def test_project_linf_hand_case():
    origin = np.full((1, 1, 1), 0.5)
    assert project_linf(np.full((1, 1, 1), 0.75), origin, 0.1)[0, 0, 0] == pytest.approx(0.6)
    assert project_linf(np.full((1, 1, 1), 0.2), origin, 0.1)[0, 0, 0] == pytest.approx(0.4)
    # the [0, 1] box binds before the ball does near the boundary
    near_edge = np.full((1, 1, 1), 0.05)
    assert project_linf(np.full((1, 1, 1), -0.2), near_edge, 0.1)[0, 0, 0] == 0.0


def test_project_linf_idempotent():
    rng = np.random.default_rng(0)
    origin = rng.uniform(0.0, 1.0, size=(6, 6, 2))
    t = origin + rng.uniform(-0.5, 0.5, size=origin.shape)
    once = project_linf(t, origin, 0.12)
    twice = project_linf(once, origin, 0.12)
    assert np.array_equal(once, twice)


def test_project_linf_feasible_point_unchanged():
    origin = np.full((2, 2, 1), 0.5)
    t = origin + 0.05
    assert np.array_equal(project_linf(t, origin, 0.1), t)


def test_project_linf_errors():
    origin = np.zeros((2, 2, 1))
    with pytest.raises(ShapeMismatch):
        project_linf(np.zeros((3, 2, 1)), origin, 0.1)
    with pytest.raises(ValueError):
        project_linf(origin, origin, -0.01)


# -- kernels and convolution ----------------------------------------------------


def test_kernel2d_validation():
    with pytest.raises(ShapeMismatch):
        Kernel2D(np.zeros((2, 3)))
    with pytest.raises(ShapeMismatch):
        Kernel2D(np.zeros(3))
    with pytest.raises(ValueError):
        Kernel2D(np.zeros((2, 2)))
    assert Kernel2D(np.ones((5, 5))).size == 5


def test_identity_kernel_is_bitwise_noop():
    k = identity_kernel(1)
    assert np.array_equal(k.weights, np.array([[1.0]]))
    img = rand_pixel_image((5, 4, 2), seed=1)
    assert np.array_equal(conv2d_same(img, k), img)
    # a larger identity kernel behaves the same up to float addition of zeros
    k3 = identity_kernel(3)
    assert np.allclose(conv2d_same(img, k3), img, atol=1e-15, rtol=0)
    with pytest.raises(ValueError):
        identity_kernel(4)


def test_conv2d_same_hand_case():
    # 2x2 image, all-ones 3x3 kernel: every output pixel sees the whole image
    img = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(2, 2, 1)
    out = conv2d_same(img, Kernel2D(np.ones((3, 3))))
    assert np.allclose(out, np.full((2, 2, 1), 10.0), atol=1e-12, rtol=0)


def _brute_conv(img, weights):
    """Nested-loop correlation with zero padding, the slow way."""
    h, w, c = img.shape
    k = weights.shape[0]
    r = k // 2
    out = np.zeros_like(img)
    for ch in range(c):
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for di in range(k):
                    for dj in range(k):
                        ii, jj = i + di - r, j + dj - r
                        if 0 <= ii < h and 0 <= jj < w:
                            acc += img[ii, jj, ch] * weights[di, dj]
                out[i, j, ch] = acc
    return out


def test_conv2d_same_matches_brute_force():
    rng = np.random.default_rng(5)
    img = rng.normal(size=(5, 6, 2))
    for k in (1, 3, 5):
        weights = rng.normal(size=(k, k))
        got = conv2d_same(img, Kernel2D(weights))
        want = _brute_conv(img, weights)
        assert np.max(np.abs(got - want)) < 1e-12


def test_conv2d_same_symmetric_kernel_is_self_adjoint():
    rng = np.random.default_rng(9)
    weights = rng.normal(size=(3, 3))
    weights = weights + weights[::-1, ::-1]  # point-symmetric, like a Gaussian
    k = Kernel2D(weights)
    u = rng.normal(size=(6, 6, 1))
    v = rng.normal(size=(6, 6, 1))
    assert abs(np.sum(conv2d_same(u, k) * v) - np.sum(u * conv2d_same(v, k))) < 1e-10


# -- bilinear resize -----------------------------------------------------------


def test_resize_bilinear_hand_case_2x2_to_3x3():
    # half-pixel sampling of [[1,2],[3,4]]: rows/cols interpolate at
    # weights [[1,0],[.5,.5],[0,1]], giving 0.5-step ramps
    img = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(2, 2, 1)
    want = np.array([[1.0, 1.5, 2.0], [2.0, 2.5, 3.0], [3.0, 3.5, 4.0]])
    got = resize_bilinear(img, 3, 3)
    assert np.max(np.abs(got[:, :, 0] - want)) < 1e-12


def test_resize_bilinear_identity_is_exact():
    img = rand_pixel_image((7, 5, 3), seed=2)
    assert np.array_equal(resize_bilinear(img, 7, 5), img)


def test_resize_bilinear_constant_image_stays_constant():
    # row-stochastic weights: interpolation preserves constants exactly
    img = np.full((6, 6, 1), 0.37)
    out = resize_bilinear(img, 9, 4)
    assert np.max(np.abs(out - 0.37)) < 1e-12
    assert out.shape == (9, 4, 1)


@pytest.mark.parametrize(
    "old,new,seed",
    [((4, 6), (7, 3), 21), ((5, 5), (9, 9), 22), ((8, 3), (2, 11), 23)],
)
def test_resize_adjoint_inner_product(old, new, seed):
    rng = np.random.default_rng(seed)
    u = rng.normal(size=old + (2,))
    v = rng.normal(size=new + (2,))
    lhs = np.sum(resize_bilinear(u, *new) * v)
    rhs = np.sum(u * resize_bilinear_adjoint(v, *old))
    assert abs(lhs - rhs) < 1e-10


# -- zero padding ----------------------------------------------------------------


def test_pad_zero_hand_case():
    img = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(2, 2, 1)
    out = pad_zero(img, 1, 2, 4, 4)
    want = np.zeros((4, 4))
    want[1:3, 2:4] = [[1.0, 2.0], [3.0, 4.0]]
    assert np.array_equal(out[:, :, 0], want)


def test_pad_zero_out_of_bounds():
    img = np.zeros((2, 2, 1))
    with pytest.raises(PlacementOutOfBounds):
        pad_zero(img, 3, 0, 4, 4)
    with pytest.raises(PlacementOutOfBounds):
        pad_zero(img, 0, -1, 4, 4)


def test_pad_zero_adjoint_inner_product():
    rng = np.random.default_rng(12)
    u = rng.normal(size=(3, 4, 2))
    v = rng.normal(size=(6, 7, 2))
    lhs = np.sum(pad_zero(u, 2, 1, 6, 7) * v)
    rhs = np.sum(u * pad_zero_adjoint(v, 2, 1, 3, 4))
    assert abs(lhs - rhs) < 1e-12


def test_pad_then_crop_roundtrip():
    img = rand_pixel_image((3, 3, 1), seed=4)
    assert np.array_equal(pad_zero_adjoint(pad_zero(img, 1, 1, 5, 5), 1, 1, 3, 3), img)


# -- EMTN serialization -----------------------------------------------------------


def test_tensor_bytes_frozen_layout():
    t = np.array([1.5, -2.25]).reshape(2, 1, 1)
    want = (
        b"EMTN"
        + bytes([1])
        + struct.pack("<I", 3)
        + struct.pack("<3I", 2, 1, 1)
        + struct.pack("<2d", 1.5, -2.25)
    )
    assert tensor_to_bytes(t) == want


def test_tensor_bytes_roundtrip():
    t = rand_pixel_image((4, 5, 3), seed=6)
    back = tensor_from_bytes(tensor_to_bytes(t))
    assert back.dtype == np.float64
    assert np.array_equal(back, t)


def test_tensor_roundtrip_via_file(tmp_path):
    t = rand_pixel_image((3, 3, 2), seed=8)
    path = tmp_path / "t.emtn"
    save_tensor(str(path), t)
    assert np.array_equal(load_tensor(str(path)), t)
    # no temp files left behind by the atomic write
    assert sorted(p.name for p in tmp_path.iterdir()) == ["t.emtn"]


def test_tensor_from_bytes_errors():
    good = tensor_to_bytes(np.zeros((2, 2, 1)))
    with pytest.raises(CorruptFile):
        tensor_from_bytes(good[:5])
    with pytest.raises(BadMagic):
        tensor_from_bytes(b"XXXX" + good[4:])
    with pytest.raises(VersionMismatch):
        tensor_from_bytes(good[:4] + bytes([2]) + good[5:])
    # implausible rank
    with pytest.raises(CorruptFile):
        tensor_from_bytes(good[:5] + struct.pack("<I", 33) + good[9:])
    # dims block truncated
    with pytest.raises(CorruptFile):
        tensor_from_bytes(good[:5] + struct.pack("<I", 3) + b"\x02\x00")
    # payload shorter than the dims promise
    with pytest.raises(LengthMismatch):
        tensor_from_bytes(good[:-8])
