import math

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.ndimage import gaussian_filter

from descan import (
    DimensionError,
    Image,
    ParameterError,
    ScanParams,
    blur,
    build_blur_operator,
    darken,
    distort,
    simulate,
    solve_shape,
)
from descan.forward import SIGMA_MIN, darkening_factors, operator_from_sigmas
from descan.kernels import assemble_gaussian_columns_numpy, kernel_backend

from conftest import smooth_image


def dense_operator_oracle(height, width, sigma_by_column, sigma_min=SIGMA_MIN):
    """Brute-force dense construction of the blur operator.

    Independent of the stamp assembly: evaluates the Gaussian weight for
    every (destination, source) pixel pair as a separable product, zeroes
    pairs beyond the circular 5*sigma cutoff, and normalizes every source
    column to unit sum.
    """
    n = height * width
    k = np.zeros((n, n))
    for sr in range(height):
        for sc in range(width):
            src = sr * width + sc
            sigma = sigma_by_column[sc]
            if sigma < sigma_min:
                k[src, src] = 1.0
                continue
            for dr in range(height):
                wy = math.exp(-((dr - sr) ** 2) / (2 * sigma**2))
                for dc in range(width):
                    if (dr - sr) ** 2 + (dc - sc) ** 2 > (5 * sigma) ** 2:
                        continue
                    k[dr * width + dc, src] = wy * math.exp(
                        -((dc - sc) ** 2) / (2 * sigma**2)
                    )
            k[:, src] /= k[:, src].sum()
    return k


def make_shape(theta0=0.8, l=40.0, n=200, s_max=5.0):
    params = ScanParams(
        l=l, theta0=theta0, sigma_slope=0.05, d=200.0, alpha=2, s_max=s_max
    )
    return params, solve_shape(params, n)


class TestDistort:
    def test_flat_page_identity(self, rng):
        img = Image(rng.random((20, 64, 1)))
        _, shape = make_shape(theta0=1e-9, l=16.0, n=64)
        out = distort(img, shape)
        assert out.pixels == pytest.approx(img.pixels, abs=1e-9)

    def test_constant_image_stays_constant_over_mapped_region(self):
        img = Image(np.full((10, 120, 1), 0.4))
        _, shape = make_shape(theta0=1.0, l=30.0, n=120)
        out = distort(img, shape)
        content = int(shape.x[-1] / shape.pitch)
        assert out.pixels[:, : content + 1] == pytest.approx(0.4)
        assert np.all(out.pixels[:, content + 1 :] == 1.0)

    def test_padding_value_configurable(self):
        img = Image(np.full((4, 100, 1), 0.4))
        _, shape = make_shape(theta0=1.2, l=20.0, n=100)
        out = distort(img, shape, pad_value=0.0)
        assert np.all(out.pixels[:, -3:] == 0.0)

    def test_single_column_tracking_oracle(self):
        # a bright column near the spine must land at x(s_k), short of its
        # flat-page position l*s_k
        w = 200
        params, shape = make_shape(theta0=math.pi / 2, l=w / 5.0, n=w)
        k = 30
        img = Image(np.zeros((8, w, 1)))
        img.pixels[:, k] = 1.0
        out = distort(img, shape, pad_value=0.0)
        predicted = shape.x[k] / shape.pitch
        flat_position = shape.l * shape.s_hat[k] / shape.pitch
        assert predicted < flat_position
        landed = out.pixels[0, :, 0].argmax()
        assert abs(landed - predicted) <= 1.0

    def test_feature_order_preserved(self):
        w = 150
        _, shape = make_shape(theta0=1.1, l=25.0, n=w)
        img = Image(np.zeros((4, w, 1)))
        img.pixels[:, 40] = 1.0
        img.pixels[:, 90] = 0.8
        out = distort(img, shape, pad_value=0.0)
        profile = out.pixels[0, :, 0]
        first = profile.argmax()
        second = len(profile) - 1 - profile[::-1].argmax()
        rest = profile.copy()
        rest[first] = 0
        assert first < rest.argmax() or second > first

    def test_supersampling_averages_subcolumns(self):
        # area sampling tracks point sampling over the content, differing
        # only at the straddling content/padding boundary column
        img = smooth_image((16, 96), seed=5, scale=3.0)
        _, shape = make_shape(theta0=1.2, l=18.0, n=96)
        point = distort(img, shape)
        averaged = distort(img, shape, supersample=4)
        content = int(shape.x[-1] / shape.pitch)
        assert averaged.pixels[:, :content] == pytest.approx(
            point.pixels[:, :content], abs=0.06
        )
        assert not np.array_equal(averaged.pixels, point.pixels)

    def test_dimension_mismatch(self, rng):
        img = Image(rng.random((4, 33, 1)))
        _, shape = make_shape(n=32)
        with pytest.raises(DimensionError, match="width"):
            distort(img, shape)

    def test_overhang_rejected(self):
        _, shape = make_shape(theta0=2.0, n=64)
        with pytest.raises(DimensionError, match="monotone"):
            distort(Image(np.zeros((4, 64, 1))), shape)

    def test_bad_supersample(self):
        _, shape = make_shape(n=32)
        with pytest.raises(ParameterError, match="supersample"):
            distort(Image(np.zeros((4, 32, 1))), shape, supersample=0)


class TestBlurOperator:
    def test_zero_slope_gives_identity(self):
        params, shape = make_shape(n=24)
        params = params.replace(sigma_slope=0.0)
        op = build_blur_operator(shape, params, (16, 24))
        assert op.is_identity
        delta = op.weights - sp.identity(16 * 24, format="csr")
        assert abs(delta).max() == 0.0

    def test_matches_dense_oracle_constant_sigma(self):
        op = operator_from_sigmas((16, 16), np.full(16, 1.5))
        oracle = dense_operator_oracle(16, 16, np.full(16, 1.5))
        assert np.abs(op.weights.toarray() - oracle).max() <= 1e-9

    def test_matches_dense_oracle_varying_sigma(self):
        sigmas = np.array([2.0, 1.7, 1.2, 0.9, 0.6, 0.4, 0.2, 0.0] + [0.0] * 4)
        op = operator_from_sigmas((10, 12), sigmas)
        oracle = dense_operator_oracle(10, 12, sigmas)
        assert np.abs(op.weights.toarray() - oracle).max() <= 1e-9

    def test_matches_scipy_separable_blur_interior(self):
        # independent library cross-check; truncation conventions differ
        # (circular vs square window) only at the ~1e-5 level
        op = operator_from_sigmas((32, 32), np.full(32, 1.5))
        img = smooth_image((32, 32), seed=9, scale=4.0)
        ours = blur(img, op).pixels[:, :, 0]
        ref = gaussian_filter(img.pixels[:, :, 0], 1.5, mode="constant", truncate=5.0)
        assert ours[10:22, 10:22] == pytest.approx(ref[10:22, 10:22], abs=1e-4)

    def test_unit_outgoing_weight_per_source(self):
        params, shape = make_shape(theta0=1.0, l=30.0, n=60)
        op = build_blur_operator(shape, params, (40, 60))
        column_sums = np.asarray(op.weights.sum(axis=0)).ravel()
        assert np.abs(column_sums - 1.0).max() <= 1e-9

    def test_constant_image_preserved_interior(self):
        # interior means beyond twice the cutoff reach: pixels nearer the
        # edge receive the inflated weights of boundary-renormalized sources
        op = operator_from_sigmas((40, 40), np.full(40, 1.5))
        ones = np.ones(40 * 40)
        out = (op.weights @ ones).reshape(40, 40)
        margin = 2 * int(np.ceil(7.5))
        interior = out[margin:-margin, margin:-margin]
        assert interior.size > 0
        assert np.abs(interior - 1.0).max() <= 1e-9

    def test_entries_nonnegative_and_within_cutoff(self):
        sigmas = np.linspace(2.2, 0.0, 20)
        op = operator_from_sigmas((14, 20), sigmas)
        coo = op.weights.tocoo()
        assert np.all(coo.data >= 0)
        dr = coo.row // 20 - coo.col // 20
        dc = coo.row % 20 - coo.col % 20
        cutoff = op.cutoff_radius_by_column[coo.col % 20]
        blurred = op.sigma_by_column[coo.col % 20] >= SIGMA_MIN
        assert np.all((dr**2 + dc**2)[blurred] <= cutoff[blurred] ** 2 + 1e-12)
        assert np.all((dr == 0) == (dc == 0)) or np.all(
            (dr[~blurred] == 0) & (dc[~blurred] == 0)
        )

    def test_backend_parity(self):
        if kernel_backend() != "cython":
            pytest.skip("compiled kernels unavailable")
        sigmas = np.array([0.0, 0.31, 1.1, 2.4, 0.8, 0.1])
        ext = operator_from_sigmas((9, 6), sigmas).weights.tocoo()
        rows, cols, vals = assemble_gaussian_columns_numpy(sigmas, 9, 6, SIGMA_MIN)
        ref = sp.coo_matrix((vals, (rows, cols)), shape=ext.shape).tocsr().tocoo()
        assert np.array_equal(ext.row, ref.row)
        assert np.array_equal(ext.col, ref.col)
        assert ext.data == pytest.approx(ref.data, abs=1e-14)

    def test_sigma_profile_validation(self):
        with pytest.raises(DimensionError, match="length"):
            operator_from_sigmas((4, 4), np.zeros(5))
        with pytest.raises(ParameterError, match="non-negative"):
            operator_from_sigmas((4, 4), np.array([0.0, -0.1, 0.0, 0.0]))
        params, shape = make_shape(n=24)
        with pytest.raises(DimensionError, match="grid size"):
            build_blur_operator(shape, params, (16, 25))


class TestBlurApply:
    def test_identity_operator_is_noop(self, rng):
        img = Image(rng.random((12, 18, 3)))
        op = operator_from_sigmas((12, 18), np.zeros(18))
        out = blur(img, op)
        assert np.array_equal(out.pixels, img.pixels)

    def test_delta_spreads_to_gaussian_spot(self):
        op = operator_from_sigmas((33, 33), np.full(33, 2.0))
        img = Image(np.zeros((33, 33, 1)))
        img.pixels[16, 16] = 1.0
        out = blur(img, op).pixels[:, :, 0]
        yy, xx = np.mgrid[0:33, 0:33]
        direct = np.exp(-((yy - 16.0) ** 2 + (xx - 16.0) ** 2) / (2 * 4.0))
        direct[(yy - 16) ** 2 + (xx - 16) ** 2 > 100] = 0.0
        direct /= direct.sum()
        assert out == pytest.approx(direct, abs=1e-12)
        assert np.array_equal(out, out.T)  # radial symmetry within the grid
        assert np.array_equal(out, out[::-1, :])

    def test_wider_sigma_gives_wider_spot(self):
        # second-moment comparison under two profiles ordered pointwise
        img = Image(np.zeros((25, 25, 1)))
        img.pixels[12, 12] = 1.0
        xx = np.arange(25) - 12.0
        second_moment = {}
        for label, sigma in (("narrow", 1.0), ("wide", 2.0)):
            op = operator_from_sigmas((25, 25), np.full(25, sigma))
            spot = blur(img, op).pixels[:, :, 0]
            second_moment[label] = float((spot * xx[None, :] ** 2).sum())
        assert second_moment["wide"] > second_moment["narrow"]

    def test_blur_reduces_total_variation(self, rng):
        img = Image(rng.random((24, 24, 1)))
        op = operator_from_sigmas((24, 24), np.full(24, 1.5))
        out = blur(img, op).pixels[:, :, 0]
        tv = lambda a: np.abs(np.diff(a, axis=0)).sum() + np.abs(
            np.diff(a, axis=1)
        ).sum()
        assert tv(out) < tv(img.pixels[:, :, 0])

    def test_dimension_mismatch(self, rng):
        op = operator_from_sigmas((8, 8), np.zeros(8))
        with pytest.raises(DimensionError, match="dims"):
            blur(Image(rng.random((8, 9, 1))), op)


class TestDarken:
    def test_flat_page_not_darkened(self, rng):
        # the d^alpha prefactor pins the factor to 1 at zero height
        img = Image(rng.random((10, 40, 1)))
        params, shape = make_shape(theta0=1e-9, l=10.0, n=40)
        out = darken(img, shape, params)
        assert out.pixels == pytest.approx(img.pixels, abs=1e-8)

    def test_height_equal_to_d_quarters_with_alpha_2(self):
        params, shape = make_shape(theta0=1.0, l=50.0, n=100)
        factors = {}
        for alpha in (1, 2):
            p = params.replace(d=float(shape.height[0]), alpha=alpha)
            factors[alpha] = darkening_factors(shape, p, 100)
        assert factors[2][0] == pytest.approx(0.25, rel=1e-12)
        assert factors[1][0] == pytest.approx(0.5, rel=1e-12)

    def test_contraction_monotone_in_height(self):
        params, shape = make_shape(theta0=1.2, l=40.0, n=120)
        f = darkening_factors(shape, params, 120)
        assert np.all(f <= 1.0)
        assert np.all(f > 0.0)
        assert np.all(np.diff(f) >= 0)  # height falls away from the spine

    def test_commutes_with_blur_on_constant_image(self):
        params = ScanParams(l=40.0, theta0=0.9, sigma_slope=0.02, d=300.0, alpha=2)
        shape = solve_shape(params, 96)
        const = Image(np.full((48, 96, 1), 0.6))
        op = build_blur_operator(shape, params, (48, 96))
        a = darken(blur(const, op), shape, params)
        b = blur(darken(const, shape, params), op)
        assert a.pixels == pytest.approx(b.pixels, abs=2e-3)


class TestSimulate:
    def test_empty_artifact_set_is_identity(self, rng):
        img = Image(rng.random((12, 48, 3)))
        params, _ = make_shape(n=48)
        out = simulate(img, params, artifact_set=())
        assert np.array_equal(out.pixels, img.pixels)

    def test_flat_page_full_set_byte_identity(self, rng):
        img = Image.from_bytes(rng.integers(0, 256, (16, 48, 3), dtype=np.uint8))
        params = ScanParams(l=12.0, theta0=1e-9, sigma_slope=0.0, d=100.0, alpha=2)
        out = simulate(img, params)
        assert np.array_equal(out.to_bytes(), img.to_bytes())

    def test_unknown_artifact_rejected(self, rng):
        params, _ = make_shape()
        with pytest.raises(ParameterError, match="unknown artifacts"):
            simulate(Image(rng.random((4, 8, 1))), params, artifact_set=("sharpen",))

    def test_spine_right_mirrors(self, rng):
        img = Image(rng.random((10, 60, 1)))
        params = ScanParams(
            l=15.0, theta0=0.9, sigma_slope=0.03, d=150.0, alpha=2, spine_side="left"
        )
        left = simulate(img, params)
        right = simulate(
            Image(img.pixels[:, ::-1, :]), params.replace(spine_side="right")
        )
        assert np.array_equal(right.pixels[:, ::-1, :], left.pixels)

    def test_channels_treated_independently(self, rng):
        # color handling is the scalar treatment repeated per channel
        img = Image(rng.random((20, 60, 3)))
        params = ScanParams(
            l=15.0, theta0=0.9, sigma_slope=0.05, d=120.0, alpha=2, s_max=59 / 15.0
        )
        full = simulate(img, params)
        for c in range(3):
            alone = simulate(Image(img.pixels[:, :, c]), params)
            assert np.array_equal(alone.pixels[:, :, 0], full.pixels[:, :, c])

    def test_numpy_backend_forced_by_env(self, monkeypatch):
        monkeypatch.setenv("DESCAN_KERNEL", "numpy")
        assert kernel_backend() == "numpy"
        op = operator_from_sigmas((8, 8), np.full(8, 1.0))
        monkeypatch.delenv("DESCAN_KERNEL")
        ref = operator_from_sigmas((8, 8), np.full(8, 1.0))
        assert np.abs((op.weights - ref.weights)).max() <= 1e-14

    def test_full_set_shows_squeeze_blur_and_darkening(self):
        img = smooth_image((40, 160), seed=11, scale=4.0, lo=0.2, hi=1.0)
        params = ScanParams(
            l=40.0, theta0=1.0, sigma_slope=0.06, d=160.0, alpha=2, s_max=159 / 40.0
        )
        out = simulate(img, params)
        shape = solve_shape(params, 160)
        content = int(shape.x[-1] / shape.pitch)
        # the squeeze surplus is white after distortion; the later darkening
        # stage dims it uniformly like any other platen region
        distorted = distort(img, shape)
        assert np.all(distorted.pixels[:, content + 1 :] == 1.0)
        surplus = out.pixels[:, content + 1 :]
        assert surplus.std() < 1e-6 and surplus.min() > 0.95
        spine_ratio = out.pixels[:, :20].mean() / img.pixels[:, :20].mean()
        far_ratio = (
            out.pixels[:, content - 30 : content - 10].mean()
            / img.pixels[:, content - 30 : content - 10].mean()
        )
        assert spine_ratio < 0.75  # strong darkening near the spine
        assert far_ratio > 0.9
