"""Degradation recipes, seeded parameter draws, and pair synthesis."""

import dataclasses

import numpy as np
import pytest
import scipy.ndimage
import torch

from adcsr.degrade import (
    RECIPE_PRESETS,
    DegradationRecipe,
    DegradationStage,
    DegradeError,
    StageParams,
    demo_hr_images,
    draw_params,
    identity_recipe,
    jpeg_tables,
    realesrgan_lite,
    recipe_from_json,
    recipe_hash,
    recipe_to_json,
    stage_families,
    synth_pair,
)
from adcsr.imaging import YCBCR, Image


def full_stage():
    return DegradationStage(
        blur_sigma=(0.3, 2.0),
        rescale=(0.5, 1.0),
        noise_sigma=(0.0, 0.05),
        jpeg_quality=(40, 90),
    )


class TestRecipeSerialization:
    def test_round_trip_identity(self):
        r = identity_recipe()
        assert recipe_from_json(recipe_to_json(r)) == r

    def test_round_trip_lite(self):
        r = realesrgan_lite()
        assert recipe_from_json(recipe_to_json(r)) == r

    def test_round_trip_multi_stage(self):
        r = DegradationRecipe(
            stages=(
                DegradationStage(blur_sigma=(0.5, 1.5)),
                DegradationStage(jpeg_quality=(10, 20), noise_sigma=(0.01, 0.02)),
                DegradationStage(rescale=(0.7, 0.9), rescale_kernels=("area",)),
            ),
            n_orders=3,
        )
        assert recipe_from_json(recipe_to_json(r)) == r

    def test_hash_stable_and_sensitive(self):
        a = realesrgan_lite()
        assert recipe_hash(a) == recipe_hash(realesrgan_lite())
        b = dataclasses.replace(a, n_orders=3)
        assert recipe_hash(a) != recipe_hash(b)
        c = DegradationRecipe(
            stages=(dataclasses.replace(a.stages[0], blur_sigma=(0.2, 3.1)),),
            n_orders=a.n_orders,
        )
        assert recipe_hash(a) != recipe_hash(c)

    def test_presets_exposed(self):
        assert set(RECIPE_PRESETS) == {"identity", "realesrgan-lite"}
        for fn in RECIPE_PRESETS.values():
            fn().validate()

    def test_json_rejects_garbage(self):
        with pytest.raises(DegradeError):
            recipe_from_json("not json at all {")

    def test_json_rejects_wrong_schema(self):
        text = recipe_to_json(identity_recipe()).replace('"schema_version": 1', '"schema_version": 99')
        with pytest.raises(DegradeError, match="schema_version"):
            recipe_from_json(text)

    def test_json_rejects_unknown_stage_field(self):
        text = '{"schema_version": 1, "stages": [{"sharpen": [1, 2]}], "n_orders": 1}'
        with pytest.raises(DegradeError, match="unknown stage fields"):
            recipe_from_json(text)

    def test_json_rejects_bad_pair(self):
        text = '{"schema_version": 1, "stages": [{"blur_sigma": [1, 2, 3]}], "n_orders": 1}'
        with pytest.raises(DegradeError, match="pair"):
            recipe_from_json(text)


class TestRecipeValidation:
    def test_rejects_zero_orders(self):
        with pytest.raises(DegradeError, match="n_orders"):
            DegradationRecipe(stages=(full_stage(),), n_orders=0).validate()

    def test_rejects_non_4x_scale(self):
        with pytest.raises(DegradeError, match="final_scale"):
            DegradationRecipe(stages=(), final_scale=2).validate()

    def test_rejects_unknown_seed_policy(self):
        with pytest.raises(DegradeError, match="seed policy"):
            DegradationRecipe(stages=(), seed_policy="wallclock").validate()

    def test_rejects_empty_stage(self):
        with pytest.raises(DegradeError, match="no degradation family"):
            DegradationRecipe(stages=(DegradationStage(),)).validate()

    def test_rejects_bad_blur_range(self):
        with pytest.raises(DegradeError, match="blur"):
            DegradationRecipe(stages=(DegradationStage(blur_sigma=(0.0, 1.0)),)).validate()
        with pytest.raises(DegradeError, match="blur"):
            DegradationRecipe(stages=(DegradationStage(blur_sigma=(2.0, 1.0)),)).validate()

    def test_rejects_bad_kernel(self):
        st = DegradationStage(rescale=(0.5, 1.0), rescale_kernels=("lanczos",))
        with pytest.raises(DegradeError, match="kernel"):
            DegradationRecipe(stages=(st,)).validate()

    def test_rejects_bad_jpeg_range(self):
        with pytest.raises(DegradeError, match="jpeg"):
            DegradationRecipe(stages=(DegradationStage(jpeg_quality=(0, 50)),)).validate()
        with pytest.raises(DegradeError, match="integer"):
            DegradationRecipe(stages=(DegradationStage(jpeg_quality=(10.0, 50)),)).validate()


class TestDrawParams:
    def test_deterministic(self):
        r = realesrgan_lite()
        assert draw_params(r, 7, 123) == draw_params(r, 7, 123)

    def test_index_and_seed_sensitivity(self):
        r = realesrgan_lite()
        base = draw_params(r, 7, 123)
        assert draw_params(r, 8, 123) != base
        assert draw_params(r, 7, 124) != base

    def test_shape_matches_recipe(self):
        r = DegradationRecipe(stages=(full_stage(), full_stage()), n_orders=3)
        params = draw_params(r, 0, 5)
        assert len(params) == 3
        assert all(len(order) == 2 for order in params)
        assert all(isinstance(sp, StageParams) for order in params for sp in order)

    def test_values_within_declared_ranges(self):
        st = full_stage()
        r = DegradationRecipe(stages=(st,), n_orders=2)
        for idx in range(50):
            for order in draw_params(r, idx, 99):
                (sp,) = order
                assert st.blur_sigma[0] <= sp.blur_sigma <= st.blur_sigma[1]
                assert st.rescale[0] <= sp.rescale <= st.rescale[1]
                assert sp.rescale_kernel in st.rescale_kernels
                assert st.noise_sigma[0] <= sp.noise_sigma <= st.noise_sigma[1]
                assert st.jpeg_quality[0] <= sp.jpeg_quality <= st.jpeg_quality[1]

    def test_disabled_families_stay_none(self):
        r = DegradationRecipe(stages=(DegradationStage(blur_sigma=(0.5, 0.5)),))
        (order,) = draw_params(r, 0, 1)
        (sp,) = order
        assert sp.blur_sigma == 0.5
        assert sp.rescale is None and sp.rescale_kernel is None
        assert sp.noise_sigma is None and sp.jpeg_quality is None


class TestJpegTables:
    # Annex K base tables, spot-checked by hand from the standard.
    def test_quality_50_is_base(self):
        tbl = jpeg_tables(50)
        assert tbl.shape == (2, 8, 8)
        assert tbl[0, 0, 0] == 16 and tbl[0, 0, 1] == 11
        assert tbl[0, 7, 7] == 99
        assert tbl[1, 0, 0] == 17
        assert (tbl[1, 4:, :] == 99).all()

    def test_quality_100_all_ones(self):
        assert (jpeg_tables(100) == 1).all()

    def test_quality_10_spot_values(self):
        # scale = 5000 // 10 = 500; entry = clip((base * 500 + 50) // 100, 1, 255)
        tbl = jpeg_tables(10)
        assert tbl[0, 0, 0] == (16 * 500 + 50) // 100
        assert tbl[0, 0, 1] == (11 * 500 + 50) // 100
        assert tbl[1, 0, 0] == (17 * 500 + 50) // 100
        assert tbl.max() == 255

    def test_monotone_coarser_at_lower_quality(self):
        prev = jpeg_tables(95)
        for q in (75, 50, 25, 10):
            cur = jpeg_tables(q)
            assert (cur >= prev).all()
            prev = cur

    def test_rejects_out_of_range(self):
        with pytest.raises(DegradeError):
            jpeg_tables(0)
        with pytest.raises(DegradeError):
            jpeg_tables(101)


class TestSynthPair:
    def test_identity_recipe_matches_bicubic_downscale(self):
        # With no degradation stages the LR side must equal a clipped
        # antialiased bicubic 1/4 downscale of the HR input.
        (hr,) = demo_hr_images(1, 64, 31)
        lr, hr_out = synth_pair(hr, identity_recipe(), 0, 31)
        assert hr_out is hr
        assert (lr.height, lr.width) == (16, 16)
        t = torch.from_numpy(hr.data.astype(np.float64)).unsqueeze(0)
        ref = torch.nn.functional.interpolate(t, size=(16, 16), mode="bicubic", antialias=True)
        ref = ref.clamp(0.0, 1.0).squeeze(0).numpy()
        assert np.abs(lr.data.astype(np.float64) - ref).max() <= 1e-6

    def test_deterministic_per_index_and_seed(self):
        (hr,) = demo_hr_images(1, 32, 5)
        r = realesrgan_lite()
        a, _ = synth_pair(hr, r, 3, 17)
        b, _ = synth_pair(hr, r, 3, 17)
        assert np.array_equal(a.data, b.data)

    def test_index_changes_output(self):
        (hr,) = demo_hr_images(1, 32, 5)
        r = realesrgan_lite()
        a, _ = synth_pair(hr, r, 0, 17)
        b, _ = synth_pair(hr, r, 1, 17)
        assert not np.array_equal(a.data, b.data)

    def test_param_inspection_does_not_perturb_synthesis(self):
        # The noise fields live on a separate stream from the parameter
        # draws, so interleaved draw_params calls must not shift results.
        (hr,) = demo_hr_images(1, 32, 5)
        r = realesrgan_lite()
        a, _ = synth_pair(hr, r, 2, 9)
        for _ in range(3):
            draw_params(r, 2, 9)
        b, _ = synth_pair(hr, r, 2, 9)
        assert np.array_equal(a.data, b.data)

    def test_noise_only_recipe_adds_noise(self):
        (hr,) = demo_hr_images(1, 32, 5)
        r = DegradationRecipe(stages=(DegradationStage(noise_sigma=(0.05, 0.05)),))
        lr, _ = synth_pair(hr, r, 0, 1)
        clean, _ = synth_pair(hr, identity_recipe(), 0, 1)
        assert not np.array_equal(lr.data, clean.data)
        assert np.abs(lr.data - clean.data).mean() < 0.1

    def test_blur_stage_matches_scipy(self):
        # A blur-only pinned-range recipe must reproduce the direct scipy
        # call on the raw array, followed by the final downscale.
        (hr,) = demo_hr_images(1, 32, 5)
        sigma = 1.25
        r = DegradationRecipe(stages=(DegradationStage(blur_sigma=(sigma, sigma)),))
        lr, _ = synth_pair(hr, r, 0, 1)

        arr = hr.data.astype(np.float64)
        arr = scipy.ndimage.gaussian_filter(arr, sigma=(0.0, sigma, sigma), mode="mirror", truncate=3.0)
        arr = np.clip(arr, 0.0, 1.0)
        t = torch.from_numpy(arr).unsqueeze(0)
        ref = torch.nn.functional.interpolate(t, size=(8, 8), mode="bicubic", antialias=True)
        ref = ref.clamp(0.0, 1.0).squeeze(0).numpy()
        assert np.abs(lr.data.astype(np.float64) - ref).max() <= 1e-6

    def test_jpeg_high_quality_close_to_clean(self):
        (hr,) = demo_hr_images(1, 32, 5)
        r_hi = DegradationRecipe(stages=(DegradationStage(jpeg_quality=(95, 95)),))
        r_lo = DegradationRecipe(stages=(DegradationStage(jpeg_quality=(5, 5)),))
        clean, _ = synth_pair(hr, identity_recipe(), 0, 1)
        hi, _ = synth_pair(hr, r_hi, 0, 1)
        lo, _ = synth_pair(hr, r_lo, 0, 1)
        err_hi = np.abs(hi.data - clean.data).mean()
        err_lo = np.abs(lo.data - clean.data).mean()
        assert err_hi < err_lo

    def test_output_range_and_dtype(self):
        (hr,) = demo_hr_images(1, 32, 5)
        lr, _ = synth_pair(hr, realesrgan_lite(), 0, 2)
        assert lr.data.dtype == np.float32
        assert lr.data.min() >= 0.0 and lr.data.max() <= 1.0

    def test_rejects_non_rgb(self):
        bad = Image(np.zeros((3, 16, 16), dtype=np.float32), space=YCBCR)
        with pytest.raises(DegradeError, match="RGB"):
            synth_pair(bad, identity_recipe(), 0, 0)

    def test_rejects_indivisible_dims(self):
        bad = Image(np.zeros((3, 18, 16), dtype=np.float32))
        with pytest.raises(DegradeError, match="divisible"):
            synth_pair(bad, identity_recipe(), 0, 0)


class TestDemoCorpus:
    def test_deterministic(self):
        a = demo_hr_images(3, 32, 7)
        b = demo_hr_images(3, 32, 7)
        for x, y in zip(a, b):
            assert np.array_equal(x.data, y.data)

    def test_images_differ_and_are_in_range(self):
        imgs = demo_hr_images(4, 32, 7)
        assert len(imgs) == 4
        for img in imgs:
            assert img.data.shape == (3, 32, 32)
            assert img.data.min() >= 0.0 and img.data.max() <= 1.0
        assert not np.array_equal(imgs[0].data, imgs[1].data)

    def test_validation(self):
        with pytest.raises(DegradeError):
            demo_hr_images(0, 32, 1)
        with pytest.raises(DegradeError):
            demo_hr_images(1, 20, 1)


class TestStageFamilies:
    def test_lite_has_all_four(self):
        assert stage_families(realesrgan_lite()) == ("blur", "rescale", "noise", "jpeg")

    def test_identity_has_none(self):
        assert stage_families(identity_recipe()) == ()

    def test_partial(self):
        r = DegradationRecipe(stages=(DegradationStage(jpeg_quality=(10, 20)),))
        assert stage_families(r) == ("jpeg",)
