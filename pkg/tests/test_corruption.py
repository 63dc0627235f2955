import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from taillight import corruption as cr
from taillight.dataset_io import Provenance, load_image
from taillight.toy import reference_images

from make_golden import GOLDEN_DIR, golden_cases, golden_name


@pytest.fixture(scope="module")
def reference_set():
    return reference_images()


def mean_l2(images, kind, severity, seed=0):
    dists = []
    for img in images:
        out = cr.apply_corruption(img, cr.CorruptionSpec(kind, severity, seed)).image
        dists.append(np.linalg.norm(out.astype(np.float64) - img))
    return float(np.mean(dists))


class TestPartition:
    def test_train(self):
        assert {k.name for k in cr.corruption_partition("train")} == {
            "rain_blur", "snow", "fog", "alpha_blend", "frosted_glass_blur", "lens_defect", "jpeg"}

    def test_test(self):
        assert {k.name for k in cr.corruption_partition("test")} == {
            "zoom_blur", "frost", "contrast", "rain_drop", "shot_noise", "pixelate"}

    def test_disjoint_and_complete(self):
        train = {k.name for k in cr.corruption_partition("train")}
        test = {k.name for k in cr.corruption_partition("test")}
        assert not train & test and len(train | test) == 13

    def test_bad_partition(self):
        with pytest.raises(ValueError):
            cr.corruption_partition("holdout")


class TestSeverityTable:
    def test_pixelate(self):
        assert cr.severity_params("pixelate", "mild")["block_size"] == 4
        assert cr.severity_params("pixelate", "severe")["block_size"] == 16

    def test_jpeg(self):
        assert cr.severity_params("jpeg", "mild")["quality"] == 25
        assert cr.severity_params("jpeg", cr.Severity.SEVERE)["quality"] == 7

    def test_fog_ordering(self):
        s = [cr.severity_params("fog", lv)["strength"] for lv in cr.Severity]
        assert s[0] < s[1] < s[2]

    def test_levels_ordered(self):
        assert cr.Severity.MILD < cr.Severity.MODERATE < cr.Severity.SEVERE
        assert [s.label for s in cr.Severity] == ["mild", "moderate", "severe"]

    def test_unknown(self):
        with pytest.raises(cr.UnknownCorruption):
            cr.severity_params("hail", "mild")
        with pytest.raises(cr.UnknownCorruption):
            cr.CorruptionSpec("hail", "mild")
        with pytest.raises(ValueError):
            cr.Severity.parse("extreme")


@pytest.mark.parametrize("case", list(golden_cases()),
                         ids=lambda c: golden_name(c[0], c[2].kind, c[2].severity))
def test_golden(case):
    index, image, spec = case
    want = load_image(GOLDEN_DIR / golden_name(index, spec.kind, spec.severity))
    assert np.array_equal(cr.apply_corruption(image, spec).image, want)


def test_golden_inputs_frozen():
    for i, img in enumerate(reference_images()[:3]):
        assert np.array_equal(load_image(GOLDEN_DIR / f"ref{i}.png"), img)


@pytest.mark.parametrize("kind", cr.ALL_KINDS)
def test_severity_monotone(kind, reference_set):
    d = [mean_l2(reference_set, kind, sev) for sev in cr.Severity]
    assert d[0] < d[1] < d[2], d


class TestExamples:
    def test_pixelate_block_one_is_identity(self):
        img = reference_images(1)[0]
        spec = cr.CorruptionSpec("pixelate", "mild", params={"block_size": 1})
        assert np.array_equal(cr.apply_corruption(img, spec).image, img)

    @pytest.mark.parametrize("severity", list(cr.Severity))
    def test_shot_noise_mean(self, severity):
        img = np.full((100, 100, 3), 128, np.uint8)
        out = cr.apply_corruption(img, cr.CorruptionSpec("shot_noise", severity, seed=3)).image
        assert abs(out.mean() - 128) <= 0.02 * 128

    def test_contrast_fixes_constant(self):
        img = np.full((20, 30, 3), (90, 140, 200), np.uint8)
        out = cr.apply_corruption(img, cr.CorruptionSpec("contrast", "severe")).image
        assert np.array_equal(out, img)

    def test_pixelate_block_means(self):
        img = np.arange(8 * 8 * 3, dtype=np.uint8).reshape(8, 8, 3)
        out = cr.apply_corruption(img, cr.CorruptionSpec("pixelate", "mild")).image
        for by in range(2):
            for bx in range(2):
                block = img[4 * by:4 * by + 4, 4 * bx:4 * bx + 4].astype(np.float64)
                want = np.floor(block.mean((0, 1)) + 0.5)
                assert np.array_equal(out[4 * by, 4 * bx], want)

    def test_jpeg_is_real_round_trip(self):
        import io
        from PIL import Image
        img = reference_images(2)[1]
        buf = io.BytesIO()
        Image.fromarray(img).save(buf, format="JPEG", quality=25)
        want = np.asarray(Image.open(buf).convert("RGB"))
        got = cr.apply_corruption(img, cr.CorruptionSpec("jpeg", "mild")).image
        assert np.abs(got.astype(int) - want).max() <= 1


class TestContract:
    def test_provenance(self):
        img = reference_images(1)[0]
        roi = cr.apply_corruption(img, cr.CorruptionSpec("snow", "moderate", seed=42),
                                  Provenance(night=True))
        assert roi.provenance.tag == "night+snow:moderate:42"

    def test_filename(self):
        spec = cr.CorruptionSpec("fog", "severe", seed=9)
        assert cr.provenance_filename("car1", spec) == "car1__fog__severe__9.png"

    def test_seed_changes_stochastic_output(self):
        img = reference_images(1)[0]
        a = cr.apply_corruption(img, cr.CorruptionSpec("shot_noise", "mild", seed=1)).image
        b = cr.apply_corruption(img, cr.CorruptionSpec("shot_noise", "mild", seed=2)).image
        assert not np.array_equal(a, b)

    def test_no_global_rng(self):
        img = reference_images(1)[0]
        spec = cr.CorruptionSpec("rain_drop", "severe", seed=5)
        np.random.seed(0)
        a = cr.apply_corruption(img, spec).image
        np.random.seed(1)
        b = cr.apply_corruption(img, spec).image
        assert np.array_equal(a, b)

    def test_empty_image(self):
        with pytest.raises(ValueError):
            cr.apply_corruption(np.zeros((0, 4, 3), np.uint8), cr.CorruptionSpec("fog", "mild"))

    def test_resolve_kinds(self):
        assert cr.resolve_kinds("test") == cr.TEST_KINDS
        assert cr.resolve_kinds("all") == cr.ALL_KINDS
        assert cr.resolve_kinds("fog, jpeg") == ("fog", "jpeg")
        with pytest.raises(cr.UnknownCorruption):
            cr.resolve_kinds("fog,hail")

    def test_resolve_severities(self):
        assert cr.resolve_severities("all") == tuple(cr.Severity)
        assert cr.resolve_severities("severe,mild") == (cr.Severity.SEVERE, cr.Severity.MILD)


@settings(max_examples=25)
@given(st.sampled_from(cr.ALL_KINDS), st.sampled_from(list(cr.Severity)),
       st.integers(1, 40), st.integers(1, 40), st.integers(0, 2 ** 32))
def test_shape_and_determinism(kind, severity, h, w, seed):
    img = np.random.default_rng(seed).integers(0, 256, (h, w, 3), dtype=np.uint8)
    spec = cr.CorruptionSpec(kind, severity, seed)
    a = cr.apply_corruption(img, spec).image
    b = cr.apply_corruption(img, spec).image
    assert a.shape == img.shape and a.dtype == np.uint8
    assert np.array_equal(a, b)
