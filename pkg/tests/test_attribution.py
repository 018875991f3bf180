import csv

import numpy as np
import pytest

from freqlens.attribution import (
    AttributionProfile,
    attribution_profile,
    band_share,
    class_average_profiles,
    grouped_profiles_to_csv,
    low_band_cutoff,
    occlude_level,
    of_score,
    profile_to_csv,
)
from freqlens.model import ConvNet
from freqlens.spectral import dct2_forward, dct2_inverse, level_map


def test_occlude_constant_dc_gives_zero():
    img = np.full((3, 5, 5), 0.4)
    np.testing.assert_allclose(occlude_level(img, 0), 0.0, atol=1e-12)


def test_occlude_empty_level_is_identity():
    rng = np.random.default_rng(0)
    spec = dct2_forward(rng.random((2, 6, 6)))
    spec[:, level_map(6, 6) == 4] = 0.0
    img = dct2_inverse(spec)
    np.testing.assert_allclose(occlude_level(img, 4), img, atol=1e-10)
    np.testing.assert_allclose(occlude_level(img, 4, "random"), img, atol=1e-10)


def test_occlude_touches_only_its_level():
    img = np.random.default_rng(1).random((1, 6, 6))
    out = occlude_level(img, 3, "random", np.random.default_rng(2))
    diff = np.abs(dct2_forward(out) - dct2_forward(img))[0]
    assert np.all(diff[level_map(6, 6) != 3] < 1e-10)
    assert diff[level_map(6, 6) == 3].max() > 0


def test_occlude_is_not_clamped():
    img = np.zeros((1, 4, 4))
    img[0, 0, 0] = 1.0
    out = occlude_level(img, 0)
    assert out.min() < 0


def test_occlude_level_range():
    with pytest.raises(ValueError):
        occlude_level(np.zeros((1, 4, 4)), 7)
    with pytest.raises(ValueError):
        occlude_level(np.zeros((1, 4, 4)), 0, baseline="noise")


def test_empty_level_scores_zero(small_net):
    spec = dct2_forward(np.random.default_rng(3).random((1, 8, 8)))
    spec[:, level_map(8, 8) == 5] = 0.0
    img = dct2_inverse(spec)
    assert abs(of_score(small_net, img, 1, 5)) < 1e-8


def test_input_ignoring_net_scores_zero(small_net, small_images):
    net = small_net.copy()
    net.params["conv1_w"][:] = 0.0
    prof = attribution_profile(net, small_images[0], 2)
    assert prof.scores.shape == (15,)
    assert np.all(np.abs(prof.scores) < 1e-12)


def test_profile_matches_single_scores(small_net, small_images):
    img = small_images[1]
    prof = attribution_profile(small_net, img, 0)
    single = [of_score(small_net, img, 0, level) for level in range(15)]
    np.testing.assert_allclose(prof.scores, single, atol=1e-12)
    again = attribution_profile(small_net, img, 0)
    assert np.array_equal(prof.scores, again.scores)


def test_profile_by_hand(small_net, small_images):
    img = small_images[2]
    spec = dct2_forward(img)
    spec[:, level_map(8, 8) == 2] = 0.0
    logits_clean = small_net.forward_logits(img)
    logits_occ = small_net.forward_logits(dct2_inverse(spec))
    assert of_score(small_net, img, 1, 2) == pytest.approx(logits_clean[1] - logits_occ[1], abs=1e-12)


def test_random_baseline_is_seeded(small_net, small_images):
    a = attribution_profile(small_net, small_images[0], 1, "random", seed=4)
    b = attribution_profile(small_net, small_images[0], 1, "random", seed=4)
    c = attribution_profile(small_net, small_images[0], 1, "random", seed=5)
    assert np.array_equal(a.scores, b.scores)
    assert not np.array_equal(a.scores, c.scores)


def test_relabeling_other_classes_leaves_profile(small_net, small_images):
    img = small_images[3]
    permuted = small_net.copy()
    # swap the output units of classes 1 and 2; class 0 is untouched
    for name in ("fc_w", "fc_b"):
        p = permuted.params[name]
        p[..., [1, 2]] = p[..., [2, 1]]
    a = attribution_profile(small_net, img, 0).scores
    b = attribution_profile(permuted, img, 0).scores
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_no_completeness(small_net, small_images):
    # the level scores need not add up to the drop caused by removing everything
    img = small_images[4]
    total_drop = small_net.forward_logits(img)[0] - small_net.forward_logits(np.zeros_like(img))[0]
    summed = attribution_profile(small_net, img, 0).scores.sum()
    assert abs(summed - total_drop) > 1e-3


def test_class_average(small_net, small_images):
    labels = np.array([0, 1, 2, 0, 1, 2])
    avg = class_average_profiles(small_net, small_images, labels)
    assert set(avg) == {0, 1, 2} and avg[0].n_samples == 2
    expected = np.mean([attribution_profile(small_net, small_images[i], 0).scores for i in (0, 3)], axis=0)
    np.testing.assert_allclose(avg[0].scores, expected, atol=1e-12)
    one = class_average_profiles(small_net, small_images[:3], labels[:3])
    np.testing.assert_allclose(one[1].scores, attribution_profile(small_net, small_images[1], 1).scores)
    assert one[1].subject == "image"
    doubled = class_average_profiles(small_net, np.concatenate([small_images] * 2), np.tile(labels, 2))
    for c in range(3):
        np.testing.assert_allclose(doubled[c].scores, avg[c].scores, atol=1e-12)
    with pytest.raises(ValueError):
        class_average_profiles(small_net, small_images, labels, classes=[0, 5])


def test_invalid_class(small_net, small_images):
    with pytest.raises(ValueError):
        of_score(small_net, small_images[0], 3, 0)
    with pytest.raises(ValueError):
        attribution_profile(small_net, small_images[0], -1)


def test_band_share():
    assert low_band_cutoff(8, 8) == pytest.approx(5.0)
    s = np.array([1.0, -1.0, 0.0, 2.0])
    assert band_share(s, 2) == pytest.approx(0.5)
    assert band_share(np.zeros(4), 2) == 0.0


def test_csv_exports(tmp_path):
    p = AttributionProfile(np.array([0.5, -0.25, 0.125]), 1, "zero")
    profile_to_csv(p, tmp_path / "p.csv")
    rows = list(csv.reader(open(tmp_path / "p.csv")))
    assert rows[0] == ["level", "score"] and float(rows[2][1]) == -0.25
    q = AttributionProfile(np.array([1.0, 2.0, 3.0]), 1, "zero", 4)
    grouped_profiles_to_csv({"standard": {1: p}, "robust": {1: q}}, tmp_path / "g.csv", class_names=["a", "b"])
    rows = list(csv.reader(open(tmp_path / "g.csv")))
    assert rows[0] == ["class", "level", "standard", "robust"]
    assert rows[1] == ["b", "0", "0.5", "1.0"] and len(rows) == 4


def test_class_average_threads_agree(small_net, small_images):
    labels = np.array([0, 1, 2, 0, 1, 2])
    a = class_average_profiles(small_net, small_images, labels, "random", seed=3)
    b = class_average_profiles(small_net, small_images, labels, "random", seed=3, threads=3)
    for c in a:
        assert np.array_equal(a[c].scores, b[c].scores)
