"""Smoke tests for the python bindings.

Run with PYTHONPATH pointing at the built extension directory (ctest does
this) or after `pip install .`.
"""

import json

import numpy as np
import pytest

core = pytest.importorskip("_core") if __name__ == "__main__" else None
try:
    import _core as tf  # built-tree layout used by ctest
except ImportError:  # installed-package layout
    import toyfashion as tf


def spec(seed=0, size=16, h=32, w=32, face=False):
    return tf.default_dataset_spec(seed=seed, size=size, height=h, width=w, face_enabled=face)


def test_generate_sample_shapes_and_determinism():
    s = spec()
    a = tf.generate_sample(s, 3)
    b = tf.generate_sample(s, 3)
    assert a["image"].shape == (3, 32, 32)
    assert a["region_masks"].shape[0] == 4
    np.testing.assert_array_equal(a["image"], b["image"])
    assert a["attr_tokens"] == b["attr_tokens"]
    c = tf.generate_sample(s, 4)
    assert not np.array_equal(a["image"], c["image"])


def test_region_masks_disjoint_and_garment_consistent():
    s = spec(seed=5)
    d = tf.generate_sample(s, 0)
    masks = d["region_masks"]
    assert masks.sum(axis=0).max() <= 1.0
    gmask = d["garment_mask"][0] > 0
    assert (masks[:, gmask] == 0).all()
    np.testing.assert_array_equal(
        d["image"][:, gmask], d["garment_image"][:, gmask]
    )
    outside = ~gmask
    assert (d["garment_image"][:, outside] == 0).all()


def test_schedule_monotone_and_forward_noise_formula():
    sched = tf.make_schedule(T=200, beta_start=1e-4, beta_end=0.02)
    ab = sched["alpha_bars"]
    assert (np.diff(ab) < 0).all()
    np.testing.assert_allclose(ab, np.cumprod(1.0 - sched["betas"]), rtol=1e-12)

    x0 = np.random.default_rng(0).random((3, 8, 8))
    eps = np.random.default_rng(1).standard_normal((3, 8, 8))
    t = 120
    got = tf.forward_noise(x0, t, eps, T=200, beta_start=1e-4, beta_end=0.02)
    want = np.sqrt(ab[t]) * x0 + np.sqrt(1 - ab[t]) * eps
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_losses_match_numpy():
    rng = np.random.default_rng(2)
    a, b = rng.standard_normal((2, 4, 4)), rng.standard_normal((2, 4, 4))
    assert abs(tf.denoise_loss(a, b) - np.mean((a - b) ** 2)) <= 1e-12
    gt = (rng.random((2, 8, 8)) < 0.5).astype(float)
    pred = rng.random((2, 4, 4))
    got = tf.region_loss(pred, gt)
    resized = gt.reshape(2, 4, 2, 4, 2).mean(axis=(2, 4))
    assert abs(got - np.mean((pred - resized) ** 2)) <= 1e-12


def test_rada_degenerate_identities():
    rng = np.random.default_rng(3)
    f = rng.standard_normal((2, 5, 8))
    g = rng.standard_normal((2, 3, 8))
    attrs = [rng.standard_normal((2, 1, 8)) for _ in range(2)]

    zero = tf.rada_apply(f, g, attrs, np.zeros((2, 2, 5)), 7)
    np.testing.assert_array_equal(zero["rada"], zero["gca"])

    ones = tf.rada_apply(f, g, attrs[:1], np.ones((2, 1, 5)), 7)
    np.testing.assert_allclose(
        ones["rada"], ones["gca"] + ones["lca"][0], rtol=0, atol=1e-12
    )

    # composition against the returned branches under a random mask
    m = np.asarray(np.random.default_rng(4).random((2, 2, 5)))
    comp = tf.rada_apply(f, g, attrs, m, 7)
    want = comp["gca"] + sum(
        comp["lca"][i] * m[:, i, :, None] for i in range(2)
    )
    np.testing.assert_allclose(comp["rada"], want, rtol=0, atol=1e-9)


def test_resize_mask_constant_preserved():
    m = np.full((1, 4, 4), 0.3)
    out = tf.resize_mask(m, 7, 3)
    np.testing.assert_allclose(out, 0.3, rtol=0, atol=1e-12)
    assert out.shape == (1, 7, 3)


def test_attribute_accuracy_on_ground_truth():
    s = spec(seed=9)
    d = tf.generate_sample(s, 1)
    acc = tf.attribute_accuracy(d["image"], d["attr_tokens"], d["region_masks"])
    assert acc == 1.0


def test_stub_extraction_matches_tokens():
    s = spec(seed=11, face=True)
    d = tf.generate_sample(s, 2)
    bundle = tf.extract_stub(s, 2)
    assert bundle["stage_log"] == ["caption", "detect", "enhance", "extract"]
    spec_obj = json.loads(s)
    cats = [c["name"] for c in spec_obj["vocabulary"]]
    got = [bundle["attributes"][c] for c in cats]
    assert got == list(d["attr_tokens"])


def test_errors_surface_as_python_exceptions():
    with pytest.raises(tf.ToyFashionError):
        tf.generate_sample(spec(size=4), 99)
