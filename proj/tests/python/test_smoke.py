import numpy as np
import pytest

import e2pn


def test_group_info():
    info = e2pn.group_info("icosa")
    assert info["order"] == 60
    assert info["num_anchors"] == 12
    assert info["stabilizer_order"] == 5
    assert info["element_order_histogram"] == {1: 1, 2: 15, 3: 20, 5: 24}
    assert e2pn.group_info("tetra")["order"] == 12
    assert e2pn.group_info("octa")["order"] == 24


def test_tables_are_consistent():
    t = e2pn.group_tables("icosa")
    R, cayley, perm, anchors = t["elements"], t["cayley"], t["perm"], t["anchors"]
    i, j = np.meshgrid(np.arange(60), np.arange(60), indexing="ij")
    np.testing.assert_allclose(R[cayley], R[i] @ R[j], atol=1e-12)
    # perm[g][a] indexes R_g anchors[a].
    np.testing.assert_allclose(np.einsum("gij,aj->gai", R, anchors), anchors[perm], atol=1e-12)
    assert len({tuple(row) for row in perm}) == 60
    np.testing.assert_array_equal(perm[cayley], np.take_along_axis(perm[i], perm[j], axis=-1))


def test_kernel_orbits():
    k = e2pn.kernel_tables("icosa", 0.25)
    assert k["points"].shape == (13, 3)
    assert k["num_orbits"] == 36
    sizes = np.bincount(k["orbit_of"].ravel())
    assert sorted(sizes.tolist()) == [1] * 6 + [5] * 30


def test_fast_and_naive_conv_agree():
    rng = np.random.default_rng(0)
    pos = rng.uniform(-0.5, 0.5, size=(64, 3))
    feat = rng.normal(size=(64, 12, 4))
    w = rng.normal(size=(36, 4, 8))
    fast, fs = e2pn.conv(pos, feat, w, radius=0.4, sigma=0.264, kernel_radius=0.264, mode="fast")
    naive, ns = e2pn.conv(pos, feat, w, radius=0.4, sigma=0.264, kernel_radius=0.264, mode="naive")
    assert fast.shape == (64, 12, 8)
    assert np.abs(fast - naive).max() < 1e-10
    assert fs["locations_per_center"] == 13
    assert ns["locations_per_center"] == 156


def test_conv_rejects_bad_weights():
    with pytest.raises(e2pn.Error):
        e2pn.conv(np.zeros((4, 3)), np.zeros((4, 12, 2)), np.zeros((35, 2, 2)), 0.4, 0.2, 0.2)


def test_permutation_expand_rows():
    x = np.random.default_rng(1).normal(size=(2, 12, 3))
    out = e2pn.permutation_expand(x)
    assert out.shape == (2, 60, 36)
    perm = e2pn.group_tables()["perm"]
    np.testing.assert_array_equal(out[:, 7].reshape(2, 12, 3), x[:, perm[7]])


def test_synth_is_deterministic():
    a = e2pn.synth_shape("cube", 256, 0.01, 7)
    b = e2pn.synth_shape("cube", 256, 0.01, 7)
    assert a.shape == (256, 3)
    np.testing.assert_array_equal(a, b)


def test_checks_pass_on_defaults():
    results = e2pn.run_checks("[check]\ntrials = 2\n")
    assert len(results) >= 10
    assert all(r["passed"] for r in results), [r for r in results if not r["passed"]]
