import numpy as np
import pytest

from fairwin import data, fisher, model
from fairwin.data import Dataset
from fairwin.errors import ConfigError, DataError, InvariantError, ShapeError
from fairwin.fisher import FisherDiagonal
from fairwin.model import LossConfig


def toy_fixture(n=8, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, 4))
    y = np.array([1, -1] * (n // 2))
    s = np.array([1, 1, 2, 2] * (n // 4))
    return model.init_net([4, 5, 3, 2], seed=seed), Dataset(x, y, s)


def fd_fisher_oracle(net, ds, eps=1e-5, scale=1.0):
    """Loop samples, finite-difference each head weight, square, average."""
    w = net.layers[-1].weight
    total = np.zeros_like(w)
    cfg = LossConfig(scale=scale)
    for i in range(len(ds)):
        sample = (ds.x[i:i + 1], ds.y[i:i + 1])
        g = np.zeros_like(w)
        for idx in np.ndindex(w.shape):
            orig = w[idx]
            w[idx] = orig + eps
            up = model.loss_and_grad(net, sample, cfg)[0]
            w[idx] = orig - eps
            down = model.loss_and_grad(net, sample, cfg)[0]
            w[idx] = orig
            g[idx] = (up - down) / (2 * eps)
        total += g * g
    return total / len(ds)


def test_fisher_matches_finite_difference_oracle():
    net, ds = toy_fixture()
    np.testing.assert_allclose(fisher.empirical_fisher(net, ds), fd_fisher_oracle(net, ds), rtol=1e-4, atol=1e-12)


def test_single_sample_is_squared_gradient():
    net, ds = toy_fixture()
    one = ds.take([3])
    gw, _ = model.per_sample_grad_final_layer(net, one.x[0], one.y[0])
    np.testing.assert_allclose(fisher.empirical_fisher(net, one), gw ** 2, atol=1e-15)


def test_duplication_and_shuffle_invariance():
    net, ds = toy_fixture()
    base = fisher.empirical_fisher(net, ds)
    doubled = ds.take(np.concatenate([np.arange(len(ds))] * 2))
    np.testing.assert_allclose(fisher.empirical_fisher(net, doubled), base, rtol=1e-14)
    shuffled = ds.take(np.random.default_rng(1).permutation(len(ds)))
    np.testing.assert_allclose(fisher.empirical_fisher(net, shuffled), base, rtol=1e-14)


def test_loss_scale_squares():
    net, ds = toy_fixture()
    np.testing.assert_allclose(fisher.empirical_fisher(net, ds, loss_scale=2.0),
                               4.0 * fisher.empirical_fisher(net, ds), rtol=1e-14)
    np.testing.assert_allclose(fisher.empirical_fisher(net, ds, loss_scale=2.0),
                               fd_fisher_oracle(net, ds, scale=2.0), rtol=1e-4, atol=1e-12)


def test_fisher_non_negative_and_empty():
    net, ds = toy_fixture()
    assert np.all(fisher.empirical_fisher(net, ds) >= 0)
    with pytest.raises(DataError):
        fisher.empirical_fisher(net, ds.take([]))


# row importance

def test_row_importance_hand():
    assert fisher.row_importance([[1.0, 3.0], [0.0, 4.0]]).diag.tolist() == [2.0, 2.0]
    assert fisher.row_importance(np.zeros((3, 2))).diag.tolist() == [0.0, 0.0, 0.0]


def test_row_importance_loop_oracle():
    f = np.random.default_rng(0).uniform(size=(5, 3))
    oracle = [np.sqrt(sum(f[i, j] for j in range(3))) for i in range(5)]
    np.testing.assert_allclose(fisher.row_importance(f).diag, oracle, atol=1e-14, rtol=0)


def test_row_importance_negative():
    with pytest.raises(InvariantError):
        fisher.row_importance([[1.0, -0.1]])


def test_row_importance_monotone():
    rng = np.random.default_rng(3)
    f = rng.uniform(size=(4, 3))
    base = fisher.row_importance(f).diag
    for idx in np.ndindex(f.shape):
        g = f.copy()
        g[idx] += rng.uniform(0, 1)
        assert np.all(fisher.row_importance(g).diag >= base)


# neutralize / blend

def fd(v, tag="group1"):
    return FisherDiagonal(np.array(v, dtype=float), tag)


def test_neutralize_cases():
    a = fd([1.0, 2.0])
    np.testing.assert_array_equal(fisher.neutralize(a, a).diag, a.diag)
    out = fisher.neutralize(fd([2.0, 0.0]), fd([0.0, 2.0], "group2"))
    assert out.diag.tolist() == [1.0, 1.0] and out.group_tag == "neutralized"


def test_neutralize_symmetric_and_matches_blend():
    rng = np.random.default_rng(0)
    a, b = fd(rng.uniform(size=5)), fd(rng.uniform(size=5), "group2")
    np.testing.assert_array_equal(fisher.neutralize(a, b).diag, fisher.neutralize(b, a).diag)
    np.testing.assert_array_equal(fisher.neutralize(a, b).diag, fisher.blend(a, b, 0.5).diag)


def test_blend_values():
    np.testing.assert_allclose(fisher.blend(fd([1.0, 3.0]), fd([3.0, 1.0]), 0.7).diag, [1.6, 2.4])
    near = fisher.blend(fd([4.0, 4.0]), fd([0.0, 0.0]), 1 - 1e-9).diag
    np.testing.assert_allclose(near, [4.0, 4.0], atol=1e-8)


@pytest.mark.parametrize("alpha", [0.49, 1.0, -0.2])
def test_blend_alpha_range(alpha):
    with pytest.raises(ConfigError):
        fisher.blend(fd([1.0]), fd([1.0]), alpha)


def test_dim_mismatch():
    with pytest.raises(ShapeError):
        fisher.neutralize(fd([1.0]), fd([1.0, 2.0]))


def test_diagonal_invariants():
    with pytest.raises(InvariantError):
        FisherDiagonal(np.array([1.0, -1.0]))
    with pytest.raises(ConfigError):
        FisherDiagonal(np.array([1.0]), "other")


def test_floor():
    floored, n = fd([1.0, 0.0, 1e-12]).floored()
    assert n == 2 and floored.diag.tolist() == [1.0, 1e-8, 1e-8]


# heatmap export

def test_heatmap_export(tmp_path):
    net, ds = toy_fixture(n=16)
    g1, g2 = data.group_subset(ds, 1), data.group_subset(ds, 2)
    out = fisher.export_fisher_heatmap(net, g1, g2, tmp_path / "hm.csv", header_comment="provenance")
    lines = out.read_text().splitlines()
    assert lines[0] == "# provenance"
    assert lines[1] == "index,group1,group2,is_bias"
    rows = [l.split(",") for l in lines[2:]]
    d, k = net.layers[-1].weight.shape
    assert len(rows) == d * k + k
    assert sum(int(r[3]) for r in rows) == k
    np.testing.assert_array_equal([float(r[1]) for r in rows[: d * k]], fisher.empirical_fisher(net, g1).ravel())


def test_heatmap_groups_differ_on_biased_fixture():
    ds = data.synth_biased(5000, 10, 0.6, seed=0)
    net = model.init_net([10, 16, 8, 2], seed=0)
    net, _ = model.train(net, ds, lr=0.05, epochs=5, seed=0)
    rows = fisher.heatmap_rows(net, data.group_subset(ds, 1), data.group_subset(ds, 2))
    a = np.array([r[1] for r in rows if not r[3]])
    b = np.array([r[2] for r in rows if not r[3]])
    ranks = lambda v: np.argsort(np.argsort(v)).astype(float)
    rho = np.corrcoef(ranks(a), ranks(b))[0, 1]
    assert rho < 0.95
