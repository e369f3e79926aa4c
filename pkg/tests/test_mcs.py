import numpy as np
import pytest

from realrech import mcs
from realrech.mcs import BootstrapConfig, LossPanel, mcs_test, relative_losses


def _panel(k=3, n=300, shift=None, seed=0):
    rng = np.random.default_rng(seed)
    L = rng.standard_normal((k, n))
    if shift is not None:
        L[shift[0]] += shift[1]
    return LossPanel([f"m{i}" for i in range(k)], L)


def test_relative_losses():
    p = _panel(4, 60)
    d = relative_losses(p)
    np.testing.assert_array_equal(d, -np.transpose(d, (1, 0, 2)))
    assert np.all(d[np.arange(4), np.arange(4)] == 0)
    two = LossPanel(["a", "b"], np.vstack([np.full(60, 2.5), np.zeros(60)]))
    np.testing.assert_array_equal(relative_losses(two)[0, 1], 2.5)


def test_identical_rows_all_retained():
    row = np.random.default_rng(0).standard_normal(100)
    res = mcs_test(LossPanel(["a", "b", "c"], np.vstack([row, row, row])), 0.75, BootstrapConfig(n_boot=300))
    assert all(v == 1.0 for v in res.pvalues.values())
    assert res.ssm == ["a", "b", "c"]


def test_pvalue_invariants():
    res = mcs_test(_panel(5, 200, shift=(2, 0.3), seed=3), 0.75, BootstrapConfig(n_boot=500))
    ps = [res.pvalues[m] for m in res.elimination_order]
    assert ps == sorted(ps) and ps[-1] == 1.0
    assert all(0 <= p <= 1 for p in ps)


def test_large_shift_eliminated_first():
    res = mcs_test(_panel(3, 300, shift=(1, 5.0)), 0.75, BootstrapConfig(n_boot=500))
    assert res.elimination_order[0] == "m1" and res.pvalues["m1"] < 0.01
    assert "m1" not in res.ssm


def test_label_equivariance():
    p = _panel(4, 200, shift=(0, 0.2), seed=4)
    perm = [2, 0, 3, 1]
    q = LossPanel([p.models[i] for i in perm], p.losses[perm])
    cfg = BootstrapConfig(n_boot=400, seed=7)
    a, b = mcs_test(p, 0.75, cfg), mcs_test(q, 0.75, cfg)
    assert a.pvalues == b.pvalues and a.elimination_order == b.elimination_order


def test_duplicate_row_keeps_membership():
    p = _panel(3, 300, shift=(2, 1.0), seed=5)
    cfg = BootstrapConfig(n_boot=500, seed=1)
    before = mcs_test(p, 0.75, cfg)
    dup = LossPanel(p.models + ["m0_copy"], np.vstack([p.losses, p.losses[0]]))
    after = mcs_test(dup, 0.75, cfg)
    for m in p.models:
        assert (m in before.ssm) == (m in after.ssm)


def test_sq_statistic_runs():
    res = mcs_test(_panel(3, 200, shift=(0, 2.0)), 0.75, BootstrapConfig(n_boot=300, statistic="SQ"))
    assert res.elimination_order[0] == "m0"


def test_too_short_panel():
    with pytest.raises(ValueError):
        mcs_test(_panel(2, 40))


def test_block_layout_mean_length():
    rng = np.random.default_rng(0)
    starts, lengths = mcs._block_layout(500, 200, 10.0, rng)
    assert np.all(lengths.sum(axis=1) == 500)
    idx = mcs.stationary_bootstrap_indices(500, 200, 10.0, np.random.default_rng(1))
    new_blocks = np.mean(np.diff(idx, axis=1) % 500 != 1)
    n_blocks = np.mean((lengths > 0).sum(axis=1)) / 500
    assert new_blocks == pytest.approx(0.1, abs=0.01) and n_blocks == pytest.approx(0.1, abs=0.01)


def _direct_two_model_pvalue(d, n_boot, rng):
    """Bootstrap test of E[d] = 0 from explicit resampling indices."""
    n = d.size
    idx = mcs.stationary_bootstrap_indices(n, n_boot, 10.0, rng)
    means = d[idx].mean(axis=1)
    se = np.sqrt(np.mean((means - d.mean()) ** 2))
    t = abs(d.mean()) / se
    tb = np.abs(means - d.mean()) / se
    return float(np.mean(tb >= t))


def test_two_models_reduce_to_direct_test():
    agree = 0
    n_panels = 1000
    for k in range(n_panels):
        rng = np.random.default_rng([11, k])
        L = rng.standard_normal((2, 120))
        L[1] += rng.uniform(0, 0.4)
        p_mcs = min(mcs_test(LossPanel(["a", "b"], L), 0.75, BootstrapConfig(n_boot=1000, seed=k)).pvalues.values())
        p_dir = _direct_two_model_pvalue(L[0] - L[1], 1000, np.random.default_rng([12, k]))
        agree += (p_mcs < 0.25) == (p_dir < 0.25)
    assert agree / n_panels >= 0.95


def test_loss_panel_csv(tmp_path):
    (tmp_path / "l.csv").write_text("date,a,b\n" + "".join(f"d{i},{i * 0.1},{i * 0.2}\n" for i in range(60)))
    p = LossPanel.from_csv(tmp_path / "l.csv")
    assert p.models == ["a", "b"] and p.losses.shape == (2, 60)


def test_aggregate_and_table():
    r1 = mcs.McsResult(["a", "b"], {"a": 1.0, "b": 0.1}, ["b", "a"], 0.75)
    r2 = mcs.McsResult(["a", "b"], {"a": 0.5, "b": 1.0}, ["a", "b"], 0.75)
    agg = mcs.aggregate([r1, r2])
    assert agg == {"a": {"included": 2, "mean_p": 0.75}, "b": {"included": 1, "mean_p": 0.55}}
    txt = mcs.format_table({"pps": agg}, ["a", "b"], "config x  seed 0")
    assert "2 (0.75)" in txt and "1 (0.55)" in txt
