import numpy as np
import pytest

import oracles
from randgen import random_binary_mask, random_features, rng_for
from ssmatch.losses import (
    episode_losses,
    gradient_check,
    loss_grad_query,
    loss_matching,
    loss_self,
    loss_total,
    numerical_grad_query,
)
from ssmatch.pipeline import (
    ABLATION_FULL,
    ABLATION_NO_ASBP,
    ABLATION_NO_SSL,
    ABLATION_NO_SSM,
    SspConfig,
    match_episode,
)
from ssmatch.tensor_core import (
    MASK_BINARY,
    Mask,
    Prototype,
    PrototypeField,
)


def random_loss_case(case, c=3, h=4, w=4, field_bg=False):
    rng = rng_for(case, tag=70)
    query = random_features(rng, c, h, w)
    gt = random_binary_mask(rng, h, w)
    fg = Prototype((rng.standard_normal(c) + 0.2).astype(np.float32))
    if field_bg:
        bg = PrototypeField(
            (rng.standard_normal((c, h, w)) + 0.1).astype(np.float32), "background")
    else:
        bg = Prototype((rng.standard_normal(c) - 0.2).astype(np.float32), "background")
    return fg, bg, query, gt


# ---------------------------------------------------------------------------
# forward losses


def test_loss_matching_matches_oracle_vector_bg():
    for case in range(40):
        fg, bg, query, gt = random_loss_case(case)
        got = loss_matching(fg, bg, query, gt)
        want = oracles.naive_loss_matching(fg.values, bg.values, query.data, gt.data)
        assert abs(got - want) / max(abs(want), 1.0) < 1e-5


def test_loss_matching_matches_oracle_field_bg():
    for case in range(40):
        fg, bg, query, gt = random_loss_case(case, field_bg=True)
        got = loss_matching(fg, bg, query, gt)
        want = oracles.naive_loss_matching(fg.values, bg.values, query.data, gt.data)
        assert abs(got - want) / max(abs(want), 1.0) < 1e-5


def test_loss_matching_temperature_scales_logits():
    fg, bg, query, gt = random_loss_case(7)
    cold = loss_matching(fg, bg, query, gt, temperature=0.2)
    want = oracles.naive_loss_matching(fg.values, bg.values, query.data, gt.data,
                                       temperature=0.2)
    assert abs(cold - want) < 1e-8


def test_loss_matching_perfect_separation_is_small():
    # fg pixels exactly along the fg prototype, bg pixels along bg
    fg_dir = np.array([1.0, 0.0, 0.0], dtype=np.float32)
    bg_dir = np.array([0.0, 1.0, 0.0], dtype=np.float32)
    data = np.zeros((3, 2, 2), dtype=np.float32)
    data[:, 0, :] = fg_dir[:, None]
    data[:, 1, :] = bg_dir[:, None]
    gt = Mask(np.array([[1, 1], [0, 0]], dtype=np.float32), MASK_BINARY)
    from ssmatch.tensor_core import FeatureMap
    sep = loss_matching(Prototype(fg_dir), Prototype(bg_dir, "background"),
                        FeatureMap(data), gt, temperature=10.0)
    swapped = loss_matching(Prototype(bg_dir), Prototype(fg_dir, "background"),
                            FeatureMap(data), gt, temperature=10.0)
    assert sep < 1e-4 < 1.0 < swapped


def test_loss_self_delegates_to_matching():
    fg, bg, query, gt = random_loss_case(8)
    assert loss_self(fg, bg, query, gt) == loss_matching(fg, bg, query, gt)


def test_loss_total_weighting():
    cfg = SspConfig(lambda1=1.0, lambda2=1.0, lambda3=0.2)
    assert abs(loss_total(0.5, 0.25, 1.0, cfg) - (0.5 + 0.25 + 0.2)) < 1e-12


def test_loss_matching_rejects_probability_target():
    fg, bg, query, _ = random_loss_case(9)
    prob = Mask(np.full(query.spatial, 0.5, dtype=np.float32), "probability")
    with pytest.raises(ValueError):
        loss_matching(fg, bg, query, prob)


# ---------------------------------------------------------------------------
# gradients


def test_analytic_gradient_matches_independent_fd_oracle():
    # tiny shapes keep the quadratic-cost naive oracle affordable
    for case in range(4):
        fg, bg, query, gt = random_loss_case(case, c=2, h=2, w=3,
                                             field_bg=(case % 2 == 0))
        got = loss_grad_query(fg, bg, query, gt)
        want = oracles.naive_fd_grad(fg.values, bg.values, query.data, gt.data)
        denom = np.maximum(np.maximum(np.abs(got), np.abs(want)), 1e-6)
        mask = (np.abs(got) >= 1e-6) | (np.abs(want) >= 1e-6)
        assert np.max((np.abs(got - want) / denom)[mask]) < 1e-3


def test_analytic_gradient_matches_library_fd_many_cases():
    for case in range(12):
        fg, bg, query, gt = random_loss_case(case + 100, field_bg=(case % 2 == 0))
        got = loss_grad_query(fg, bg, query, gt)
        want = numerical_grad_query(fg, bg, query, gt)
        denom = np.maximum(np.maximum(np.abs(got), np.abs(want)), 1e-6)
        mask = (np.abs(got) >= 1e-6) | (np.abs(want) >= 1e-6)
        assert np.max((np.abs(got - want) / denom)[mask]) < 1e-3


def test_gradient_zero_pixel_is_finite():
    fg, bg, query, gt = random_loss_case(11, c=2, h=2, w=2)
    data = query.data.copy()
    data[:, 0, 0] = 0.0
    from ssmatch.tensor_core import FeatureMap
    grad = loss_grad_query(fg, bg, FeatureMap(data), gt)
    assert np.all(np.isfinite(grad))


def test_gradient_check_report():
    res = gradient_check(cases=20, shape=(3, 4, 4), seed=0)
    assert res["passed"] is True
    assert res["cases"] == 20
    assert res["max_rel_error"] < res["rel_tol"] == 1e-3
    assert res["components_checked"] > 0


def test_gradient_check_deterministic():
    a = gradient_check(cases=5, seed=42)
    b = gradient_check(cases=5, seed=42)
    assert a == b


# ---------------------------------------------------------------------------
# episode losses


def test_episode_losses_full_has_all_members(suite40, default_cfg):
    ep = suite40[5]
    res = match_episode(ep.supports, ep.query, default_cfg)
    losses = episode_losses(ep.supports, ep.query, ep.query_gt, res, default_cfg)
    assert set(losses) == {"matching", "query_self", "support_self", "total"}
    assert losses["matching"] > 0.0
    assert losses["support_self"] > 0.0
    if losses["query_self"] is not None:
        want = (default_cfg.lambda1 * losses["matching"]
                + default_cfg.lambda2 * losses["query_self"]
                + default_cfg.lambda3 * losses["support_self"])
        assert abs(losses["total"] - want) < 1e-9


def test_episode_losses_no_ssm_nulls_self_terms(suite40, default_cfg):
    ep = suite40[6]
    res = match_episode(ep.supports, ep.query, default_cfg, ablation=ABLATION_NO_SSM)
    losses = episode_losses(ep.supports, ep.query, ep.query_gt, res, default_cfg,
                            ablation=ABLATION_NO_SSM)
    assert losses["query_self"] is None and losses["support_self"] is None
    assert abs(losses["total"] - default_cfg.lambda1 * losses["matching"]) < 1e-12


def test_episode_losses_no_ssl_metrics_nulls_self_terms(suite40, default_cfg):
    ep = suite40[7]
    res = match_episode(ep.supports, ep.query, default_cfg, ablation=ABLATION_NO_SSL)
    losses = episode_losses(ep.supports, ep.query, ep.query_gt, res, default_cfg,
                            ablation=ABLATION_NO_SSL)
    assert losses["query_self"] is None and losses["support_self"] is None
    full = match_episode(ep.supports, ep.query, default_cfg)
    full_losses = episode_losses(ep.supports, ep.query, ep.query_gt, full, default_cfg)
    assert losses["matching"] == full_losses["matching"]


def test_episode_losses_no_asbp_differs_from_full(suite40, default_cfg):
    ep = suite40[8]
    full = match_episode(ep.supports, ep.query, default_cfg)
    noasbp = match_episode(ep.supports, ep.query, default_cfg,
                           ablation=ABLATION_NO_ASBP)
    lf = episode_losses(ep.supports, ep.query, ep.query_gt, full, default_cfg)
    ln = episode_losses(ep.supports, ep.query, ep.query_gt, noasbp, default_cfg,
                        ablation=ABLATION_NO_ASBP)
    assert lf["matching"] != ln["matching"]
