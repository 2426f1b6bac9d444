import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from mecchain.reputation import (Attacker, BaseStationProfile, Discount, EmptyCommitteeError,
                                 FeedbackBatch, HistoryNorm, MinerPolicy, NoFeedbackError,
                                 ReputationConfig, dos_inference, elect_committee,
                                 generate_feedback, historical_reputation, make_profiles,
                                 miner_hit_probability, reputation_rows, select_miner,
                                 update_reputation)


def _profiles(reps):
    return [BaseStationProfile(id=i, reputation_history=[x]) for i, x in enumerate(reps)]


# feedback generation

def test_honest_users_served_report_zero():
    b = generate_feedback(True, 50, 0.0, np.random.default_rng(0), truth_likelihood=1.0)
    assert b.entries == (0,) * 50


def test_all_malicious_invert():
    b = generate_feedback(True, 50, 1.0, np.random.default_rng(0), truth_likelihood=1.0)
    assert b.entries == (1,) * 50


def test_malicious_share_matches_fraction():
    b = generate_feedback(True, 10_000, 0.3, np.random.default_rng(1), truth_likelihood=1.0)
    assert abs(np.mean(b.entries) - 0.3) < 0.02


def test_no_users_no_feedback():
    assert len(generate_feedback(False, 0, 0.2, np.random.default_rng(0))) == 0


def test_bad_fraction_rejected():
    with pytest.raises(ValueError):
        generate_feedback(True, 3, 1.5, np.random.default_rng(0))


# Bayesian inference

def test_inference_single_served_report():
    cfg = ReputationConfig(prior_served=0.8, truth_likelihood=0.9)
    # 0.8*0.9 / (0.8*0.9 + 0.2*0.1)
    assert dos_inference(FeedbackBatch(0, (0,)), cfg) == pytest.approx(0.72 / 0.74, rel=1e-12)


def test_inference_two_denial_reports():
    cfg = ReputationConfig(prior_served=0.8, truth_likelihood=0.9)
    # 0.8*0.01 / (0.8*0.01 + 0.2*0.81)
    assert dos_inference(FeedbackBatch(0, (1, 1)), cfg) == pytest.approx(0.008 / 0.170, rel=1e-12)


@pytest.mark.parametrize("entries", [(0,), (1,), (0, 1, 1), (1,) * 40])
def test_uninformative_likelihood_returns_prior(entries):
    cfg = ReputationConfig(prior_served=0.8, truth_likelihood=0.5)
    assert dos_inference(entries, cfg) == pytest.approx(0.8, rel=1e-12)


def test_empty_batch_is_an_error():
    with pytest.raises(NoFeedbackError, match="no-feedback"):
        dos_inference(FeedbackBatch(0, ()), ReputationConfig())


def test_large_batches_do_not_underflow():
    cfg = ReputationConfig()
    served = dos_inference((0,) * 600 + (1,) * 400, cfg)
    denied = dos_inference((0,) * 400 + (1,) * 600, cfg)
    assert served == pytest.approx(1.0) and denied == pytest.approx(0.0, abs=1e-12)
    assert 0.0 <= denied <= served <= 1.0


@settings(max_examples=60, deadline=None)
@given(entries=st.lists(st.integers(0, 1), min_size=1, max_size=40), seed=st.integers(0, 1000))
def test_inference_permutation_invariant(entries, seed):
    cfg = ReputationConfig()
    shuffled = list(np.random.default_rng(seed).permutation(entries))
    assert dos_inference(entries, cfg) == pytest.approx(dos_inference(shuffled, cfg), rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(entries=st.lists(st.integers(0, 1), min_size=1, max_size=40),
       p=st.floats(0.51, 0.99), prior=st.floats(0.01, 0.99))
def test_inference_monotone_in_new_reports(entries, p, prior):
    cfg = ReputationConfig(prior_served=prior, truth_likelihood=p)
    base = dos_inference(entries, cfg)
    assert dos_inference(entries + [0], cfg) >= base - 1e-15
    assert dos_inference(entries + [1], cfg) <= base + 1e-15


# reputation update

def test_no_feedback_keeps_previous_value():
    prof = BaseStationProfile(id=0, reputation_history=[0.9, 0.7])
    assert update_reputation(prof, FeedbackBatch(0, ()), ReputationConfig()) == 0.7
    assert update_reputation(prof, None, ReputationConfig()) == 0.7


def test_weighted_blend_of_inference_and_history():
    # prior 0.5 and one report of each kind gives inference exactly 0.5
    cfg = ReputationConfig(prior_served=0.5, weight_inference=0.2)
    prof = BaseStationProfile(id=0, reputation_history=[1.0])
    assert dos_inference((0, 1), cfg) == pytest.approx(0.5)
    assert update_reputation(prof, FeedbackBatch(0, (0, 1)), cfg) == pytest.approx(0.9, rel=1e-12)


def test_literal_history_single_lag_exp():
    cfg = ReputationConfig(truth_likelihood=1.0, weight_inference=0.2, history_window=1,
                           discount=Discount.EXP, history_norm=HistoryNorm.LITERAL)
    prof = BaseStationProfile(id=0, history_window=1, reputation_history=[1.0])
    got = update_reputation(prof, FeedbackBatch(0, (0,)), cfg)
    assert got == pytest.approx(0.2 + 0.8 * math.exp(-1), rel=1e-12)
    assert got == pytest.approx(0.49430, abs=5e-6)


@pytest.mark.parametrize("discount, weights", [
    (Discount.EXP, [math.exp(-1), math.exp(-2), math.exp(-3)]),
    (Discount.HALF, [0.5, 0.25, 0.125]),
    (Discount.INV, [1.0, 0.5, 1 / 3]),
])
def test_history_discounts(discount, weights):
    hist = [0.2, 0.5, 0.9]  # oldest first; 0.9 is lag 1
    lagged = [0.9, 0.5, 0.2]
    lit = ReputationConfig(history_window=3, discount=discount, history_norm="LITERAL")
    norm = ReputationConfig(history_window=3, discount=discount, history_norm="NORMALIZED")
    dot = sum(w * x for w, x in zip(weights, lagged))
    assert historical_reputation(hist, lit) == pytest.approx(dot / 3)
    assert historical_reputation(hist, norm) == pytest.approx(dot / sum(weights))


@settings(max_examples=40, deadline=None)
@given(batches=st.lists(st.lists(st.integers(0, 1), max_size=30), min_size=1, max_size=30),
       norm=st.sampled_from(list(HistoryNorm)), disc=st.sampled_from(list(Discount)),
       w=st.floats(0, 1))
def test_reputation_stays_in_unit_interval(batches, norm, disc, w):
    cfg = ReputationConfig(weight_inference=w, discount=disc, history_norm=norm)
    prof = BaseStationProfile(id=0, history_window=cfg.history_window)
    for t, b in enumerate(batches):
        x = update_reputation(prof, FeedbackBatch(0, tuple(b), t), cfg, t)
        assert 0.0 <= x <= 1.0
    assert all(0.0 <= x <= 1.0 for x in prof.reputation_history)


# committee and miner

def test_committee_threshold_example():
    sel = elect_committee(_profiles([1.0, 1.0, 0.4, 0.6]), ReputationConfig(eta=1.0))
    assert sel.threshold == pytest.approx(0.75)
    assert sel.committee == (0, 1)


def test_equal_reputations_all_elected():
    sel = elect_committee(_profiles([0.7] * 10), ReputationConfig())
    assert sel.committee == tuple(range(10))


def test_two_bs_committee():
    sel = elect_committee(_profiles([1.0, 0.0]), ReputationConfig())
    assert sel.threshold == pytest.approx(0.5)
    assert sel.committee == (0,)


def test_strict_eta_can_empty_committee():
    with pytest.raises(EmptyCommitteeError, match="empty-committee"):
        elect_committee(_profiles([0.5, 0.5]), ReputationConfig(eta=1.5))


@settings(max_examples=100, deadline=None)
@given(reps=st.lists(st.floats(0, 1), min_size=1, max_size=20))
def test_eta_one_never_empty(reps):
    sel = elect_committee(_profiles(reps), ReputationConfig(eta=1.0))
    assert max(range(len(reps)), key=lambda i: reps[i]) in sel.committee or \
        any(reps[i] == max(reps) for i in sel.committee)


def test_single_member_committee_is_miner():
    sel = elect_committee(_profiles([1.0, 0.0]), ReputationConfig())
    picked = select_miner(sel, MinerPolicy.RPOS_RANDOM, np.random.default_rng(0))
    assert picked.miner == 0
    assert picked.validators == ()
    assert miner_hit_probability([picked]) == 1.0


def test_rpos_uniform_over_committee():
    sel = elect_committee(_profiles([1.0] * 5), ReputationConfig())
    rng = np.random.default_rng(5)
    counts = np.bincount([select_miner(sel, "RPOS_RANDOM", rng).miner for _ in range(100_000)],
                         minlength=5)
    freq = counts / counts.sum()
    assert np.all(np.abs(freq - 0.2) <= 0.01)
    # chi-square goodness of fit at 1% significance
    assert stats.chisquare(counts).pvalue > 0.01


def test_pos_picks_max_stake():
    sel = elect_committee(_profiles([0.9, 0.95]), ReputationConfig(eta=0.5))
    assert sel.committee == (0, 1)
    for _ in range(10):
        assert select_miner(sel, MinerPolicy.POS_MAX_STAKE).miner == 1


def test_pos_ties_break_to_lowest_id():
    sel = elect_committee(_profiles([0.5, 1.0, 1.0]), ReputationConfig())
    assert select_miner(sel, MinerPolicy.POS_MAX_STAKE).miner == 1


@settings(max_examples=60, deadline=None)
@given(reps=st.lists(st.floats(0.01, 1), min_size=1, max_size=12),
       scale=st.floats(0.1, 10), power=st.floats(0.2, 5))
def test_pos_miner_invariant_to_increasing_transform(reps, scale, power):
    cfg = ReputationConfig(eta=0.01)
    a = select_miner(elect_committee(_profiles(reps), cfg), MinerPolicy.POS_MAX_STAKE).miner
    moved = [scale * x**power for x in reps]
    moved = [min(1.0, m / max(moved)) for m in moved]
    sel = elect_committee(_profiles(moved), cfg)
    b = select_miner(sel, MinerPolicy.POS_MAX_STAKE).miner
    # ties can only be created by floating point; compare by value in that case
    assert a == b or moved[a] == moved[b]


def test_hit_probability_pos_and_rpos():
    cfg = ReputationConfig()
    sel = elect_committee(_profiles([1.0] * 5), cfg)
    rng = np.random.default_rng(9)
    pos = [select_miner(sel, MinerPolicy.POS_MAX_STAKE) for _ in range(1000)]
    rpos = [select_miner(sel, MinerPolicy.RPOS_RANDOM, rng) for _ in range(20_000)]
    assert miner_hit_probability(pos) == 1.0
    assert miner_hit_probability(rpos) == pytest.approx(0.2, abs=0.01)
    assert miner_hit_probability(rpos, Attacker.UNIFORM_COMMITTEE, rng) == pytest.approx(0.2, abs=0.01)


def test_reputation_rows_flags():
    profiles = _profiles([1.0, 0.2, 1.0])
    sel = select_miner(elect_committee(profiles, ReputationConfig()), MinerPolicy.POS_MAX_STAKE)
    rows = reputation_rows(sel, profiles)
    assert rows == [(0, 0, 1.0, 1, 1), (0, 1, 0.2, 0, 0), (0, 2, 1.0, 1, 0)]


def test_make_profiles_rejects_unknown_ids():
    with pytest.raises(ValueError):
        make_profiles(3, ReputationConfig(), malicious_ids=[3])
