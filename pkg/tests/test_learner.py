import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import diagonal_normal_pdf
from symground.errors import AllFiltered, NoLearnableSymbols, TooFewSamples, Unlearnable
from symground.features import FEATURES
from symground.learner import (SIGMA_FLOOR, UNKNOWN, FeatureStat, KnowledgeBase, LearnerConfig,
                               SymbolModel, build_model, classify, clean_noise, concept_groups,
                               find_invariant_features, fit_normals, learn, log_pdf, mahalanobis,
                               pdf)

COLOUR = {"red": (0.78, 0.12, 0.12), "blue": (0.12, 0.12, 0.78), "yellow": (0.86, 0.82, 0.12)}
AREA = {"cell": 140 / 2304, "block": 288 / 2304, "cube": 576 / 2304}


def synthetic_dataset(rng, n_scenes=50, per_scene=6, views=7, noise=0.25):
    """Feature vectors shaped like the simulator's, grouped by (possibly wrong) symbol.

    Each scene holds distinct classes; every object gets its own colour jitter
    and is seen ``views`` times. A wrong label names another object of the
    same scene.
    """
    classes = [(c, s) for c in COLOUR for s in AREA]
    data = {}
    for _ in range(n_scenes):
        scene = [classes[i] for i in rng.choice(len(classes), per_scene, replace=False)]
        rgbs = [np.asarray(COLOUR[c]) + rng.normal(0, 8 / 255, 3) for c, _ in scene]
        for _ in range(views):
            for k, (c, s) in enumerate(scene):
                x = np.r_[rgbs[k] + rng.normal(0, 0.001, 3), AREA[s]]
                label = scene[k]
                if rng.random() < noise:
                    others = scene[:k] + scene[k + 1:]
                    label = others[rng.integers(len(others))]
                for sym in label:
                    data.setdefault(sym, []).append(x)
    return {k: np.array(v) for k, v in data.items()}


# -- fitting and cleaning ----------------------------------------------------------

def test_fit_two_points():
    stats = fit_normals(np.array([[0.0] * 4, [1.0] * 4]), n_min=2)
    for s in stats:
        assert s.mu == pytest.approx(0.5) and s.sigma == pytest.approx(0.7071, abs=1e-4)


def test_constant_feature_gets_the_floor():
    (s,) = fit_normals(np.full((12, 1), 0.3))
    assert s.sigma == SIGMA_FLOOR


def test_too_few_samples():
    with pytest.raises(TooFewSamples):
        fit_normals(np.zeros((3, 4)))


def test_single_trim_pass_by_hand():
    data = np.array([[0.5]] * 5 + [[0.0]])
    (s,) = fit_normals(data, n_min=1)
    assert s.mu == pytest.approx(0.4167, abs=1e-4) and s.sigma == pytest.approx(0.2041, abs=1e-4)
    assert s.mu - 2 * s.sigma == pytest.approx(0.0084, abs=1e-3)
    (kept,), (refit,) = clean_noise(data, [s])
    assert len(kept) == 5
    assert refit.mu == pytest.approx(0.5) and refit.sigma == SIGMA_FLOOR


def test_clean_data_is_left_alone():
    data = np.array([[0.0], [1.0], [0.0], [1.0]])
    stats = fit_normals(data, n_min=1)
    kept, refit = clean_noise(data, stats)
    assert refit == stats and len(kept[0]) == 4


@pytest.mark.parametrize("seed", range(5))
def test_planted_outliers_are_trimmed(seed):
    rng = np.random.default_rng(seed)
    mu = rng.uniform(0.2, 0.8, 4)
    cluster = mu + rng.normal(0, 0.01, (300, 4))
    far = mu + rng.choice([-1, 1], (100, 4)) * rng.uniform(0.04, 0.1, (100, 4))
    data = np.vstack([cluster, far])
    _, stats = clean_noise(data, fit_normals(data), LearnerConfig().clean_passes)
    np.testing.assert_allclose([s.mu for s in stats], mu, atol=0.01)


def test_passes_none_runs_to_a_fixed_point():
    rng = np.random.default_rng(0)
    data = np.r_[rng.normal(0.5, 0.01, 300), rng.uniform(0, 1, 100)][:, None]
    kept, stats = clean_noise(data, fit_normals(data), None)
    kept2, stats2 = clean_noise(kept[0][:, None], stats, 1)
    assert len(kept2[0]) == len(kept[0])


def test_all_filtered_is_reported():
    with pytest.raises(AllFiltered):
        clean_noise(np.array([[0.0], [1.0]]), [FeatureStat(5.0, 0.1, 2)])


# -- invariant features and models ---------------------------------------------------

def _stats(sigmas):
    return [FeatureStat(0.5, s, 50) for s in sigmas]


def test_colour_like_spreads_select_rgb():
    assert find_invariant_features(_stats([0.01, 0.02, 0.01, 0.30]), 0.05) == ("R", "G", "B")


def test_shape_like_spreads_select_area():
    assert find_invariant_features(_stats([0.2, 0.2, 0.2, 0.01]), 0.05) == ("area",)


def test_no_invariant_feature():
    assert find_invariant_features(_stats([0.2, 0.06, 0.05, 0.3]), 0.05) == ()


def test_build_model_from_stats():
    stats = [FeatureStat(0.12, 0.01, 50), FeatureStat(0.12, 0.01, 50),
             FeatureStat(0.78, 0.01, 50), FeatureStat(0.3, 0.3, 50)]
    m = build_model("blue", stats, ("R", "G", "B"))
    np.testing.assert_allclose(m.mu, [0.12, 0.12, 0.78])
    np.testing.assert_allclose(m.var, [1e-4, 1e-4, 1e-4])


def test_unlearnable_without_invariants():
    with pytest.raises(Unlearnable):
        build_model("x", _stats([0.2] * 4), ())


def test_one_dimensional_model():
    m = build_model("cube", _stats([0.2, 0.2, 0.2, 0.01]), ("area",))
    assert m.features == ("area",) and m.mu.shape == (1,)


def test_model_dimension_mismatch():
    with pytest.raises(ValueError):
        SymbolModel("x", ("R", "G"), np.array([0.1]), np.array([0.1]))


# -- learning -----------------------------------------------------------------------

def test_learn_separates_colour_and_shape():
    kb = learn(synthetic_dataset(np.random.default_rng(0)))
    assert kb.groups == ((("R", "G", "B"), ("blue", "red", "yellow")),
                         (("area",), ("block", "cell", "cube")))
    assert kb.warnings == ()


def test_learn_one_symbol():
    rng = np.random.default_rng(1)
    kb = learn({"red": np.c_[rng.normal(0.78, 0.01, (30, 3)), rng.uniform(0, 1, 30)]})
    assert len(kb.models) == 1 and kb.groups == ((("R", "G", "B"), ("red",)),)


def test_learn_ignores_dataset_order():
    data = synthetic_dataset(np.random.default_rng(2))
    shuffled = {k: data[k] for k in reversed(sorted(data))}
    assert learn(shuffled) == learn(data)


def test_learn_skips_bad_symbols_with_a_warning():
    data = synthetic_dataset(np.random.default_rng(3))
    data["noise"] = np.random.default_rng(0).uniform(0, 1, (50, 4))
    data["rare"] = data["red"][:3]
    kb = learn(data)
    assert "noise" not in kb.symbols and "rare" not in kb.symbols
    assert len(kb.warnings) == 2


def test_nothing_learnable():
    with pytest.raises(NoLearnableSymbols):
        learn({"noise": np.random.default_rng(0).uniform(0, 1, (50, 4))})
    with pytest.raises(NoLearnableSymbols):
        learn({})


def test_knowledge_base_round_trips_through_json():
    kb = learn(synthetic_dataset(np.random.default_rng(4)))
    back = KnowledgeBase.from_dict(json.loads(json.dumps(kb.to_dict())))
    assert back == kb


def test_concept_groups_are_ordered_by_feature():
    models = [SymbolModel("b", ("area",), [0.1], [0.01]), SymbolModel("a", ("R", "G", "B"), [0.1] * 3, [0.01] * 3),
              SymbolModel("c", ("area",), [0.2], [0.01])]
    assert concept_groups(models) == ((("R", "G", "B"), ("a",)), (("area",), ("b", "c")))


# -- densities and classification -------------------------------------------------------

def test_one_dimensional_density_at_the_mean():
    m = SymbolModel("x", ("R",), [0.5], [0.01])
    assert pdf(m, [0.5, 0, 0, 0]) == pytest.approx(3.9894, abs=1e-4)


def test_density_matches_scipy_on_random_models():
    rng = np.random.default_rng(0)
    for _ in range(200):
        k = int(rng.integers(1, 5))
        feats = tuple(sorted(rng.choice(4, k, replace=False)))
        names = tuple(FEATURES[i] for i in feats)
        mu = rng.uniform(0, 1, k)
        var = 10 ** rng.uniform(-4, -1, k)
        x = rng.uniform(0, 1, 4)
        x[list(feats)] = mu + rng.uniform(-4, 4, k) * np.sqrt(var)
        m = SymbolModel("s", names, mu, var)
        assert pdf(m, x) == pytest.approx(diagonal_normal_pdf(mu, var, x[list(feats)]), rel=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.01, 0.99), min_size=4, max_size=4),
       st.lists(st.floats(1e-4, 0.1), min_size=4, max_size=4),
       st.lists(st.floats(-0.05, 0.05), min_size=4, max_size=4))
def test_density_peaks_at_the_mean(mu, var, step):
    m = SymbolModel("s", FEATURES, mu, var)
    assert log_pdf(m, mu) >= log_pdf(m, np.add(mu, step))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=4, max_size=4))
def test_mahalanobis_is_consistent_with_density(x):
    m = SymbolModel("s", FEATURES, [0.5] * 4, [0.01] * 4)
    expected = -0.5 * mahalanobis(m, x) ** 2 - 2 * np.log(2 * np.pi * 0.01)
    assert log_pdf(m, x) == pytest.approx(expected, abs=1e-9)


def _colour_kb(d_max=3.0):
    models = tuple(SymbolModel(c, ("R", "G", "B"), rgb, [1e-4] * 3) for c, rgb in COLOUR.items())
    return KnowledgeBase(models, concept_groups(models), 0.05, d_max)


def test_classify_at_the_mode():
    x = np.r_[COLOUR["blue"], 0.3]
    assert classify(x, _colour_kb()) == {("R", "G", "B"): "blue"}


def test_classify_far_from_everything_is_unknown():
    assert classify([0.1, 0.8, 0.1, 0.3], _colour_kb()) == {("R", "G", "B"): UNKNOWN}


def test_classify_tie_goes_to_the_alphabetically_first_symbol():
    models = (SymbolModel("zeta", ("R",), [0.4], [0.01]), SymbolModel("alpha", ("R",), [0.6], [0.01]))
    kb = KnowledgeBase(models, concept_groups(models), 0.05, 3.0)
    assert classify([0.5, 0, 0, 0], kb) == {("R",): "alpha"}


def test_classify_threshold_override():
    x = np.r_[np.asarray(COLOUR["red"]) + 0.04, 0.3]  # 4 standard deviations per channel
    assert classify(x, _colour_kb(3.0)) == {("R", "G", "B"): UNKNOWN}
    assert classify(x, _colour_kb(3.0), d_max=8.0) == {("R", "G", "B"): "red"}


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=4, max_size=4))
def test_classify_picks_a_qualifying_maximum(x):
    kb = _colour_kb(4.0)
    (label,) = classify(x, kb).values()
    near = [m for m in kb.models if mahalanobis(m, x) <= 4.0]
    if not near:
        assert label == UNKNOWN
    else:
        assert log_pdf(kb.model(label), x) == max(log_pdf(m, x) for m in near)
