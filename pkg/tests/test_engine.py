import json

import numpy as np
import pytest

import flame_match.engine as engine_mod
from flame_match.dataset import Dataset
from flame_match.engine import (
    FlameConfig,
    MatchedGroup,
    StopReason,
    estimate_ate,
    matchrun_levels_csv,
    matchrun_to_json,
    matchrun_to_json_dict,
    matchrun_units_csv,
    run_flame,
    subpopulation_report,
    variance_upper_bound,
)
from flame_match.errors import DegenerateHoldoutError, NoEstimateError, SchemaError
from flame_match.synth import SynthSpec, generate


def _dataset(covs, treatment, outcome, ids=None):
    covs = np.asarray(covs)
    return Dataset(
        covariates=covs,
        arities=covs.max(axis=0) + 1,
        treatment=np.asarray(treatment),
        outcome=np.asarray(outcome, dtype=float),
        covariate_names=tuple(f"c{i}" for i in range(covs.shape[1])),
        unit_ids=np.arange(len(treatment)) if ids is None else np.asarray(ids),
    )


def _holdout(seed=0, n=200, p=2):
    rng = np.random.default_rng(seed)
    covs = rng.integers(0, 2, size=(n, p))
    t = np.tile([0, 1], n // 2)
    y = covs @ np.arange(1, p + 1, dtype=float) + 2.0 * t + rng.normal(0, 0.1, n)
    return _dataset(covs, t, y)


def _group(level, cate, size, signature=(0,)):
    n_t = max(1, size // 2)
    return MatchedGroup(
        level=level,
        active_signature=signature,
        unit_ids=tuple(range(size)),
        n_treated=n_t,
        n_control=size - n_t,
        cate=cate,
        variance_upper_bound=0.0,
    )


def test_variance_upper_bound_values():
    assert variance_upper_bound([1.0, 1.0], [0.0, 0.0]) == 0.0
    assert variance_upper_bound([0.0, 2.0], [1.0, 3.0]) == pytest.approx(4.0)
    assert variance_upper_bound([5.0], [1.0, 2.0]) == pytest.approx(0.5)


def test_estimate_ate_weighted():
    run = _fake_run([_group(1, 1.0, 4), _group(1, 3.0, 4)])
    assert estimate_ate(run) == pytest.approx(2.0)
    run_one = _fake_run([_group(1, 7.5, 6)])
    assert estimate_ate(run_one) == pytest.approx(7.5)


def test_estimate_ate_no_groups():
    with pytest.raises(NoEstimateError):
        estimate_ate(_fake_run([]))


def _fake_run(groups, active=(0,), names=("c0",)):
    from flame_match.engine import LevelRecord, MatchRun
    from flame_match.quality import match_quality

    record = LevelRecord(1, active, match_quality(0.0, 0.0, 0.001), tuple(groups))
    return MatchRun(FlameConfig(), names, (), (record,), StopReason.NO_UNMATCHED_DATA, (), 20)


def test_run_flame_validates_inputs():
    matching = _dataset([[0], [1]], [0, 1], [0.0, 1.0])
    bad_holdout = _dataset([[0], [1]], [1, 1], [0.0, 1.0])
    with pytest.raises(DegenerateHoldoutError):
        run_flame(matching, bad_holdout)
    other_schema = Dataset(
        covariates=np.array([[0], [1]]),
        arities=np.array([2]),
        treatment=np.array([0, 1]),
        outcome=np.zeros(2),
        covariate_names=("other",),
        unit_ids=np.arange(2),
    )
    with pytest.raises(SchemaError):
        run_flame(matching, other_schema)


def test_empty_matching_dataset():
    holdout = _holdout()
    empty = Dataset(
        covariates=np.zeros((0, 2), dtype=np.int64),
        arities=np.array([2, 2]),
        treatment=np.zeros(0, dtype=np.int64),
        outcome=np.zeros(0),
        covariate_names=holdout.covariate_names,
        unit_ids=np.zeros(0, dtype=np.int64),
    )
    run = run_flame(empty, holdout)
    assert run.stop_reason is StopReason.NO_UNMATCHED_DATA
    assert run.levels == () and run.dropped_order == ()


def test_single_arm_matching_stops():
    holdout = _holdout()
    matching = _dataset([[0, 1], [1, 0], [0, 0]], [1, 1, 1], [1.0, 2.0, 3.0])
    run = run_flame(matching, holdout)
    assert run.stop_reason is StopReason.ONE_ARM_EXHAUSTED
    assert run.all_groups() == []
    assert len(run.unmatched_unit_ids) == 3


def test_level1_exact_match_and_stop_reasons():
    # two exact pairs and one unmatchable odd unit
    matching = _dataset(
        [[0, 0], [0, 0], [1, 1], [1, 1], [1, 0]],
        [0, 1, 0, 1, 1],
        [1.0, 2.0, 3.0, 4.0, 9.0],
    )
    run = run_flame(matching, _holdout())
    lvl1 = run.levels[0]
    assert {g.active_signature for g in lvl1.groups} == {(0, 0), (1, 1)}
    assert run.stop_reason in (StopReason.ONE_ARM_EXHAUSTED, StopReason.PE_BLOWUP)
    assert run.n_matched == 4


def test_no_covariates_left_stop():
    rng = np.random.default_rng(0)
    # one covariate, arms never share a value: no matches, nothing to drop
    covs = np.array([[0], [0], [1], [1]])
    matching = _dataset(covs, [0, 0, 1, 1], rng.normal(size=4))
    holdout = _dataset(covs, [0, 1, 0, 1], [0.0, 1.0, 0.0, 1.0])
    run = run_flame(matching, holdout, FlameConfig(stop_on_pe_blowup=False))
    assert run.stop_reason is StopReason.NO_COVARIATES_LEFT
    assert len(run.levels) == 1


def test_max_levels_stop():
    res = generate(SynthSpec(model="tradeoff", n_control=300, n_treated=300, seed=1))
    hold = generate(SynthSpec(model="tradeoff", n_control=300, n_treated=300, seed=2))
    run = run_flame(res.dataset, hold.dataset, FlameConfig(max_levels=3, stop_on_pe_blowup=False))
    assert run.stop_reason is StopReason.MAX_LEVELS
    assert len(run.levels) == 3


def test_mq_drop_stop():
    res = generate(SynthSpec(model="decay_exp", n_control=400, n_treated=400, seed=3))
    hold = generate(SynthSpec(model="decay_exp", n_control=400, n_treated=400, seed=4))
    run = run_flame(
        res.dataset,
        hold.dataset,
        FlameConfig(stop_on_pe_blowup=False, mq_drop_threshold=-1.0),
    )
    assert run.stop_reason in (StopReason.MQ_DROP, StopReason.NO_UNMATCHED_DATA)
    if run.stop_reason is StopReason.MQ_DROP:
        assert any(lv.quality.mq >= -1.0 for lv in run.levels)


def test_without_replacement_groups_disjoint():
    res = generate(SynthSpec(model="decay_exp", n_control=500, n_treated=500, seed=5))
    hold = generate(SynthSpec(model="decay_exp", n_control=500, n_treated=500, seed=6))
    run = run_flame(res.dataset, hold.dataset, FlameConfig(stop_on_pe_blowup=False, max_levels=8))
    seen = set()
    for g in run.all_groups():
        ids = set(g.unit_ids)
        assert not (ids & seen)
        seen |= ids
    # each level's active set loses exactly one covariate
    for first, second in zip(run.levels, run.levels[1:]):
        assert len(second.active) == len(first.active) - 1
        assert set(second.active) < set(first.active)
    assert len(set(run.dropped_order)) == len(run.dropped_order)
    # committed groups satisfy the pruning condition
    for g in run.all_groups():
        assert g.n_treated >= 1 and g.n_control >= 1


def test_tie_break_prefers_lowest_index():
    # columns 0 and 1 are duplicates, so their candidate scores tie exactly;
    # column 2 separates the arms in the matching set and predicts strongly
    # in the holdout, making it expensive to drop
    rng = np.random.default_rng(7)
    dup = rng.integers(0, 2, size=200)
    t = np.tile([0, 1], 100)
    matching = _dataset(np.stack([dup, dup, t], axis=1), t, rng.normal(size=200))
    a = rng.integers(0, 2, size=400)
    b = rng.integers(0, 2, size=400)
    t_h = np.tile([0, 1], 200)
    holdout = _dataset(
        np.stack([a, a, b], axis=1),
        t_h,
        2.0 * a + 5.0 * b + t_h + rng.normal(0, 0.1, 400),
    )
    run = run_flame(matching, holdout, FlameConfig(stop_on_pe_blowup=False, max_levels=2))
    assert run.dropped_order[0] == 0


def test_determinism_identical_reports():
    res = generate(SynthSpec(model="irrelevant", n_control=400, n_treated=400, seed=8))
    hold = generate(SynthSpec(model="irrelevant", n_control=400, n_treated=400, seed=9))
    run1 = run_flame(res.dataset, hold.dataset)
    run2 = run_flame(res.dataset, hold.dataset)
    assert matchrun_to_json(run1) == matchrun_to_json(run2)


def test_candidate_choice_invariant_to_uniform_pe_shift(monkeypatch):
    res = generate(SynthSpec(model="decay_pow", n_control=300, n_treated=300, seed=10))
    hold = generate(SynthSpec(model="decay_pow", n_control=300, n_treated=300, seed=11))
    base = run_flame(res.dataset, hold.dataset, FlameConfig(stop_on_pe_blowup=False, max_levels=4))
    true_pe = engine_mod.prediction_error
    monkeypatch.setattr(engine_mod, "prediction_error", lambda holdout, active: true_pe(holdout, active) + 123.0)
    shifted = run_flame(res.dataset, hold.dataset, FlameConfig(stop_on_pe_blowup=False, max_levels=4))
    assert shifted.dropped_order == base.dropped_order


def test_pe_blowup_absolute_mode():
    res = generate(SynthSpec(model="decay_exp", n_control=400, n_treated=400, seed=12))
    hold = generate(SynthSpec(model="decay_exp", n_control=400, n_treated=400, seed=13))
    run = run_flame(res.dataset, hold.dataset, FlameConfig(pe_blowup_mode="absolute", epsilon=0.0))
    assert run.stop_reason is StopReason.PE_BLOWUP
    pe_full = run.levels[0].quality.pe
    for lv in run.levels[1:]:
        assert lv.quality.pe <= pe_full


def test_with_replacement_first_match_recorded():
    # two exact pairs: everyone's first (and only) match happens at level 1
    matching = _dataset(
        [[0, 0], [0, 0], [1, 1], [1, 1]],
        [0, 1, 0, 1],
        [0.0, 1.0, 0.0, 2.0],
        ids=[10, 11, 12, 13],
    )
    holdout = _holdout()
    run = run_flame(matching, holdout, FlameConfig(replacement=True, stop_on_pe_blowup=False))
    assert run.stop_reason is StopReason.NO_UNMATCHED_DATA
    lvl1 = run.levels[0]
    assert {g.active_signature for g in lvl1.groups} == {(0, 0), (1, 1)}
    assert run.n_matched == 4
    # every unit's first group sits at the earliest level it could match
    first_level = {}
    for lv in run.levels:
        for g in lv.groups:
            for uid in g.unit_ids:
                first_level.setdefault(uid, lv.level)
    assert first_level == {10: 1, 11: 1, 12: 1, 13: 1}


def test_with_replacement_groups_keep_full_membership():
    # units 0/1 pair up exactly at level 1; unit 2 first matches at level 2,
    # in a group that also carries the already-matched pair
    matching = _dataset(
        [[0, 0], [0, 0], [1, 0], [1, 1]],
        [0, 1, 0, 1],
        [0.0, 5.0, 1.0, 6.0],
    )
    rng = np.random.default_rng(14)
    covs = rng.integers(0, 2, size=(200, 2))
    t_h = np.tile([0, 1], 100)
    # outcome rides on c1 only, so dropping c0 is the cheap move
    holdout = _dataset(covs, t_h, 10.0 * covs[:, 1] + t_h + rng.normal(0, 0.1, 200))
    run = run_flame(matching, holdout, FlameConfig(replacement=True, stop_on_pe_blowup=False))
    assert run.dropped_order[0] == 0
    lvl2 = run.levels[1]
    assert len(lvl2.groups) == 1
    group = lvl2.groups[0]
    assert set(group.unit_ids) == {0, 1, 2}
    assert (group.n_treated, group.n_control) == (1, 2)
    # units 0 and 1 keep their level-1 assignment in the per-unit export
    lines = matchrun_units_csv(run).strip().splitlines()[1:]
    levels_by_unit = {int(line.split(",")[0]): int(line.split(",")[1]) for line in lines}
    assert levels_by_unit[0] == 1 and levels_by_unit[1] == 1 and levels_by_unit[2] == 2


def test_subpopulation_report_partition_and_marginalized():
    from flame_match.engine import LevelRecord, MatchRun
    from flame_match.quality import match_quality

    lvl1 = LevelRecord(
        1,
        (0, 1),
        match_quality(0.0, 1.0, 0.001),
        (
            _group(1, 2.0, 4, signature=(0, 1)),
            _group(1, 6.0, 4, signature=(1, 0)),
        ),
    )
    lvl2 = LevelRecord(2, (1,), match_quality(0.1, 1.0, 0.001), (_group(2, 3.0, 2, signature=(1,)),))
    run = MatchRun(FlameConfig(), ("c0", "c1"), (0,), (lvl1, lvl2), StopReason.NO_UNMATCHED_DATA, (), 10)
    report = subpopulation_report(run, 0)
    assert set(report) == {0, 1, "marginalized"}
    assert report[0].mean_cate == pytest.approx(2.0)
    assert report[1].mean_cate == pytest.approx(6.0)
    assert report["marginalized"].mean_cate == pytest.approx(3.0)
    assert sum(s.units for s in report.values()) == 10
    with pytest.raises(ValueError):
        subpopulation_report(run, 99)


def test_subpopulation_single_group():
    run = _fake_run([_group(1, 4.0, 6, signature=(1,))])
    report = subpopulation_report(run, 0)
    assert set(report) == {1}
    assert report[1].mean_cate == pytest.approx(4.0)
    assert report[1].std_cate == 0.0
    assert report[1].units == 6


def test_subpopulation_recovers_category_effects():
    # effect 5 when c0=0, 15 when c0=1; exact matching recovers both
    rng = np.random.default_rng(17)
    n = 2000
    covs = rng.integers(0, 2, size=(n, 3))
    t = np.tile([0, 1], n // 2)
    y = covs @ np.array([1.0, 2.0, 0.5]) + t * np.where(covs[:, 0] == 1, 15.0, 5.0) + rng.normal(0, 0.05, n)
    matching = _dataset(covs, t, y)
    holdout = _dataset(covs, np.roll(t, 1), y)
    run = run_flame(matching, holdout)
    report = subpopulation_report(run, 0)
    assert report[0].mean_cate == pytest.approx(5.0, abs=0.2)
    assert report[1].mean_cate == pytest.approx(15.0, abs=0.2)


def test_flat_effect_ate_within_two_percent():
    res = generate(SynthSpec(model="decay_exp", n_control=3000, n_treated=3000, seed=20))
    hold = generate(SynthSpec(model="decay_exp", n_control=3000, n_treated=3000, seed=21))
    run = run_flame(res.dataset, hold.dataset)
    assert run.all_groups()
    assert estimate_ate(run) == pytest.approx(10.0, rel=0.02)


def test_variance_bound_rises_as_relevant_covariates_drop():
    res = generate(SynthSpec(model="decay_pow", n_control=1500, n_treated=1500, seed=22))
    hold = generate(SynthSpec(model="decay_pow", n_control=1500, n_treated=1500, seed=23))
    run = run_flame(res.dataset, hold.dataset, FlameConfig(stop_on_pe_blowup=False))
    levels_with_groups = [lv for lv in run.levels if lv.groups]
    assert len(levels_with_groups) >= 2
    first = np.mean([g.variance_upper_bound for g in levels_with_groups[0].groups])
    last = np.mean([g.variance_upper_bound for g in levels_with_groups[-1].groups])
    assert last > first


def test_unmatchable_arms_zero_groups_pe_blowup():
    # arms never share a signature, and every drop wrecks holdout prediction
    n = 40
    covs = np.zeros((n, 3), dtype=np.int64)
    covs[n // 2 :, :] = 1
    t = np.repeat([0, 1], n // 2)
    matching = _dataset(covs, t, np.arange(n, dtype=float))
    rng = np.random.default_rng(24)
    hcovs = rng.integers(0, 2, size=(400, 3))
    t_h = np.tile([0, 1], 200)
    y_h = hcovs @ np.array([10.0, 10.0, 10.0]) + t_h
    holdout = _dataset(hcovs, t_h, y_h)
    run = run_flame(matching, holdout)
    assert run.stop_reason is StopReason.PE_BLOWUP
    assert run.all_groups() == []
    assert run.n_matched == 0


def test_report_serialization_shapes():
    res = generate(SynthSpec(model="quadratic", n_control=300, n_treated=300, seed=18))
    hold = generate(SynthSpec(model="quadratic", n_control=300, n_treated=300, seed=19))
    run = run_flame(res.dataset, hold.dataset)
    payload = matchrun_to_json_dict(run)
    assert payload["stop_reason"] in {r.value for r in StopReason}
    assert payload["n_matched"] + len(payload["unmatched_unit_ids"]) == payload["n_units"]
    parsed = json.loads(matchrun_to_json(run))
    assert parsed == payload

    units_csv = matchrun_units_csv(run)
    lines = units_csv.strip().splitlines()
    assert lines[0] == "unit_id,level,signature,cate"
    assert len(lines) - 1 == run.n_matched  # one row per matched unit

    levels_csv = matchrun_levels_csv(run)
    header, *rows = levels_csv.strip().splitlines()
    assert header == "level,n_active,pe,bf,mq,n_groups,n_matched"
    assert len(rows) == len(run.levels)
