import json

import pytest

from src.errors import ConfigurationError, InputError, NoFeasibleConfigError
from src.evaluation import (
    DatasetSizes,
    EvaluationResult,
    Evaluator,
    GridResult,
    MethodSpec,
    ProtocolConfig,
    SweepResult,
    aggregate_reports,
    bucket_partition,
    flop_account,
    forward_flops,
    gamma_sweep,
    layer_candidates,
    run_ablation_study,
    select_under_constraint,
    two_fold_select,
    write_report,
)
from src.evaluation.cost import Method, adapter_macs, check_rank, edit_flops, ffn_flops
from src.kvw import KvwConfig
from src.model import ModelConfig


def grid(*scores):
    return [GridResult(config={"i": i}, forget_score=f, retain_score=r) for i, (f, r) in enumerate(scores)]


# =============================================================================
# Selection
# =============================================================================

def test_selects_lowest_forget_among_feasible():
    selection = select_under_constraint(grid((0.0, 0.90), (0.2, 1.0), (0.1, 0.97)), vanilla_retain=1.0)
    assert selection.index == 2
    assert selection.threshold == pytest.approx(0.95)
    assert selection.feasible_count == 2


def test_ties_go_to_higher_retain_then_grid_order():
    results = grid((0.0, 0.96), (0.0, 0.99), (0.0, 0.99))
    assert select_under_constraint(results, 1.0).index == 1


def test_no_feasible_configuration():
    selection = select_under_constraint(grid((0.0, 0.5)), vanilla_retain=1.0)
    assert not selection.feasible
    with pytest.raises(NoFeasibleConfigError):
        selection.require()


@pytest.mark.parametrize("results, vanilla, floor", [
    ([], 1.0, 0.95),
    (grid((0.0, 1.0)), 0.0, 0.95),
    (grid((0.0, 1.0)), 1.0, 1.5),
])
def test_selection_rejects_bad_inputs(results, vanilla, floor):
    with pytest.raises(InputError):
        select_under_constraint(results, vanilla, floor)


def test_two_fold_selects_on_one_split_and_reports_the_other():
    # Point 0 is best on split 1 but breaks retain on split 2; point 1 is the reverse.
    split_scores = {
        1: grid((0.0, 1.0), (0.5, 1.0)),
        2: grid((0.0, 0.5), (0.0, 1.0)),
    }
    report = two_fold_select(split_scores, {1: 1.0, 2: 1.0})
    first, second = report.folds
    assert (first.select_split, first.eval_split) == (1, 2)
    assert first.selection.index == 0
    assert first.held_out == split_scores[2][0]
    assert first.held_out_best.index == 1
    assert second.selection.index == 1
    assert second.held_out == split_scores[1][1]
    assert first.generalization_gap["retain"] == pytest.approx(-0.5)
    assert report.held_out_mean() == {"forget": 0.25, "retain": 0.75}


def test_protocol_candidates_order():
    protocol = ProtocolConfig(gammas=[0.1, 0.2], layer_ranges=[(0, None), (1, 2)])
    candidates = protocol.candidates(KvwConfig(gamma=0.0))
    assert [(c.gamma, c.start_layer) for c in candidates] == [(0.1, 0), (0.1, 1), (0.2, 0), (0.2, 1)]


# =============================================================================
# Layer buckets
# =============================================================================

def test_bucket_partition_gives_remainder_to_leading_buckets():
    assert bucket_partition(10, 4) == [[0, 1, 2], [3, 4, 5], [6, 7], [8, 9]]
    assert bucket_partition(32, 8)[0] == [0, 1, 2, 3]


def test_too_few_layers_for_buckets():
    with pytest.raises(ConfigurationError):
        bucket_partition(4, 8)


def test_layer_candidates_cross_first_and_last_bucket():
    candidates = layer_candidates(32, 8)
    assert len(candidates) == 16
    assert candidates[0] == (0, 28)
    assert candidates[-1] == (3, 31)


# =============================================================================
# Cost model
# =============================================================================

@pytest.mark.parametrize("tag, method, full, rank", [
    ("kvw", Method.KVW, False, 8),
    ("gd_full", Method.GD, True, 8),
    ("npo-full", Method.NPO, True, 8),
    ("lora_variant(4)", Method.LORA_VARIANT, False, 4),
    ("oracle_retrain", Method.ORACLE_RETRAIN, False, 8),
])
def test_method_tags(tag, method, full, rank):
    spec = MethodSpec.parse(tag)
    assert (spec.method, spec.full, spec.rank) == (method, full, rank)


@pytest.mark.parametrize("tag", ["sgd", "mmu_full", "kvw(3)x"])
def test_unknown_method_tags(tag):
    with pytest.raises(InputError):
        MethodSpec.parse(tag)


def test_ffn_flops_of_desk_model():
    assert ffn_flops(ModelConfig()) == 4 * 64 * 256 == 65536


def test_rank_bound():
    config = ModelConfig()
    check_rank(config, 8)
    with pytest.raises(InputError):
        check_rank(config, 9)
    with pytest.raises(InputError):
        check_rank(config, 0)


def test_per_batch_formulas():
    config = ModelConfig()
    sizes = DatasetSizes(forget=5, retain=20, seq_len=3, batch_size=2)
    f = 2 * forward_flops(config, 3)
    fa = 2 * 2 * adapter_macs(config, 3, 8)
    lora_pass = 2 * f + 3 * fa

    assert flop_account(config, sizes, MethodSpec.parse("kvw")).per_batch_flops == f + edit_flops(config)
    assert edit_flops(config) == 4 * 256 * 66
    assert flop_account(config, sizes, MethodSpec.parse("ga")).per_batch_flops == lora_pass
    assert flop_account(config, sizes, MethodSpec.parse("gd")).per_batch_flops == 2 * lora_pass
    assert flop_account(config, sizes, MethodSpec.parse("kl")).per_batch_flops == 2 * lora_pass + f
    assert flop_account(config, sizes, MethodSpec.parse("npo")).per_batch_flops == lora_pass + f
    assert flop_account(config, sizes, MethodSpec.parse("gd_full")).per_batch_flops == 6 * f
    assert flop_account(config, sizes, MethodSpec.parse("mmu")).per_batch_flops == 9 * f


def test_run_totals():
    config = ModelConfig()
    sizes = DatasetSizes(forget=5, retain=20, seq_len=3, batch_size=2)
    f1 = forward_flops(config, 3)
    kvw = flop_account(config, sizes, MethodSpec.parse("kvw"))
    assert kvw.total_flops == 25 * f1 + 3 * edit_flops(config)
    assert kvw.breakdown["gradient_words"] == 0

    ga = flop_account(config, sizes, MethodSpec.parse("ga", epochs=4))
    assert ga.total_flops == 4 * 3 * ga.per_batch_flops
    retrain = flop_account(config, sizes, MethodSpec.parse("oracle_retrain"))
    assert retrain.total_flops == 10 * 3 * 2 * f1
    mmu = flop_account(config, sizes, MethodSpec.parse("mmu"))
    assert mmu.total_flops == 3 * 9 * 2 * f1 + 10 * 3 * 2 * f1


def test_mmu_run_costs_more_than_retraining():
    config = ModelConfig(num_layers=4, d_model=64, ffn_dim=256, vocab_size=512)
    sizes = DatasetSizes(forget=40, retain=160, seq_len=16)
    for epochs in (1, 3):
        mmu = flop_account(config, sizes, MethodSpec.parse("mmu", epochs=epochs))
        retrain = flop_account(config, sizes, MethodSpec.parse("oracle_retrain", epochs=epochs))
        assert mmu.total_flops > retrain.total_flops
        assert mmu.per_batch_flops > retrain.per_batch_flops


# =============================================================================
# Harness on the desk suite
# =============================================================================

def test_vanilla_scores(suite):
    vanilla = Evaluator(suite).vanilla()
    assert vanilla.forget_acc == 1.0
    assert vanilla.retain_acc == 1.0
    assert vanilla.forget_by_split == {1: 1.0, 2: 1.0}


def test_gamma_sweep_keeps_grid_order(suite):
    sweep = gamma_sweep(suite, KvwConfig(gamma=0.0), [0.0, 0.5], workers=2)
    assert [p.config["gamma"] for p in sweep.points] == [0.0, 0.5]
    assert sweep.points[0].forget_acc == 1.0
    frame = sweep.to_frame()
    assert list(frame["feasible"]) == [False, True]
    assert sweep.feasible_region()["gamma_intervals"] == [[0.5, 0.5]]


def test_gamma_sweep_rejects_unsorted_list(suite):
    with pytest.raises(InputError):
        gamma_sweep(suite, KvwConfig(gamma=0.0), [0.5, 0.1])


def test_gamma_sweep_forget_curve_never_rises(suite):
    grid_values = [0.0, 0.03, 0.1, 0.2, 0.3, 0.5, 0.7, 1.5, 3.0, 5.0]
    sweep = gamma_sweep(suite, KvwConfig(gamma=0.0), grid_values, workers=2)
    forget = [p.forget_acc for p in sweep.points]
    assert all(later <= earlier for earlier, later in zip(forget, forget[1:]))
    assert forget[0] == 1.0 and forget[-1] == 0.0


def sweep_of(scores):
    points = [EvaluationResult(config={"gamma": g}, forget_acc=f, retain_acc=r) for g, f, r in scores]
    vanilla = EvaluationResult(config={"gamma": 0.0}, forget_acc=1.0, retain_acc=1.0)
    return SweepResult(kind="gamma", points=points, vanilla=vanilla)


def test_central_gamma_comes_from_the_first_interval():
    sweep = sweep_of([
        (0.0, 1.0, 1.0), (0.1, 0.0, 1.0), (0.2, 0.0, 1.0), (0.3, 0.0, 0.5),
        (0.5, 0.0, 1.0), (0.7, 0.0, 1.0), (1.0, 0.0, 1.0),
    ])
    assert sweep.feasible_region()["gamma_intervals"] == [[0.1, 0.2], [0.5, 1.0]]
    assert sweep.central_gamma() == 0.2
    assert sweep_of([(0.0, 1.0, 1.0), (0.2, 0.0, 1.0), (0.3, 0.0, 1.0), (0.5, 0.0, 1.0)]).central_gamma() == 0.3


def test_central_gamma_without_feasible_point():
    with pytest.raises(NoFeasibleConfigError):
        sweep_of([(0.0, 1.0, 1.0), (5.0, 0.0, 0.5)]).central_gamma()


def test_ablation_writes_reports(suite, tmp_path):
    results = run_ablation_study(suite, KvwConfig(gamma=0.5), output_dir=str(tmp_path))
    assert [row["arm"] for row in results.rows] == ["ans_only_off", "use_retain_off", "full"]
    for name in ("ablation.json", "ablation.csv", "ablation.md"):
        assert (tmp_path / name).exists()
    assert "| yes | yes |" in (tmp_path / "ablation.md").read_text()


def test_aggregate_reports_is_deterministic(suite, tmp_path):
    sweep = gamma_sweep(suite, KvwConfig(gamma=0.0), [0.0, 0.5])
    write_report(sweep.to_dict(), sweep.to_frame(), tmp_path, "gamma")
    first = aggregate_reports(tmp_path)
    first_md = (tmp_path / "summary.md").read_bytes()
    second = aggregate_reports(tmp_path)
    assert first == second
    assert (tmp_path / "summary.md").read_bytes() == first_md
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["reports"][0]["points"] == 2
    assert summary["reports"][0]["feasible"] == 1


def test_aggregate_reports_needs_reports(tmp_path):
    with pytest.raises(InputError):
        aggregate_reports(tmp_path)
    with pytest.raises(InputError):
        aggregate_reports(tmp_path / "missing")
