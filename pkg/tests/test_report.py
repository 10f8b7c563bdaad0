"""RMSE math, ablation report rendering, and rank aggregation."""

import numpy as np
import pytest

from vadreg.dataset import to_training_set
from vadreg.model import Dimension, NetworkConfig, TrainConfig, build_model
from vadreg.report import (
    EvalReport,
    EvalSplit,
    IncompleteReportError,
    Method,
    evaluate,
    from_records,
    published_report,
    rank_aggregate,
    render_tables,
    rmse,
    to_records,
)
from vadreg.synth import make_fixture
from vadreg.train import train


class TestRmse:
    def test_equal_is_zero(self):
        assert rmse([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_unit_case(self):
        assert rmse([0.0, 0.0], [1.0, -1.0]) == 1.0

    def test_hand_value(self):
        assert rmse([2.0, 0.0], [0.0, 0.0]) == pytest.approx(np.sqrt(2.0))

    def test_symmetry(self):
        rng = np.random.default_rng(0)
        p, t = rng.normal(size=(2, 9))
        assert rmse(p, t) == rmse(t, p)

    def test_errors(self):
        with pytest.raises(ValueError):
            rmse([1.0], [1.0, 2.0])
        with pytest.raises(ValueError):
            rmse([], [])


class TestEvaluate:
    def test_constant_zero_predictor_vs_all_twos(self):
        model = build_model(NetworkConfig(preset="mini", seed=0), "v")
        model.net.fc.weights.data = np.zeros_like(model.net.fc.weights.data)
        model.net.fc.bias.data = np.zeros(1)
        x = np.random.default_rng(0).random((4, 1, 48, 48))
        assert evaluate(model, x, np.full(4, 2.0)) == 2.0

    def test_constant_zero_vs_balanced_extremes(self):
        model = build_model(NetworkConfig(preset="mini", seed=0), "v")
        model.net.fc.weights.data = np.zeros_like(model.net.fc.weights.data)
        model.net.fc.bias.data = np.zeros(1)
        x = np.random.default_rng(0).random((4, 1, 48, 48))
        assert evaluate(model, x, np.array([-2.0, 2.0, -2.0, 2.0])) == 2.0

    def test_memorized_single_image(self):
        images, labels = make_fixture(1, seed=5)
        x, y = to_training_set(images, labels)
        model = build_model(NetworkConfig(preset="mini", seed=1), "v")
        train(model, x, y[:, 0], TrainConfig(batch_size=1, epochs=400, seed=0,
                                             orth_weight=0.0))
        assert evaluate(model, x, y[:, 0]) < 1e-2

    def test_empty_split_rejected(self):
        model = build_model(NetworkConfig(preset="mini", seed=0), "v")
        with pytest.raises(ValueError):
            evaluate(model, np.zeros((0, 1, 48, 48)), np.zeros(0))


class TestRankAggregate:
    def test_published_numbers_give_3_4_5(self):
        ranks = rank_aggregate(published_report(), Method.ORTHO)
        assert ranks.rank_sums[Dimension.V] == 3.0
        assert ranks.rank_sums[Dimension.A] == 4.0
        assert ranks.rank_sums[Dimension.D] == 5.0

    def test_all_equal_gives_average_rank_twice(self):
        report = EvalReport()
        for d in Dimension:
            for s in EvalSplit:
                report.set(d, s, Method.ORTHO, 0.5)
        ranks = rank_aggregate(report, Method.ORTHO)
        assert all(v == 4.0 for v in ranks.rank_sums.values())

    def test_direct_ranking(self):
        report = EvalReport()
        for s in EvalSplit:
            report.set(Dimension.V, s, Method.ORTHO, 1.0)
            report.set(Dimension.A, s, Method.ORTHO, 2.0)
            report.set(Dimension.D, s, Method.ORTHO, 3.0)
        ranks = rank_aggregate(report, Method.ORTHO)
        assert ranks.rank_sums == {Dimension.V: 2.0, Dimension.A: 4.0, Dimension.D: 6.0}

    def test_monotone_transform_invariance(self):
        base = published_report()
        squashed = EvalReport()
        for key, val in base.entries.items():
            squashed.set(*key, np.tanh(5 * val))      # strictly increasing map
        assert (rank_aggregate(base, Method.ORTHO).rank_sums
                == rank_aggregate(squashed, Method.ORTHO).rank_sums)

    def test_rank_sums_total_12_without_ties(self):
        ranks = rank_aggregate(published_report(), Method.BASELINE)
        assert sum(ranks.rank_sums.values()) == 12.0

    def test_missing_cells_rejected(self):
        with pytest.raises(IncompleteReportError):
            rank_aggregate(EvalReport(), Method.ORTHO)


class TestRenderTables:
    def test_published_values_to_three_decimals(self):
        text = render_tables(published_report())
        for dim_title in ("Valence", "Arousal", "Dominance"):
            assert f"{dim_title} prediction (RMSE)" in text
        # spot-check every published cell appears with 3 decimals
        for cell in ("0.076", "0.063", "0.071", "0.059", "0.048", "0.094",
                     "0.045", "0.087", "0.078", "0.069", "0.080", "0.066"):
            assert cell in text

    def test_rounding_rule(self):
        report = published_report()
        report.set(Dimension.V, EvalSplit.PUBLIC, Method.BASELINE, 0.1234)
        assert "0.123" in render_tables(report)

    def test_empty_report_lists_all_12_cells(self):
        with pytest.raises(IncompleteReportError) as exc:
            render_tables(EvalReport())
        assert str(exc.value).count("/") == 24      # 12 cells, 2 slashes each


class TestRecords:
    def test_roundtrip(self):
        report = published_report()
        again = from_records(to_records(report))
        assert again.entries == report.entries

    def test_stable_field_order(self):
        lines = to_records(published_report()).strip().split("\n")
        assert len(lines) == 12
        for line in lines:
            keys = [part.split("=")[0] for part in line.split()]
            assert keys == ["dimension", "split", "method", "rmse", "rmse_norm"]

    def test_norm_column_is_half_scale(self):
        line = to_records(published_report()).splitlines()[0]
        fields = dict(p.split("=") for p in line.split())
        assert float(fields["rmse_norm"]) == pytest.approx(float(fields["rmse"]) / 2)

    def test_bad_line_rejected(self):
        with pytest.raises(ValueError):
            from_records("dimension=v split=public\n")
