import csv
import json

import numpy as np
import pytest

from fairbench.datasets import (DataError, DatasetSchema, DegenerateDataError, SyntheticImbalanceConfig,
                                TabularDataset, generate_imbalance, load_csv, positive_rate_tolerance, split,
                                write_csv)


def schema(**kw):
    base = dict(target_column="income", positive_label=">50K", protected_column="sex",
                protected_one_value="Male", feature_columns=[("job", "categorical"), ("age", "numeric")])
    base.update(kw)
    return DatasetSchema.from_dict(base)


@pytest.fixture
def toy_csv(tmp_path):
    p = tmp_path / "toy.csv"
    p.write_text("age,job,sex,income\n"
                 "30,clerk,Male,>50K\n"
                 "41,farmer,Female,<=50K\n"
                 "25,clerk,Female,>50K\n"
                 "52,farmer,Male,<=50K\n")
    return p


class TestSchema:
    def test_target_not_a_feature(self):
        with pytest.raises(DataError):
            schema(feature_columns=[("income", "numeric")])

    def test_needs_a_feature(self):
        with pytest.raises(DataError):
            schema(feature_columns=[])

    def test_json_round_trip(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text(json.dumps(schema().to_dict()))
        assert DatasetSchema.from_json(p) == schema()


class TestLoadCsv:
    def test_one_hot_width(self, toy_csv):
        d = load_csv(toy_csv, schema())
        assert (d.n, d.d) == (4, 3)
        assert d.feature_names == ("job=clerk", "job=farmer", "age")
        np.testing.assert_array_equal(d.y, [1, 0, 1, 0])
        np.testing.assert_array_equal(d.s, [1, 0, 0, 1])

    def test_missing_numeric_dropped(self, toy_csv):
        text = toy_csv.read_text() + ",clerk,Male,>50K\n"
        toy_csv.write_text(text)
        d = load_csv(toy_csv, schema())
        assert d.n == 4

    def test_adult_style_question_mark_dropped(self, toy_csv):
        toy_csv.write_text(toy_csv.read_text() + "33, ?, Female, <=50K\n")
        assert load_csv(toy_csv, schema()).n == 4

    def test_unknown_column(self, toy_csv):
        with pytest.raises(DataError, match="unknown column"):
            load_csv(toy_csv, schema(feature_columns=[("height", "numeric")]))

    def test_unparsable_numeric(self, toy_csv):
        toy_csv.write_text(toy_csv.read_text() + "old,clerk,Male,>50K\n")
        with pytest.raises(DataError, match="unparsable"):
            load_csv(toy_csv, schema())

    def test_single_group(self, tmp_path):
        p = tmp_path / "one.csv"
        p.write_text("age,job,sex,income\n30,clerk,Male,>50K\n31,clerk,Male,<=50K\n")
        with pytest.raises(DegenerateDataError, match="group 0"):
            load_csv(p, schema())

    def test_empty_after_drop(self, tmp_path):
        p = tmp_path / "e.csv"
        p.write_text("age,job,sex,income\n,clerk,Male,>50K\n")
        with pytest.raises(DegenerateDataError):
            load_csv(p, schema())

    def test_base_rate_matches_line_count(self, tmp_path):
        rng = np.random.default_rng(2)
        p = tmp_path / "adult.csv"
        lines = ["age,job,sex,income"]
        for _ in range(500):
            lines.append(f"{rng.integers(18, 90)},{rng.choice(['a', 'b', '?'])},"
                         f"{rng.choice(['Male', 'Female'])},{rng.choice(['>50K', '<=50K'])}")
        p.write_text("\n".join(lines) + "\n")
        kept = [ln for ln in lines[1:] if ",?," not in ln]
        expect = sum(ln.endswith(">50K") for ln in kept) / len(kept)
        d = load_csv(p, schema())
        assert d.y.mean() == expect

    def test_encoding_stable(self, toy_csv):
        a, b = load_csv(toy_csv, schema()), load_csv(toy_csv, schema())
        assert a.equals(b)

    def test_write_round_trip(self, toy_csv, tmp_path):
        d = load_csv(toy_csv, schema())
        out = tmp_path / "out.csv"
        write_csv(d, out)
        rows = list(csv.reader(out.open()))
        assert rows[0][:2] == ["y", "s"]
        assert len(rows) == 5


class TestDataset:
    def test_invariants(self):
        with pytest.raises(DataError):
            TabularDataset(np.zeros((2, 1)), [0, 2], [0, 1])
        with pytest.raises(DataError):
            TabularDataset(np.zeros((2, 1)), [0, 1], [0, 1], weights=[0, 0])

    def test_split_identity_and_partition(self):
        d = generate_imbalance(SyntheticImbalanceConfig(n=200))
        assert split(d, np.arange(200)).equals(d)
        idx = np.random.default_rng(0).permutation(200)
        a, b = split(d, idx[:70]), split(d, idx[70:])
        assert a.n + b.n == d.n

    def test_split_errors(self):
        d = generate_imbalance(SyntheticImbalanceConfig(n=50))
        with pytest.raises(IndexError):
            split(d, [0, 50])
        only0 = np.flatnonzero(d.s == 0)
        with pytest.raises(DegenerateDataError):
            split(d, only0)
        assert split(d, only0, lenient=True).n == len(only0)


class TestGenerateImbalance:
    def test_defaults(self):
        cfg = SyntheticImbalanceConfig()
        assert cfg.n == 25000 and cfg.betas == (0.0, 1.0, 1.0, 0.5, 0.5)
        d = generate_imbalance(cfg)
        assert abs(d.y.mean() - 0.5) < 0.02
        assert abs(d.s.mean() - 0.5) < 0.02

    def test_group_means(self):
        d = generate_imbalance(SyntheticImbalanceConfig(betas=(0, 1, 1, 0, 0), n=25000, seed=4))
        np.testing.assert_allclose(d.X[d.s == 0].mean(axis=0), [2, 2], atol=0.1)
        np.testing.assert_allclose(d.X[d.s == 1].mean(axis=0), [-2, -2], atol=0.1)

    def test_deterministic(self):
        cfg = SyntheticImbalanceConfig(n=1000, seed=9)
        assert generate_imbalance(cfg).equals(generate_imbalance(cfg))

    def test_covariances_recovered(self):
        d = generate_imbalance(SyntheticImbalanceConfig(n=50000, p_s=0.5, seed=1))
        np.testing.assert_allclose(np.cov(d.X[d.s == 0].T), [[5, 1], [1, 5]], atol=0.25)
        np.testing.assert_allclose(np.cov(d.X[d.s == 1].T), [[10, 1], [1, 3]], atol=0.4)

    @pytest.mark.parametrize("p_y", [0.05, 0.1, 0.25, 0.5, 0.75, 0.95])
    @pytest.mark.parametrize("p_s", [0.05, 0.5])
    def test_positive_rate_within_tolerance(self, p_y, p_s):
        for seed in range(3):
            cfg = SyntheticImbalanceConfig(p_y=p_y, p_s=p_s, n=25000, seed=seed)
            d = generate_imbalance(cfg)
            assert abs(d.y.mean() - p_y) <= positive_rate_tolerance(p_y, cfg.n)

    def test_moments_stable_across_seeds(self):
        means = [generate_imbalance(SyntheticImbalanceConfig(n=20000, seed=k)).X.mean(axis=0) for k in range(3)]
        np.testing.assert_allclose(means[0], means[1], atol=0.15)
        np.testing.assert_allclose(means[0], means[2], atol=0.15)

    @pytest.mark.parametrize("bad", [
        dict(p_y=0.0), dict(p_s=1.0), dict(sigma0=((1, 2), (2, 1))), dict(sigma1=((1, 0), (1, 1))),
    ])
    def test_invalid(self, bad):
        with pytest.raises(DataError):
            SyntheticImbalanceConfig(**bad)

    def test_json_round_trip(self, tmp_path):
        cfg = SyntheticImbalanceConfig(p_s=0.1, seed=3)
        p = tmp_path / "c.json"
        p.write_text(json.dumps(cfg.to_dict()))
        assert SyntheticImbalanceConfig.from_json(p) == cfg
