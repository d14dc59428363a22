import numpy as np
import pytest
from scipy import stats as sps

from strokesight import evalstats as es


def rec(pid, true, pred, probs=(0.5, 0.5)):
    return es.PredictionRecord(pid, true, pred, np.asarray(probs, dtype=float))


class TestF1:
    def test_all_correct(self):
        records = [rec(f"p{i}", "A", "A") for i in range(4)]
        assert es.macro_f1(records) == 1.0
        assert es.accuracy(records) == 1.0

    def test_hand_computed_confusion(self):
        records = [rec("p1", "A", "A"), rec("p2", "A", "B"),
                   rec("p3", "B", "B"), rec("p4", "B", "B")]
        assert es.macro_f1(records) == pytest.approx(11 / 15)

    def test_single_class_warns(self):
        with pytest.warns(UserWarning):
            assert es.macro_f1([rec("p1", "A", "A")]) == 1.0

    def test_empty_raises(self):
        with pytest.raises(ValueError):
            es.macro_f1([])


class TestAUC:
    def test_perfect_separation(self):
        assert es.roc_auc(np.array([0.1, 0.2, 0.8, 0.9]),
                          np.array([0, 0, 1, 1])) == 1.0

    def test_all_ties_half(self):
        assert es.roc_auc(np.ones(8), np.array([0, 1] * 4)) == 0.5

    def test_hand_case(self):
        assert es.roc_auc(np.array([0.1, 0.4, 0.35, 0.8]),
                          np.array([0, 0, 1, 1])) == pytest.approx(0.75)

    def test_single_class_raises(self):
        with pytest.raises(ValueError):
            es.roc_auc(np.array([0.1, 0.2]), np.array([1, 1]))

    @pytest.mark.parametrize("n", range(2, 51))
    def test_matches_bruteforce_pairwise(self, n):
        rng = np.random.default_rng(n)
        labels = np.zeros(n, dtype=int)
        labels[rng.choice(n, size=rng.integers(1, n), replace=False)] = 1
        if labels.sum() in (0, n):
            labels[0] = 1 - labels[0]
        scores = np.round(rng.uniform(0, 1, n), 1)   # coarse grid forces ties
        pos = scores[labels == 1]
        neg = scores[labels == 0]
        cmp = (pos[:, None] > neg[None, :]) + 0.5 * (pos[:, None] == neg[None, :])
        brute = cmp.mean()
        assert es.roc_auc(scores, labels) == pytest.approx(brute, abs=1e-12)

    def test_ovr_aggregations(self):
        rng = np.random.default_rng(3)
        scores = rng.dirichlet(np.ones(3), size=30)
        labels = rng.integers(0, 3, 30)
        macro = es.roc_auc(scores, labels, "ovr_macro")
        micro = es.roc_auc(scores, labels, "ovr_micro")
        per_class = [es.roc_auc(scores[:, c], (labels == c).astype(int))
                     for c in range(3)]
        assert macro == pytest.approx(np.mean(per_class))
        assert 0.0 <= micro <= 1.0


class TestBootstrap:
    def test_single_patient_zero_width(self):
        records = [rec("p1", "A", "A") for _ in range(3)]
        lo, hi, _ = es.bootstrap_ci(records, es.accuracy, 100, seed=0)
        assert lo == hi == 1.0

    def test_ci_contains_point_estimate(self):
        rng = np.random.default_rng(0)
        records = [rec(f"p{i}", "A", "A" if rng.random() < 0.5 else "B")
                   for i in range(20)]
        point = es.accuracy(records)
        lo, hi, _ = es.bootstrap_ci(records, es.accuracy, 2000, seed=1)
        assert lo <= point <= hi

    def test_patient_is_resampling_unit(self):
        rng = np.random.default_rng(5)
        records = [rec(f"p{i}", "A", "A" if rng.random() < 0.7 else "B")
                   for i in range(15)]
        doubled = records + [es.PredictionRecord(r.patient_id, r.true_label,
                                                 r.predicted_label, r.probabilities)
                             for r in records]

        def patient_accuracy(rs):
            by_pid = {}
            for r in rs:
                by_pid.setdefault(r.patient_id, []).append(r.correct)
            return float(np.mean([np.mean(v) for v in by_pid.values()]))

        lo1, hi1, _ = es.bootstrap_ci(records, patient_accuracy, 3000, seed=7)
        lo2, hi2, _ = es.bootstrap_ci(doubled, patient_accuracy, 3000, seed=7)
        assert (lo1, hi1) == (lo2, hi2)


class TestMcNemar:
    def test_exact_hand_case(self):
        pairs = [(True, False)] * 8 + [(False, True)] * 2 + [(True, True)] * 7
        p, detail = es.mcnemar(pairs)
        assert detail["method"] == "exact"
        assert p == pytest.approx(0.109375, abs=1e-12)

    def test_symmetric_discordance_p1(self):
        pairs = [(True, False)] * 5 + [(False, True)] * 5
        p, _ = es.mcnemar(pairs)
        assert p == 1.0

    def test_swap_invariance(self):
        a = es.mcnemar([(True, False)] * 8 + [(False, True)] * 2)[0]
        b = es.mcnemar([(True, False)] * 2 + [(False, True)] * 8)[0]
        assert a == b

    def test_chi2_branch_matches_exact(self):
        pairs = [(True, False)] * 40 + [(False, True)] * 10
        p, detail = es.mcnemar(pairs)
        assert detail["method"] == "chi2_cc"
        assert p < 0.001
        exact = 2 * sps.binom.cdf(10, 50, 0.5)
        assert abs(p - exact) < 0.005

    def test_no_discordance(self):
        p, detail = es.mcnemar([(True, True)] * 5)
        assert p == 1.0 and "note" in detail


class TestDeLong:
    def test_identical_scores(self):
        rng = np.random.default_rng(0)
        s = rng.normal(size=12)
        labels = np.array([0, 1] * 6)
        delta, p, _ = es.delong(s, s, labels)
        assert delta == 0.0 and p == 1.0

    def test_variance_matches_double_loop_n6(self):
        rng = np.random.default_rng(1)
        labels = np.array([0, 0, 0, 1, 1, 1])
        sa, sb = rng.normal(size=6), rng.normal(size=6)
        _, _, detail = es.delong(sa, sb, labels)

        def components(scores):
            pos = scores[labels == 1]
            neg = scores[labels == 0]
            m, n = len(pos), len(neg)
            v10 = np.zeros(m)
            v01 = np.zeros(n)
            for i in range(m):
                for j in range(n):
                    psi = 1.0 if pos[i] > neg[j] else (0.5 if pos[i] == neg[j] else 0.0)
                    v10[i] += psi / n
                    v01[j] += psi / m
            return v10, v01

        v10a, v01a = components(sa)
        v10b, v01b = components(sb)
        m, n = 3, 3

        def cov(x, y):
            return np.sum((x - x.mean()) * (y - y.mean())) / (len(x) - 1)

        var = ((cov(v10a, v10a) + cov(v10b, v10b) - 2 * cov(v10a, v10b)) / m +
               (cov(v01a, v01a) + cov(v01b, v01b) - 2 * cov(v01a, v01b)) / n)
        assert abs(detail["var"] - var) < 1e-12

    def test_anticorrelated_significant(self):
        n = 20
        labels = np.array([0, 1] * (n // 2))
        scores_a = labels.astype(float) * 0.8 + np.linspace(0, 0.1, n)
        scores_b = 1.0 - scores_a
        _, p, _ = es.delong(scores_a, scores_b, labels)
        assert p < 0.01

    def test_tied_scores_error(self):
        labels = np.array([0, 1] * 3)
        with pytest.raises(ValueError, match="tied"):
            es.delong(np.ones(6), np.arange(6.0), labels)


class TestECE:
    def test_perfectly_sharp_correct(self):
        records = [rec(f"p{i}", "A", "A", probs=(1.0, 0.0)) for i in range(10)]
        assert es.ece(records).ece == 0.0

    def test_two_bin_hand_case(self):
        records = ([rec(f"a{i}", "A", "A", probs=(0.9, 0.1)) for i in range(8)] +
                   [rec(f"a{i+8}", "A", "B", probs=(0.9, 0.1)) for i in range(2)] +
                   [rec(f"b{i}", "A", "A", probs=(0.6, 0.4)) for i in range(7)] +
                   [rec(f"b{i+7}", "A", "B", probs=(0.6, 0.4)) for i in range(3)])
        assert es.ece(records).ece == pytest.approx(0.1)

    def test_single_bin_matched(self):
        records = ([rec(f"p{i}", "A", "A", probs=(0.62, 0.38)) for i in range(62)] +
                   [rec(f"q{i}", "A", "B", probs=(0.62, 0.38)) for i in range(38)])
        assert es.ece(records).ece == pytest.approx(0.0, abs=1e-12)

    def test_bounds_and_bin_total(self):
        rng = np.random.default_rng(2)
        records = [rec(f"p{i}", "A", "A" if rng.random() < 0.6 else "B",
                       probs=(lambda c: (c, 1 - c))(rng.uniform(0.34, 1.0)))
                   for i in range(200)]
        report = es.ece(records)
        assert 0.0 <= report.ece <= 1.0
        assert report.bin_counts.sum() == 200


class TestBenjaminiHochberg:
    def test_single_small_p(self):
        q, rej = es.benjamini_hochberg([0.03])
        assert rej[0]

    def test_step_up_hand_case(self):
        q, rej = es.benjamini_hochberg([0.01, 0.04, 0.03, 0.005])
        assert rej.all()

    def test_all_ones(self):
        q, rej = es.benjamini_hochberg([1.0, 1.0, 1.0])
        assert not rej.any()
        np.testing.assert_array_equal(q, 1.0)

    def test_q_monotone_in_sorted_order(self):
        rng = np.random.default_rng(4)
        p = rng.uniform(0, 1, 25)
        q, _ = es.benjamini_hochberg(list(p))
        order = np.argsort(p)
        assert np.all(np.diff(q[order]) >= -1e-12)

    def test_invalid_p(self):
        with pytest.raises(ValueError):
            es.benjamini_hochberg([1.5])
