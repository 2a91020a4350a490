"""End-to-end acceptance checks, one test per criterion.

Each test prints a ``criterion N PASS/FAIL`` line, and the terminal summary
repeats them. Criteria 6 to 8 share one leave-one-well-out fold cache on the
default 20-well field (200 trees), which dominates the runtime.
"""

import math
import time
import warnings

import numpy as np
import pytest
from scipy.stats import rankdata

from drillwatch.detect import (DetectorConfig, DetectorKind, EventSource, change_points, drop_thin_layers,
                               log_likelihood_ratio, step_cusum, step_posterior, step_shiryaev_roberts)
from drillwatch.gbdt import GbdtConfig, fit_gbdt, predict_proba
from drillwatch.harness import GridSpec, difficulty_analysis, evaluate_folds, grid_search, predict_folds
from drillwatch.metrics import (accuracy_l, accuracy_n, change_detection_report, match_changes,
                                ranking_metrics)
from drillwatch.preprocess import pool_features, prepare_well
from drillwatch.synth import SynthConfig, generate_field
from drillwatch.welldata import DataWarning, Lithotype, label_runs

import oracles

S, Sh = Lithotype.SAND, Lithotype.SHALE
CEILING = 1e30


def runs(*spec):
    return np.concatenate([np.full(n, lab, dtype=np.int8) for lab, n in spec])


def random_labels(rng, n):
    out, lab = [], int(rng.integers(0, 2))
    while len(out) < n:
        out += [lab] * int(rng.geometric(rng.choice([0.02, 0.1, 0.5])))
        lab = 1 - lab
    return np.array(out[:n], dtype=np.int8)


def rates_agree(got, want, tol=1e-12):
    return (math.isnan(got) and math.isnan(want)) or abs(got - want) <= tol


@pytest.fixture(scope="session")
def field():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DataWarning)
        return generate_field(SynthConfig())


@pytest.fixture(scope="session")
def folds(field):
    start = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", DataWarning)
        out = predict_folds(field, GbdtConfig())
    return out, time.perf_counter() - start


@pytest.fixture(scope="session")
def baseline_and_ctl(folds):
    cached, _ = folds
    return (evaluate_folds(cached, DetectorConfig(DetectorKind.NONE)),
            evaluate_folds(cached, DetectorConfig()))


def test_accuracy_n_fixture(criterion):
    with criterion(1, "Accuracy N fixture evaluates to 0.625") as c:
        start = time.perf_counter()
        actual = runs((S, 100), (Sh, 100), (S, 100), (Sh, 100))
        predicted = runs((S, 108), (Sh, 87), (S, 55), (Sh, 90), (S, 20), (Sh, 20), (S, 20))
        value = accuracy_n(actual, predicted)
        elapsed = time.perf_counter() - start
        c.note(f"value {value}, {elapsed:.3f} s")
        assert value == 0.625
        assert elapsed < 1.0


def test_statistic_oracles(criterion):
    with criterion(2, "CUSUM, Shiryaev-Roberts and posterior match their closed forms") as c:
        start = time.perf_counter()
        rng = np.random.default_rng(2)
        capped = 0
        for _ in range(1000):
            n = int(rng.integers(1, 51))
            probs = rng.uniform(0.02, 0.98, n)
            regime = int(rng.integers(0, 2))
            z = [log_likelihood_ratio(p, regime) for p in probs]
            lams = [math.exp(v) for v in z]

            s, cus = 0.0, []
            for v in z:
                s = step_cusum(s, v)
                cus.append(s)
            np.testing.assert_allclose(cus, oracles.cusum_max_form(z), rtol=1e-9, atol=1e-12)

            r, q, sr, post = 0.0, 0.0, [], []
            for lam in lams:
                r = step_shiryaev_roberts(r, lam)
                q = step_posterior(q, lam, 1e-12)
                sr.append(r)
                post.append(q)
            want = np.asarray(oracles.sr_double_sum(lams))
            free = want < CEILING
            capped += int((~free).sum())
            np.testing.assert_allclose(np.asarray(sr)[free], want[free], rtol=1e-9)
            assert (np.asarray(sr)[~free] == CEILING).all()
            np.testing.assert_allclose(post, sr, rtol=1e-9)
        elapsed = time.perf_counter() - start
        c.note(f"{capped} saturated steps checked against the cap, {elapsed:.2f} s")
        assert elapsed < 10.0


def test_thin_layer_properties(criterion):
    with criterion(3, "thin-layer dropping: no short interior run, idempotent, no new labels") as c:
        start = time.perf_counter()
        rng = np.random.default_rng(3)
        for _ in range(1000):
            x = random_labels(rng, int(rng.integers(1, 301)))
            w = int(rng.integers(1, 31))
            out = drop_thin_layers(x, w)
            assert all(stop - begin > w for begin, stop, _ in label_runs(out)[1:-1])
            assert np.array_equal(drop_thin_layers(out, w), out)
            assert set(out.tolist()) <= set(x.tolist())
        elapsed = time.perf_counter() - start
        c.note(f"{elapsed:.2f} s")
        assert elapsed < 5.0


def test_metric_oracles(criterion):
    with criterion(4, "delay, TP, FP, Accuracy L and Accuracy N match brute force") as c:
        start = time.perf_counter()
        rng = np.random.default_rng(4)
        for _ in range(500):
            n = int(rng.integers(1, 201))
            a, p = random_labels(rng, n), random_labels(rng, n)
            al, pl = a.tolist(), p.tolist()
            got = match_changes(change_points(a, source=EventSource.ACTUAL), change_points(p))
            assert [(m.actual_index, m.predicted_index) for m in got] == oracles.match(al, pl)
            rep = change_detection_report(a, p)
            delay, pct, tp, fp = oracles.change_report(al, pl)
            assert (rep.tp_alarms, rep.fp_alarms) == (tp, fp)
            assert rates_agree(rep.mean_delay_m, delay)
            assert rates_agree(rep.pct_within_20m, pct)
            assert rates_agree(accuracy_l(a, p), oracles.accuracy_l(al, pl))
            assert rates_agree(accuracy_n(a, p), oracles.accuracy_n(al, pl))
        elapsed = time.perf_counter() - start
        c.note(f"{elapsed:.2f} s")
        assert elapsed < 30.0


def test_gbdt_sanity(criterion, field):
    with criterion(5, "GBDT loss monotone, separable AUC, rank-transform invariance") as c:
        start = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DataWarning)
            mats = [prepare_well(w) for w in field]
        X, y, _ = pool_features(mats)
        model = fit_gbdt(X, y, GbdtConfig())
        losses = np.asarray(model.train_loss)
        assert losses.size == 200
        assert (np.diff(losses) <= 0).all()
        c.note(f"log-loss {losses[0]:.4f} -> {losses[-1]:.4f}")

        rng = np.random.default_rng(5)
        w = rng.normal(size=4)
        Xs = rng.normal(size=(600, 4))
        margin = Xs @ w
        keep = np.abs(margin) > 0.1
        Xs, ys = Xs[keep], (margin[keep] > 0).astype(float)
        half = len(ys) // 2
        toy = fit_gbdt(Xs[:half], ys[:half], GbdtConfig(n_trees=200, min_leaf=5))
        auc = ranking_metrics(ys[half:], predict_proba(toy, Xs[half:])).roc_auc
        c.note(f"toy AUC {auc:.4f}")
        assert auc >= 0.99

        sub = rng.choice(len(y), 4000, replace=False)
        Xr = np.column_stack([rankdata(col, method="dense") for col in X[sub].T]).astype(float)
        cfg = GbdtConfig(n_trees=50)
        raw = predict_proba(fit_gbdt(X[sub], y[sub], cfg), X[sub])
        ranked = predict_proba(fit_gbdt(Xr, y[sub], cfg), Xr)
        assert raw.tobytes() == ranked.tobytes()
        elapsed = time.perf_counter() - start
        c.note(f"{elapsed:.1f} s")
        assert elapsed < 120.0


def test_ctl_improves_on_raw_labels(criterion, folds, baseline_and_ctl):
    with criterion(6, "CTL beats raw labels on Accuracy N and FP at a small delay cost") as c:
        _, fold_seconds = folds
        start = time.perf_counter()
        raw, ctl = baseline_and_ctl
        elapsed = fold_seconds + time.perf_counter() - start
        r, t = raw.aggregate_median, ctl.aggregate_median
        c.note(f"Acc N {r['accuracy_n']:.4f} -> {t['accuracy_n']:.4f}, FP {r['fp_alarms']:g} -> "
               f"{t['fp_alarms']:g}, delay {r['mean_delay_m']:.2f} -> {t['mean_delay_m']:.2f} m, {elapsed:.0f} s")
        assert not raw.failed and not ctl.failed
        assert t["accuracy_n"] > r["accuracy_n"]
        assert t["fp_alarms"] < r["fp_alarms"]
        assert r["mean_delay_m"] < t["mean_delay_m"] <= 20.0
        assert elapsed < 600.0


def test_difficulty_direction(criterion, field, baseline_and_ctl):
    with criterion(7, "identified changes have larger density contrast than missed ones") as c:
        _, ctl = baseline_and_ctl
        out = difficulty_analysis(field, ctl)
        assert out is not None
        ident, unid = float(out.identified.mean()), float(out.unidentified.mean())
        c.note(f"{out.identified.size} identified mean {ident:.4f}, "
               f"{out.unidentified.size} unidentified mean {unid:.4f}")
        assert out.unidentified.size > 0
        assert ident > unid


def test_protocol_integrity(criterion, field, folds, baseline_and_ctl):
    with criterion(8, "no hold-out rows in training folds; grid search reproduces the default cell") as c:
        cached, _ = folds
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DataWarning)
            for wid, fold in cached.items():
                others = [prepare_well(w) for w in field if w.well_id != wid]
                _, _, groups = pool_features(others)
                assert wid not in set(groups.tolist())
                assert wid not in fold.train_wells
                assert set(fold.train_wells) == set(field.ids) - {wid}
        standalone = baseline_and_ctl[1]
        _, rows = grid_search(field, GridSpec(DetectorKind.THIN_LAYER, thin_w=(5, 15, 45)), GbdtConfig(),
                              folds=cached)
        cell = next(r for r in rows if r.detector == DetectorConfig())
        for wid, rep in standalone.per_well.items():
            other = cell.result.per_well[wid]
            assert rep.matches == other.matches
            mine, theirs = rep.scalars(), other.scalars()
            assert all(rates_agree(mine[k], theirs[k], 0.0) for k in mine)
        for how in ("aggregate_median", "aggregate_mean", "aggregate_std"):
            mine, theirs = getattr(standalone, how), getattr(cell.result, how)
            assert all(rates_agree(mine[k], theirs[k], 0.0) for k in mine)
        c.note(f"{len(cached)} folds audited, default cell ranked {cell.rank} of {len(rows)}")
