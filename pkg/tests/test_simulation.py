"""Trial simulation, censoring calibration and Monte Carlo aggregation."""
import dataclasses
import json
import math

import numpy as np
import pytest
from builders import dataset, subj

from terminaltrend.data import Dataset, Subject, apply_efron_adjustment, partition_groups
from terminaltrend.naive import fit_cox_partial
from terminaltrend.simulation import (SCENARIOS, SimConfig, SimReport, _draw_survival,
                                      calibrate_cap, censoring_summary, pilot_censoring,
                                      run_monte_carlo, run_replicate, scenario_config,
                                      simulate_trial, true_beta_A, true_beta_mu)

SMALL = SimConfig(n_per_arm=60, seed=7)


class TestTrial:
    def test_tiny_cap_no_measurements(self):
        ds = simulate_trial(dataclasses.replace(SimConfig(), censor_cap=0.1), 3)
        death = ds.meta["true_death_times"]
        part = partition_groups(apply_efron_adjustment(ds))
        assert not part.g1 and not part.g3
        # only the rare deaths inside the first 0.1 months are observed
        for s, d in zip(ds.subjects, death):
            assert s.event == (d <= 0.1)
            assert s.obs_time == min(d, 0.1)

    def test_deterministic(self):
        a, b = simulate_trial(SMALL, 11), simulate_trial(SMALL, 11)
        assert all(x.same_as(y) for x, y in zip(a.subjects, b.subjects))
        c = simulate_trial(SMALL, 12)
        assert not all(x.same_as(y) for x, y in zip(a.subjects, c.subjects))

    def test_measurement_schedule(self):
        ds = simulate_trial(SimConfig(), 5)
        death = ds.meta["true_death_times"]
        for s, d in zip(ds.subjects, death):
            expect = int(math.floor((s.obs_time - 5.5) / 0.5)) + 1 if s.obs_time >= 5.5 else 0
            assert s.n_meas == expect
            if s.event:
                assert s.obs_time == d
            if s.n_meas:
                np.testing.assert_allclose(s.meas_times, 5.5 + 0.5 * np.arange(s.n_meas))

    def test_balanced_arms_and_covariates(self):
        ds = simulate_trial(SimConfig(), 6)
        arms = np.array([s.arm for s in ds.subjects])
        assert arms.sum() == 250 and arms.size == 500
        q = np.array([s.x_long[0] for s in ds.subjects])
        assert q.min() >= 100 and q.max() <= 150
        assert all(np.array_equal(s.x_long, s.x_surv) for s in ds.subjects)

    def test_true_curves(self):
        assert true_beta_mu(0.0) == 110.0
        assert true_beta_A(0.0) == pytest.approx(30 * math.exp(-0.92))
        assert true_beta_A(0.0) == pytest.approx(11.94, abs=0.02)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SimConfig(sigma2=0.0)
        with pytest.raises(ValueError):
            SimConfig(sex_prob=1.5)
        with pytest.raises(ValueError):
            SimConfig.from_dict({"bogus": 1})

    def test_config_json_roundtrip(self, tmp_path):
        p = tmp_path / "cfg.json"
        p.write_text(json.dumps(SimConfig(seed=3).to_dict()))
        assert SimConfig.from_json(p) == SimConfig(seed=3)


def test_dgp_marginals_large_sample():
    cfg = SimConfig(n_per_arm=50_000)
    arm, qol0, sex, death, _ = _draw_survival(cfg, np.random.default_rng(5))
    assert abs(qol0.mean() - 125.0) < 0.5
    empty = np.zeros(0)
    subs = tuple(Subject(id=str(i), arm=int(arm[i]), obs_time=float(death[i]), event=True,
                         x_long=(0.0,), x_surv=(qol0[i], sex[i]), meas_times=empty,
                         meas_values=empty, z=np.ones((0, 1))) for i in range(death.size))
    cox = fit_cox_partial(Dataset(subs, efron_applied=True))
    assert np.all(np.abs(cox.alpha_hat - np.array(cfg.alpha)) < 4 * cox.se)


class TestCensoring:
    def test_all_events(self):
        ds = dataset(subj("a", 0, 1, True), subj("b", 1, 2, True, [1.0]), efron=False)
        assert censoring_summary(ds) == (0.0, 0.0, 0.0)

    def test_two_beyond_last_death(self):
        subs = [subj(f"d{i}", i % 2, i + 1.0, True) for i in range(6)]
        subs += [subj("c1", 0, 2.5, False, [1.0]), subj("c2", 1, 3.5, False)]
        subs += [subj("c3", 0, 8.0, False, [1.0]), subj("c4", 1, 9.0, False)]
        assert censoring_summary(dataset(*subs, efron=False)) == (0.4, 0.2, 0.2)

    def test_trial_shaped_rates(self):
        # 207 subjects: 98 censored, 76 of them measured, 9 beyond the last death
        subs = [subj(f"d{i}", i % 2, 1.0 + i * 0.1, True, [0.5]) for i in range(109)]
        last = 1.0 + 108 * 0.1
        for i in range(98):
            T = last + 1 + i if i < 9 else 1.05 + i * 0.1
            subs.append(subj(f"c{i}", i % 2, T, False, [0.5] if i < 76 else []))
        ov, g3, cb = censoring_summary(dataset(*subs, efron=False))
        assert (round(100 * ov, 2), round(100 * g3, 2), round(100 * cb, 2)) == (47.34, 36.71,
                                                                              4.35)

    def test_summary_is_pre_adjustment(self):
        ds = simulate_trial(SMALL, 2)
        raw = censoring_summary(ds)
        assert censoring_summary(apply_efron_adjustment(ds))[2] <= raw[2]

    def test_pilot_matches_simulated_trials(self):
        cfg = SMALL
        pilot = pilot_censoring(cfg, n_draws=5, seed=100)
        per = np.array([censoring_summary(simulate_trial(cfg, 100 + r)) for r in range(5)])
        np.testing.assert_allclose(pilot, per.mean(axis=0), atol=1e-12)

    def test_default_calibration(self):
        ov, g3, cb = pilot_censoring(SimConfig())
        assert abs(ov - 0.487) < 0.02 and abs(g3 - 0.373) < 0.02 and abs(cb - 0.05) < 0.02

    def test_cap_recovered_at_baseline_rate(self):
        cfg = SimConfig()
        cb = pilot_censoring(cfg)[2]
        c = calibrate_cap(cfg, cb)
        assert abs(c - 33.65) < 0.05 * 33.65

    def test_cap_lowered_for_higher_rate(self):
        cfg = SimConfig()
        c = calibrate_cap(cfg, 0.15)
        assert c < cfg.censor_cap
        assert pilot_censoring(dataclasses.replace(cfg, censor_cap=c))[2] == pytest.approx(
            0.15, abs=0.005)

    def test_unbracketed_target(self):
        with pytest.raises(ValueError):
            # even a cap four times the default leaves about 0.3% beyond the last death
            calibrate_cap(SimConfig(), 1e-4)
        with pytest.raises(ValueError):
            calibrate_cap(SimConfig(), 0.0)

    @pytest.mark.parametrize("name,target", [("enable2", (0.2826, 0.1894)),
                                             ("intermediate", (0.37, 0.27))])
    def test_presets(self, name, target):
        ov, g3, _ = pilot_censoring(scenario_config(name), n_draws=300)
        assert abs(ov - target[0]) < 0.02 and abs(g3 - target[1]) < 0.02

    def test_scenarios(self):
        assert scenario_config("default") == SimConfig()
        assert set(SCENARIOS) >= {"enable2", "intermediate", "cbld10", "cbld12.5", "cbld15"}
        with pytest.raises(ValueError):
            scenario_config("nope")


@pytest.fixture(scope="module")
def one_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("mc")
    rep = run_monte_carlo(SMALL, 2, k_range=(2, 4), out_dir=out)
    return out, rep


class TestMonteCarlo:
    def test_replicate_record(self, one_run):
        out, rep = one_run
        recs = [json.loads(x) for x in (out / "replicates.jsonl").read_text().splitlines()]
        assert [r["index"] for r in recs] == [0, 1]
        assert [r["seed"] for r in recs] == [SMALL.seed, SMALL.seed + 1]
        r0 = recs[0]
        assert set(r0["params"]) == set(SimConfig().true_values)
        assert 2 <= r0["k_aic"] <= 4
        assert len(r0["curves"]["A"]["est"]) == rep.grid.size

    def test_single_replicate_identity(self):
        rec = run_replicate(SMALL, 0, k_range=(2, 3))
        rep = SimReport.from_records(SMALL, [rec])
        t = rep.table1.set_index("parameter")
        for name, (est, se) in rec["params"].items():
            assert t.loc[name, "mean"] == est and t.loc[name, "mean_se"] == se
            assert t.loc[name, "bias"] == est - SMALL.true_values[name]
        np.testing.assert_array_equal(rep.curves["mean_A"], rec["curves"]["A"]["est"])
        np.testing.assert_allclose(rep.curves["width_ratio_A"],
                                   np.divide(rec["curves"]["A"]["se"],
                                             rec["curves"]["A"]["naive_se"]))
        assert rep.mean_k("aic") == rec["k_aic"]

    def test_resume_reuses_records(self, one_run):
        out, rep = one_run
        again = run_monte_carlo(SMALL, 2, k_range=(2, 4), out_dir=out)
        assert len((out / "replicates.jsonl").read_text().splitlines()) == 2
        assert again.table1.equals(rep.table1)

    def test_write_and_load(self, one_run, tmp_path):
        out, rep = one_run
        rep.write(tmp_path)
        for f in ("table1.csv", "naive_table1.csv", "curve_cp.csv", "width_ratio.csv",
                  "censoring.csv", "knots_hist.csv", "summary.json"):
            assert (tmp_path / f).exists()
        back = SimReport.load(out)
        assert back.table1.equals(rep.table1) and back.curves.equals(rep.curves)
        summ = json.loads((tmp_path / "summary.json").read_text())
        assert summ["n_reps"] == 2 and summ["valid"]

    def test_cp_and_ratio_ranges(self, one_run):
        _, rep = one_run
        cp = rep.curves[[c for c in rep.curves if c.startswith("cp_")]].to_numpy()
        assert np.all((0 <= cp) & (cp <= 100))
        wr = rep.curves[[c for c in rep.curves if c.startswith("width_ratio")]].to_numpy()
        assert np.all(wr > 0)

    def test_failures_counted(self):
        recs = [{"index": i, "seed": i, "error": "RuntimeError: x"} for i in range(2)]
        rep = SimReport.from_records(SMALL, recs)
        assert rep.n_failed == 2 and not rep.valid

    def test_incomplete_run_rejected(self, one_run, tmp_path):
        out, _ = one_run
        (tmp_path / "config.json").write_text((out / "config.json").read_text())
        (tmp_path / "replicates.jsonl").write_text(
            (out / "replicates.jsonl").read_text().splitlines()[0] + "\n")
        with pytest.raises(ValueError, match="incomplete"):
            SimReport.load(tmp_path)

    def test_parallel_matches_serial(self, one_run, tmp_path):
        _, rep = one_run
        par = run_monte_carlo(SMALL, 2, k_range=(2, 4), out_dir=tmp_path, workers=2)
        assert par.table1.equals(rep.table1)

    def test_needs_a_replicate(self):
        with pytest.raises(ValueError):
            run_monte_carlo(SMALL, 0)
