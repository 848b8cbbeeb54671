import json

import pytest

from qclab.harness import QCExperimentConfig, QCExperimentResult, TrialRecord, atomic_write_text, run_qc_experiment, \
    run_trial


def test_config_validation():
    with pytest.raises(ValueError):
        QCExperimentConfig(budgets=[10, 10])
    with pytest.raises(ValueError):
        QCExperimentConfig(alpha=1.5)
    with pytest.raises(ValueError):
        QCExperimentConfig(kappa=-0.1)
    with pytest.raises(ValueError):
        QCExperimentConfig(setting="cap", adversary="probe-scan")
    with pytest.raises(ValueError):
        QCExperimentConfig(setting="nope")
    with pytest.raises(ValueError):
        QCExperimentConfig(trials=0)


def test_eps_defaults():
    assert QCExperimentConfig().resolved_eps() == pytest.approx(0.16399819824211591, abs=1e-12)
    cfg = QCExperimentConfig(setting="intervals-linear", adversary="binary-search", z=3.0)
    assert cfg.resolved_eps() == pytest.approx(0.3)


def test_rates_and_empirical_qc():
    cfg = QCExperimentConfig(budgets=[1, 2], trials=2, kappa=0.5)
    recs = [TrialRecord(1, 0, 0, 0.0, 0.1, False), TrialRecord(1, 1, 0, 0.0, 0.1, False),
            TrialRecord(2, 0, 2, 0.1, 0.1, True), TrialRecord(2, 1, 2, 0.0, 0.1, False)]
    res = QCExperimentResult(cfg, recs)
    rates = res.rates()
    assert rates[1][0] == 0.0 and rates[2][0] == 0.5
    assert rates[2][1] < 0.5 < rates[2][2]
    assert res.empirical_qc == 2
    assert res.records_csv().splitlines()[0] == "budget,trial,queries_used,ar_p,ar_opt,success"
    doc = json.loads(res.summary_json())
    assert doc["summary"]["2"][0] == 0.5 and doc["config"]["budgets"] == [1, 2]


def test_zero_budget_is_query_free():
    cfg = QCExperimentConfig(budgets=[0], trials=1, d=30, n_eval=2000)
    r = run_trial(cfg, 0, 0)
    assert r.queries_used == 0 and not r.budget_violation


@pytest.mark.parametrize("setting,adversary", [("cap", "cap-randomized"), ("cap", "cap-deterministic"),
                                               ("intervals-linear", "binary-search"),
                                               ("intervals-1nn", "probe-scan")])
def test_worker_count_does_not_change_results(setting, adversary):
    cfg = QCExperimentConfig(setting=setting, adversary=adversary, budgets=[4, 40], trials=3, d=30, m=100.0,
                             z=3.0, n_eval=2000, seed=5)
    a = run_qc_experiment(cfg, workers=1)
    b = run_qc_experiment(cfg, workers=3)
    assert a.records_csv() == b.records_csv()
    assert len(a.records) == 6
    assert all(r.queries_used <= r.budget for r in a.records)


def test_atomic_write(tmp_path):
    p = tmp_path / "sub" / "f.txt"
    atomic_write_text(p, "hello\n")
    assert p.read_text() == "hello\n"
    assert [q.name for q in p.parent.iterdir()] == ["f.txt"]
