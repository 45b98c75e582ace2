import numpy as np
import pytest

from occusim.limit_oracle import equilibrium_ratio_oracle
from occusim.mc_stats import (ExperimentSpec, CompRecord, Report,
                              empirical_cov, equilibrium_ratio, block_layout,
                              config_digest, run_experiment,
                              run_equilibrium_contrast, PARTICLE_BUDGET)
from occusim.occupation import TimeWeight
from occusim.offspring_law import OffspringLaw
from occusim.particle_system import (SimConfig, SimulationWindow, InitSpec,
                                     StableParams)
from occusim.stable_motion import TestFunction


def _sim(half_width=10.0, init=None, event_cap=10_000_000, branch_rate=1.0):
    return SimConfig(stable=StableParams(0.75, 1),
                     law=OffspringLaw("binary"),
                     branch_rate=branch_rate,
                     init=init or InitSpec(),
                     window=SimulationWindow(half_width),
                     event_cap=event_cap)


def _phi():
    return TestFunction(1.0, (0.0,), 1.0)


def test_empirical_cov_matches_brute_jackknife():
    rng = np.random.default_rng(0)
    x = rng.normal(size=40)
    y = 0.5 * x + rng.normal(size=40)
    est, se = empirical_cov(x, y)
    n = len(x)
    assert est == pytest.approx(np.cov(x, y, ddof=1)[0, 1], rel=1e-12)
    # leave-one-out jackknife by brute force
    loo = np.array([np.cov(np.delete(x, i), np.delete(y, i), ddof=1)[0, 1]
                    for i in range(n)])
    se_brute = np.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2))
    assert se == pytest.approx(se_brute, rel=1e-9)
    with pytest.raises(ValueError):
        empirical_cov(x[:2], y[:2])


def test_equilibrium_ratio_delta_method():
    ratio, se = equilibrium_ratio(6.0, 0.3, 3.0, 0.2)
    assert ratio == pytest.approx(2.0)
    want = 2.0 * np.sqrt((0.3 / 6.0) ** 2 + (0.2 / 3.0) ** 2)
    assert se == pytest.approx(want, rel=1e-12)


def test_block_layout():
    cfg = _sim(half_width=100.0)   # mean population 200
    blocks = block_layout(cfg, 5000)
    assert sum(blocks) == 5000
    assert all(b >= 1 for b in blocks)
    assert max(blocks) * 200 <= PARTICLE_BUDGET * 1.5
    assert block_layout(cfg, 1) == [1]


def test_config_digest_stability():
    a = config_digest({"a": 1, "b": [1.5, 2.0]})
    b = config_digest({"b": [1.5, 2.0], "a": 1})
    assert a == b and len(a) == 16
    assert config_digest({"a": 2, "b": [1.5, 2.0]}) != a


def test_experiment_spec_validation():
    sim = _sim()
    spec = ExperimentSpec(sim=sim, phis=[_phi()], horizons=[2.0, 4.0],
                          out_grid=[1.0], replicas=7,
                          comparisons=["poisson_cov"])
    assert spec.replicas == [7, 7]
    with pytest.raises(ValueError):
        ExperimentSpec(sim=sim, phis=[], horizons=[2.0], out_grid=[1.0],
                       replicas=[5], comparisons=[])
    with pytest.raises(ValueError):
        ExperimentSpec(sim=sim, phis=[_phi()], horizons=[2.0],
                       out_grid=[1.0], replicas=[5, 6], comparisons=[])
    with pytest.raises(ValueError):
        ExperimentSpec(sim=sim, phis=[_phi()], horizons=[2.0],
                       out_grid=[1.0], replicas=[5],
                       comparisons=["bogus_check"])
    with pytest.raises(ValueError):
        ExperimentSpec(sim=sim, phis=[_phi()], horizons=[2.0],
                       out_grid=[1.0], replicas=[5], windows=[10.0, 20.0],
                       comparisons=[])


def _cov_spec(reps=500, seed=7):
    return ExperimentSpec(sim=_sim(half_width=10.0), phis=[_phi()],
                          horizons=[1.0], out_grid=[1.0], replicas=[reps],
                          comparisons=["poisson_cov"],
                          cov_pairs=[(0.5, 0.5), (0.5, 1.0)],
                          master_seed=seed, label="unit-cov")


def test_run_experiment_poisson_cov():
    report = run_experiment(_cov_spec(), workers=1, reproducible=True)
    assert len(report.records) == 2
    for r in report.records:
        assert r.name == "poisson_cov" and r.gate
        assert np.isfinite(r.z) and r.se > 0 and r.oracle > 0
        assert abs(r.z) < 6.0
    text = report.to_csv_text()
    lines = text.strip().split("\n")
    assert lines[0] == Report.CSV_HEADER
    assert len(lines) == 3
    assert report.metadata["mode"] == "poisson"
    assert "walltime_s" not in report.metadata
    assert not report.invalid


def test_run_experiment_workers_deterministic():
    a = run_experiment(_cov_spec(), workers=1, reproducible=True)
    b = run_experiment(_cov_spec(), workers=2, reproducible=True)
    assert a.to_csv_text() == b.to_csv_text()
    assert a.config_hash == b.config_hash


def test_run_experiment_records_walltime():
    rep = run_experiment(_cov_spec(reps=60), workers=1)
    assert "walltime_s" in rep.metadata


def test_abort_rate_marks_report_invalid():
    sim = _sim(half_width=1.5, event_cap=25, branch_rate=10.0)
    spec = ExperimentSpec(sim=sim, phis=[_phi()], horizons=[0.5],
                          out_grid=[1.0], replicas=[300],
                          comparisons=["poisson_cov"],
                          cov_pairs=[(0.25, 0.5)], master_seed=3,
                          label="abort-test")
    report = run_experiment(spec, workers=1, reproducible=True)
    assert report.metadata["aborted"][0] > 30
    assert report.invalid


def test_v_vs_n_record_shape():
    spec = ExperimentSpec(sim=_sim(half_width=30.0), phis=[_phi()],
                          horizons=[2.0], out_grid=[1.0], replicas=[10],
                          comparisons=["v_vs_n"],
                          weight=TimeWeight("constant"),
                          vn_points=[{"x": [0.0], "r": 0.0, "t": 1.0,
                                      "reps": 120, "T": 2.0}],
                          master_seed=5, label="vn-unit")
    report = run_experiment(spec, workers=1, reproducible=True)
    assert len(report.records) == 1
    r = report.records[0]
    assert r.name == "v_vs_n[x=0]"
    assert r.sided == "upper" and r.gate
    assert 0.0 <= r.estimate <= 1.0
    assert r.oracle > 0


def test_theorem_variance_scaled_run():
    # tiny ladder rung: estimates must land within a loose z band of the
    # exact finite-horizon oracle (window bias is ~1% at this geometry)
    spec = ExperimentSpec(sim=_sim(half_width=40.0), phis=[_phi()],
                          horizons=[2.0], out_grid=[0.5, 1.0],
                          replicas=[600],
                          comparisons=["finite_horizon_variance"],
                          dense_steps=[0.125], master_seed=11,
                          label="rung-unit")
    report = run_experiment(spec, workers=1, reproducible=True)
    recs = [r for r in report.records
            if r.name == "finite_horizon_variance"]
    assert len(recs) == 2
    for r in recs:
        assert abs(r.z) < 5.0, (r.s, r.z)


def test_run_equilibrium_contrast():
    def leg(init, half, seed):
        return ExperimentSpec(sim=_sim(half_width=half, init=init),
                              phis=[_phi()], horizons=[2.0], out_grid=[1.0],
                              replicas=[400],
                              comparisons=["theorem_variance"],
                              dense_steps=[0.125], master_seed=seed,
                              label="contrast-unit")
    spec_eq = leg(InitSpec("equilibrium", t_burn=1.0), 25.0, 21)
    spec_p = leg(None, 15.0, 22)
    report = run_equilibrium_contrast(spec_eq, spec_p, workers=1,
                                      reproducible=True)
    names = {r.name for r in report.records}
    assert "poisson.theorem_variance" in names
    assert "eq.theorem_variance" in names
    ratios = [r for r in report.records if r.name == "equilibrium_ratio"]
    assert len(ratios) == 1
    r = ratios[0]
    assert r.gate and r.se > 0
    assert r.oracle == pytest.approx(
        equilibrium_ratio_oracle(spec_eq.limit_params()), rel=1e-13)
    assert r.estimate > 1.0   # equilibrium variance exceeds Poisson
    # mismatched horizons must be rejected
    bad = leg(None, 15.0, 23)
    bad.horizons = [4.0]
    with pytest.raises(ValueError):
        run_equilibrium_contrast(spec_eq, bad)


def test_gate_failures_sidedness():
    recs = [CompRecord("a", 1, 0, 0, 1.0, 0.1, 1.0, 5.0, gate=True),
            CompRecord("b", 1, 0, 0, 1.0, 0.1, 1.0, -5.0, gate=True,
                       sided="upper"),
            CompRecord("c", 1, 0, 0, 1.0, 0.1, 1.0, 5.0, gate=False),
            CompRecord("d", 1, 0, 0, 1.0, 0.1, 1.0, np.nan, gate=True),
            CompRecord("e", 1, 0, 0, 1.0, 0.1, 1.0, 4.5, gate=True,
                       sided="upper")]
    report = Report("x", "h", recs, {})
    bad = {r.name for r in report.gate_failures(z_cut=4.0)}
    assert bad == {"a", "e"}
