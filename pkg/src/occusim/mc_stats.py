"""Replicated experiments, estimators, and comparison reports.

An ExperimentSpec bundles a simulator configuration with the horizons,
grids, replica counts and the list of statistical comparisons to run.
Replicas are split into fixed blocks whose sizes depend only on the spec,
each block gets its own SeedSequence spawn key, and block results are
reduced in block order, so a report is byte-identical for any --workers
value (parallelism changes scheduling, never arithmetic).

Estimators: unbiased sample covariance with a leave-one-out jackknife
standard error, and a delta-method ratio for the equilibrium contrast.
Every comparison row carries (estimate, se, oracle, z); rows marked as
gating decide the process exit status downstream.
"""

import json
import hashlib
import time
import numpy as np
from dataclasses import dataclass, field, replace
from multiprocessing import get_context

from .stable_motion import TestFunction
from .particle_system import (SimConfig, SimulationWindow, run_replica_block,
                              auto_half_width)
from .occupation import (TimeWeight, FluctuationPath, occupation_fluctuation,
                         space_time_pairing, compute_n, estimate_v, norming)
from . import limit_oracle as lo

PARTICLE_BUDGET = 400_000
ABORT_RATE_LIMIT = 0.10

KNOWN_COMPARISONS = ("poisson_cov", "theorem_variance", "theorem_cross_cov",
                     "finite_horizon_variance", "space_time_var", "v_vs_n")


@dataclass
class ExperimentSpec:
    """A replicated simulation study with named statistical comparisons.

    horizons, replicas, windows, dense_steps line up indexwise; windows or
    dense_steps may be None to use the config window / T/512 everywhere.
    cov_pairs are absolute time pairs for poisson_cov; vn_points are dicts
    with keys x, r, t (and optionally reps) for the v-vs-n check.
    """
    sim: SimConfig
    phis: list
    horizons: list
    out_grid: list
    replicas: list
    comparisons: list
    weight: TimeWeight = None
    windows: list = None
    dense_steps: list = None
    cov_pairs: list = None
    vn_points: list = None
    master_seed: int = 0
    label: str = ""

    def __post_init__(self):
        if not self.phis:
            raise ValueError("need at least one test function")
        if np.isscalar(self.replicas):
            self.replicas = [int(self.replicas)] * len(self.horizons)
        if len(self.replicas) != len(self.horizons):
            raise ValueError("replicas must match horizons")
        if self.windows is not None and len(self.windows) != len(self.horizons):
            raise ValueError("windows must match horizons")
        if self.dense_steps is not None and \
                len(self.dense_steps) != len(self.horizons):
            raise ValueError("dense_steps must match horizons")
        for c in self.comparisons:
            if c not in KNOWN_COMPARISONS:
                raise ValueError("unknown comparison %r" % (c,))

    def limit_params(self):
        return lo.LimitParams(self.sim.stable.alpha, self.sim.stable.dim,
                              self.sim.branch_rate,
                              self.sim.law.second_factorial_moment())

    def config_for(self, ih):
        cfg = self.sim
        if self.windows is not None:
            cfg = replace(cfg, window=SimulationWindow(
                float(self.windows[ih]), cfg.window.truncation_epsilon))
        return cfg

    def dense_step_for(self, ih):
        if self.dense_steps is not None:
            return float(self.dense_steps[ih])
        return float(self.horizons[ih]) / 512.0


@dataclass
class CompRecord:
    """One comparison row: estimate vs oracle with a z-score."""
    name: str
    horizon: float
    s: float
    t: float
    estimate: float
    se: float
    oracle: float
    z: float
    gate: bool = False
    sided: str = "two"

    def row(self):
        def fmt(x):
            return "" if x is None or (isinstance(x, float) and np.isnan(x)) \
                else "%.17g" % x
        return [self.name, fmt(self.horizon), fmt(self.s), fmt(self.t),
                fmt(self.estimate), fmt(self.se), fmt(self.oracle),
                fmt(self.z)]


@dataclass
class Report:
    """Comparison records plus run metadata; serializes to CSV and JSON."""
    label: str
    config_hash: str
    records: list
    metadata: dict

    CSV_HEADER = "name,T,s,t,estimate,se,oracle,z"

    def to_csv_text(self):
        lines = [self.CSV_HEADER]
        for r in self.records:
            lines.append(",".join(r.row()))
        return "\n".join(lines) + "\n"

    def to_json_dict(self):
        recs = []
        for r in self.records:
            recs.append({"name": r.name, "T": r.horizon, "s": r.s, "t": r.t,
                         "estimate": r.estimate, "se": r.se,
                         "oracle": r.oracle, "z": r.z, "gate": r.gate,
                         "sided": r.sided})
        return {"label": self.label, "config_hash": self.config_hash,
                "records": recs, "metadata": self.metadata}

    def write(self, csv_path, json_path=None):
        with open(csv_path, "w") as f:
            f.write(self.to_csv_text())
        if json_path:
            with open(json_path, "w") as f:
                json.dump(self.to_json_dict(), f, indent=1, sort_keys=True)
                f.write("\n")

    def gate_failures(self, z_cut=4.0):
        bad = []
        for r in self.records:
            if not r.gate or not np.isfinite(r.z):
                continue
            if r.sided == "upper":
                if r.z > z_cut:
                    bad.append(r)
            elif abs(r.z) > z_cut:
                bad.append(r)
        return bad

    @property
    def invalid(self):
        return bool(self.metadata.get("invalid", False))


def config_digest(obj):
    """Stable short hash of a JSON-serializable description."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def empirical_cov(x, y):
    """Unbiased covariance of paired samples with a jackknife SE.

    Returns (estimate, se). The jackknife uses the exact leave-one-out
    update of the centered cross sum, so it costs O(R).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = len(x)
    if r < 3 or len(y) != r:
        raise ValueError("need at least 3 paired samples")
    a = x - x.mean()
    b = y - y.mean()
    s = float(a @ b)
    est = s / (r - 1)
    # leave-one-out: S_(i) = S - a_i b_i * r/(r-1); theta_(i) = S_(i)/(r-2)
    loo = (s - a * b * (r / (r - 1.0))) / (r - 2.0)
    se = float(np.sqrt((r - 1.0) / r * np.sum((loo - loo.mean()) ** 2)))
    return est, se


def equilibrium_ratio(var_eq, se_eq, var_p, se_p):
    """Delta-method ratio of two independent variance estimates."""
    if var_p <= 0:
        raise ValueError("denominator variance must be positive")
    ratio = var_eq / var_p
    se = abs(ratio) * np.sqrt((se_eq / var_eq) ** 2 + (se_p / var_p) ** 2)
    return ratio, se


# ---------------------------------------------------------------------------
# block scheduling

def block_layout(config, n_reps):
    """Fixed block sizes from the particle budget; independent of workers."""
    d = config.stable.dim
    pop = max((2.0 * config.window.half_width) ** d, 1.0)
    per = int(max(1, min(n_reps, PARTICLE_BUDGET // int(pop) or 1)))
    sizes = []
    left = n_reps
    while left > 0:
        take = min(per, left)
        sizes.append(take)
        left -= take
    return sizes


def _run_block_task(task):
    (ih, ib, config, n_reps, master_seed, times, phis) = task
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(ih, ib))
    rng = np.random.default_rng(seq)
    obs, aborted, events = run_replica_block(config, n_reps, rng, times, phis)
    return ih, ib, obs, aborted, events


def _simulate_horizon(spec, ih, times, workers):
    config = spec.config_for(ih)
    n_reps = int(spec.replicas[ih])
    sizes = block_layout(config, n_reps)
    tasks = []
    for ib, nb in enumerate(sizes):
        tasks.append((ih, ib, config, nb, spec.master_seed, times, spec.phis))
    if workers > 1 and len(tasks) > 1:
        ctx = get_context("spawn")
        with ctx.Pool(min(workers, len(tasks))) as pool:
            results = pool.map(_run_block_task, tasks, chunksize=1)
    else:
        results = [_run_block_task(t) for t in tasks]
    results.sort(key=lambda r: (r[0], r[1]))
    obs = np.concatenate([r[2] for r in results], axis=1)
    aborted = np.concatenate([r[3] for r in results])
    events = np.concatenate([r[4] for r in results])
    return obs, aborted, events


def _dense_times(spec, ih):
    T = float(spec.horizons[ih])
    step = spec.dense_step_for(ih)
    n = int(round(T / step))
    if abs(n * step - T) > 1e-9 * T:
        raise ValueError("dense step must divide the horizon")
    return np.linspace(0.0, T, n + 1)


def _index_of_time(times, t, scale):
    i = int(np.argmin(np.abs(times - t)))
    if abs(times[i] - t) > 1e-9 * max(scale, 1.0):
        raise ValueError("time %g not on the observation grid" % t)
    return i


def run_experiment(spec, workers=1, reproducible=False):
    """Run every horizon of the spec and assemble the comparison report."""
    t_start = time.time()
    params = spec.limit_params()
    mode = spec.sim.init.kind
    needs_dense = bool({"theorem_variance", "theorem_cross_cov",
                        "finite_horizon_variance", "space_time_var"} &
                       set(spec.comparisons))
    records = []
    meta = {"replicas": [int(r) for r in spec.replicas],
            "horizons": [float(t) for t in spec.horizons],
            "mode": mode, "aborted": [], "events_max": [],
            "workers_seen": int(workers)}
    spec_desc = {"label": spec.label, "seed": spec.master_seed,
                 "horizons": list(map(float, spec.horizons)),
                 "replicas": list(map(int, spec.replicas)),
                 "comparisons": list(spec.comparisons), "mode": mode}
    t_burn = spec.sim.init.t_burn if mode == "equilibrium" else 0.0

    for ih, T in enumerate(map(float, spec.horizons)):
        if needs_dense:
            times = _dense_times(spec, ih)
        elif spec.cov_pairs:
            uniq = sorted({float(t) for pair in spec.cov_pairs for t in pair})
            times = np.asarray(uniq)
        else:
            times = np.asarray([T])
        obs, aborted, events = _simulate_horizon(spec, ih, times, workers)
        meta["aborted"].append(int(aborted.sum()))
        meta["events_max"].append(int(events.max()) if len(events) else 0)
        if aborted.mean() > ABORT_RATE_LIMIT:
            meta["invalid"] = True
        live = ~aborted
        obs = obs[:, live]
        gate_T = (ih == len(spec.horizons) - 1)

        if "poisson_cov" in spec.comparisons and spec.cov_pairs:
            psi = spec.phis[1] if len(spec.phis) > 1 else spec.phis[0]
            for u, v in spec.cov_pairs:
                iu = _index_of_time(times, float(u), T)
                iv = _index_of_time(times, float(v), T)
                est, se = empirical_cov(obs[iu, :, 0],
                                        obs[iv, :, min(1, obs.shape[2] - 1)])
                orc = lo.poisson_system_covariance(float(u), float(v),
                                                   spec.phis[0], psi, params)
                z = (est - orc) / se if se > 0 else np.nan
                records.append(CompRecord("poisson_cov", T, float(u),
                                          float(v), est, se, orc, z,
                                          gate=True))

        if needs_dense:
            # centering needs per-phi mass, so build paths per test function
            for j, phi in enumerate(spec.phis):
                tag = "" if len(spec.phis) == 1 else "[phi%d]" % j
                path = occupation_fluctuation(
                    times, obs[:, :, j], phi.mass, T, spec.out_grid,
                    norm=norming(T, params.alpha, params.d))
                x = path.values  # (n_out, R)
                if "theorem_variance" in spec.comparisons:
                    for it, tf in enumerate(spec.out_grid):
                        est, se = empirical_cov(x[it], x[it])
                        orc = lo.theorem_covariance(mode, tf, tf, phi, phi,
                                                    params)
                        z = (est - orc) / se if se > 0 else np.nan
                        records.append(CompRecord(
                            "theorem_variance" + tag, T, tf, tf, est, se,
                            orc, z, gate=gate_T))
                if "finite_horizon_variance" in spec.comparisons:
                    for it, tf in enumerate(spec.out_grid):
                        est, se = empirical_cov(x[it], x[it])
                        orc = lo.occupation_covariance(
                            T, tf, tf, phi, phi, params, t_burn=t_burn)
                        z = (est - orc) / se if se > 0 else np.nan
                        records.append(CompRecord(
                            "finite_horizon_variance" + tag, T, tf, tf, est,
                            se, orc, z, gate=True))
                if "theorem_cross_cov" in spec.comparisons:
                    for ia in range(len(spec.out_grid)):
                        for ib_ in range(ia + 1, len(spec.out_grid)):
                            sf = spec.out_grid[ia]
                            tf = spec.out_grid[ib_]
                            est, se = empirical_cov(x[ia], x[ib_])
                            orc = lo.theorem_covariance(mode, sf, tf, phi,
                                                        phi, params)
                            z = (est - orc) / se if se > 0 else np.nan
                            records.append(CompRecord(
                                "theorem_cross_cov" + tag, T, sf, tf, est,
                                se, orc, z, gate=gate_T))
                if "space_time_var" in spec.comparisons and \
                        spec.weight is not None:
                    dense_path = occupation_fluctuation(
                        times, obs[:, :, j], phi.mass, T,
                        (times[1:] / T).tolist(),
                        norm=norming(T, params.alpha, params.d))
                    full_grid = np.concatenate([[0.0], dense_path.grid])
                    full_vals = np.concatenate(
                        [np.zeros((1,) + dense_path.values.shape[1:]),
                         dense_path.values], axis=0)
                    pairing = space_time_pairing(
                        FluctuationPath(full_grid, full_vals, T,
                                        dense_path.norm), spec.weight)
                    est, se = empirical_cov(pairing, pairing)
                    orc = lo.limit_laplace_exponent(phi, spec.weight, mode,
                                                    params)
                    z = (est - orc) / se if se > 0 else np.nan
                    records.append(CompRecord(
                        "space_time_var" + tag, T, np.nan, np.nan, est, se,
                        orc, z, gate=gate_T))

    if "v_vs_n" in spec.comparisons and spec.vn_points:
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=spec.master_seed,
                                   spawn_key=(10**6,)))
        for pt in spec.vn_points:
            T = float(pt.get("T", spec.horizons[-1]))
            reps = int(pt.get("reps", 400))
            x = np.asarray(pt["x"], dtype=float)
            r_off = float(pt["r"])
            t_len = float(pt["t"])
            v, se = estimate_v(x, r_off, t_len, spec.phis[0], spec.weight,
                               T, spec.sim, reps, rng)
            n_val = compute_n(x, r_off, t_len, spec.phis[0], spec.weight,
                              T, params)
            z = (v - n_val) / se if se > 0 else np.nan
            tag = ",".join("%g" % c for c in np.atleast_1d(x))
            records.append(CompRecord("v_vs_n[x=%s]" % tag, T, r_off, t_len,
                                      v, se, n_val, z, gate=True,
                                      sided="upper"))

    if not reproducible:
        meta["walltime_s"] = round(time.time() - t_start, 3)
    report = Report(label=spec.label, config_hash=config_digest(spec_desc),
                    records=records, metadata=meta)
    return report


def run_equilibrium_contrast(spec_eq, spec_p, workers=1, reproducible=False):
    """Run an equilibrium spec and a Poisson spec, then form variance ratios.

    Both specs must share horizons and out_grid. The ratio records compare
    the empirical equilibrium/Poisson variance ratio per (T, t) against the
    limit oracle 1/(2 - 2^{h-1}) (t-independent); gating happens at the
    largest horizon only.
    """
    if list(spec_eq.horizons) != list(spec_p.horizons):
        raise ValueError("contrast specs must share horizons")
    if list(spec_eq.out_grid) != list(spec_p.out_grid):
        raise ValueError("contrast specs must share out_grid")
    rep_eq = run_experiment(spec_eq, workers=workers,
                            reproducible=reproducible)
    rep_p = run_experiment(spec_p, workers=workers, reproducible=reproducible)
    params = spec_eq.limit_params()
    oracle = lo.equilibrium_ratio_oracle(params)
    records = []
    for leg, rep in (("poisson", rep_p), ("eq", rep_eq)):
        for r in rep.records:
            records.append(replace(r, name="%s.%s" % (leg, r.name)))

    def pick(report, name, T, tf):
        for r in report.records:
            if r.name == name and r.horizon == T and r.s == tf and r.t == tf:
                return r
        return None

    n_h = len(spec_eq.horizons)
    for ih, T in enumerate(map(float, spec_eq.horizons)):
        for tf in spec_eq.out_grid:
            req = pick(rep_eq, "theorem_variance", T, tf)
            rp = pick(rep_p, "theorem_variance", T, tf)
            if req is None or rp is None:
                continue
            ratio, se = equilibrium_ratio(req.estimate, req.se,
                                          rp.estimate, rp.se)
            z = (ratio - oracle) / se if se > 0 else np.nan
            records.append(CompRecord("equilibrium_ratio", T, tf, tf,
                                      ratio, se, oracle, z,
                                      gate=(ih == n_h - 1)))
    meta = {"poisson": rep_p.metadata, "equilibrium": rep_eq.metadata}
    if rep_p.invalid or rep_eq.invalid:
        meta["invalid"] = True
    label = spec_eq.label or "equilibrium_contrast"
    return Report(label=label,
                  config_hash=config_digest([rep_p.config_hash,
                                             rep_eq.config_hash]),
                  records=records, metadata=meta)
