"""Critical branching particle system with stable motion.

Start: a Poisson field of intensity 1 on a centered box [-L, L]^d (the
window approximates the infinite homogeneous field; L is sized so the
ancestors left out contribute a stated fraction of the occupation
variance). Each particle carries an exponential branching clock of rate V;
at a branch event it dies and leaves k offspring at its position, k drawn
from a critical law. Between events particles follow independent symmetric
alpha-stable motions.

The implementation is lazily vectorized: a particle's position is
materialized only when it branches or when an observation time arrives
(stable increments over disjoint intervals are independent, so deferring
them changes nothing in law). Replicas are simulated in blocks that share
the flat arrays; a replica that exceeds the branch-event cap is aborted and
excluded, never silently truncated.

Randomness discipline: every routine takes a numpy Generator and consumes
draws in an order fixed by the realized event structure, so a given seed
reproduces a block exactly regardless of how blocks are scheduled across
workers.
"""

import numpy as np
from dataclasses import dataclass, field

from .stable_motion import (StableParams, sample_stable_increments,
                            tail_constant)
from .offspring_law import OffspringLaw

DEFAULT_EVENT_CAP = 10_000_000


@dataclass(frozen=True)
class SimulationWindow:
    """Half width L of the initial box and the variance-deficit target.

    truncation_epsilon is the relative occupation-variance deficit the
    window is allowed to cost (used by auto sizing and diagnostics, not
    enforced at runtime).
    """
    half_width: float
    truncation_epsilon: float = 0.05

    def __post_init__(self):
        if self.half_width <= 0:
            raise ValueError("half_width must be positive")
        if not (0.0 < self.truncation_epsilon < 1.0):
            raise ValueError("truncation_epsilon must lie in (0, 1)")


def auto_half_width(alpha, t_total, eps_rel, r_phi=0.0):
    """Window rule L = r_phi + (C_alpha t_total / eps)^(1/alpha), d = 1.

    C_alpha is the stable tail constant; t_total the total simulated time
    (burn-in plus horizon). Chosen so the ancestors outside the window
    contribute roughly an eps_rel fraction of the occupation variance.
    """
    if alpha >= 2.0:
        raise ValueError("auto window sizing targets heavy tails (alpha < 2)")
    return r_phi + (tail_constant(alpha) * t_total / eps_rel) ** (1.0 / alpha)


@dataclass(frozen=True)
class InitSpec:
    """Initial condition: 'poisson' or 'equilibrium' (burn-in of t_burn)."""
    kind: str = "poisson"
    t_burn: float = 0.0

    def __post_init__(self):
        if self.kind not in ("poisson", "equilibrium"):
            raise ValueError("init kind must be poisson or equilibrium")
        if self.t_burn < 0:
            raise ValueError("t_burn must be >= 0")
        if self.kind == "poisson" and self.t_burn != 0.0:
            raise ValueError("poisson start takes no burn-in")


@dataclass(frozen=True)
class SimConfig:
    """Everything needed to run one replica of the system."""
    stable: StableParams
    law: OffspringLaw
    branch_rate: float = 1.0
    init: InitSpec = field(default_factory=InitSpec)
    window: SimulationWindow = field(
        default_factory=lambda: SimulationWindow(50.0))
    event_cap: int = DEFAULT_EVENT_CAP

    def __post_init__(self):
        if self.branch_rate <= 0:
            raise ValueError("branch_rate must be positive")
        if self.event_cap <= 0:
            raise ValueError("event_cap must be positive")


@dataclass
class SystemState:
    """Flat-array snapshot of one replica at a given clock time."""
    clock: float
    positions: np.ndarray      # (n, d)
    next_branch: np.ndarray    # (n,) absolute times
    window: SimulationWindow

    @property
    def n_particles(self):
        return len(self.positions)


class ExplosionError(RuntimeError):
    """A replica produced more branch events than the configured cap."""

    def __init__(self, events, cap):
        super().__init__(
            "branch events exceeded the cap (%d > %d); the replica is "
            "aborted rather than truncated" % (events, cap))
        self.events = events
        self.cap = cap


class _Arrays:
    """Parallel particle arrays for a block of replicas."""
    __slots__ = ("pos", "last_t", "next_b", "rep")

    def __init__(self, pos, last_t, next_b, rep):
        self.pos = pos
        self.last_t = last_t
        self.next_b = next_b
        self.rep = rep

    def __len__(self):
        return len(self.rep)


def _drop_aborted(arr, aborted):
    keep = ~aborted[arr.rep]
    if keep.all():
        return
    arr.pos = arr.pos[keep]
    arr.last_t = arr.last_t[keep]
    arr.next_b = arr.next_b[keep]
    arr.rep = arr.rep[keep]


def _branch_until(arr, t_end, config, rng, events, aborted):
    """Run every branch event with time <= t_end, vectorized in rounds.

    Each round settles the current frontier: all particles whose clocks
    ring before t_end are moved to their event times, replaced by their
    offspring, and the offspring clocks may ring again next round.
    """
    v = config.branch_rate
    law = config.law
    cap = config.event_cap
    while True:
        due = arr.next_b <= t_end
        n_due = int(due.sum())
        if n_due == 0:
            return
        counts = np.bincount(arr.rep[due], minlength=len(events))
        events += counts
        newly = (events > cap) & ~aborted
        if newly.any():
            aborted |= newly
            _drop_aborted(arr, aborted)
            due = arr.next_b <= t_end
            n_due = int(due.sum())
            if n_due == 0:
                return
        idx = np.nonzero(due)[0]
        bt = arr.next_b[idx]
        dt = bt - arr.last_t[idx]
        arr.pos[idx] += sample_stable_increments(config.stable, dt, rng)
        k = law.sample(rng, size=n_due)
        off_pos = np.repeat(arr.pos[idx], k, axis=0)
        off_rep = np.repeat(arr.rep[idx], k)
        off_birth = np.repeat(bt, k)
        off_next = off_birth + rng.exponential(1.0 / v, size=len(off_rep))
        keep = np.ones(len(arr), dtype=bool)
        keep[idx] = False
        arr.pos = np.concatenate([arr.pos[keep], off_pos], axis=0)
        arr.last_t = np.concatenate([arr.last_t[keep], off_birth])
        arr.next_b = np.concatenate([arr.next_b[keep], off_next])
        arr.rep = np.concatenate([arr.rep[keep], off_rep])


def _displace_all(arr, t_to, config, rng):
    dt = t_to - arr.last_t
    if np.any(dt < -1e-12):
        raise ValueError("cannot displace backwards in time")
    arr.pos += sample_stable_increments(config.stable, np.maximum(dt, 0.0),
                                        rng)
    arr.last_t = np.full(len(arr), t_to)


def _observe(arr, phis, n_reps, aborted):
    out = np.zeros((n_reps, len(phis)))
    for j, phi in enumerate(phis):
        if len(arr):
            w = phi(arr.pos)
            out[:, j] = np.bincount(arr.rep, weights=w, minlength=n_reps)
    out[aborted] = np.nan
    return out


def _seed_block(config, n_reps, rng, init_positions):
    d = config.stable.dim
    if init_positions is None:
        lam = (2.0 * config.window.half_width) ** d
        counts = rng.poisson(lam, n_reps)
        rep = np.repeat(np.arange(n_reps), counts)
        total = int(counts.sum())
        pos = rng.uniform(-config.window.half_width,
                          config.window.half_width, size=(total, d))
    else:
        x = np.asarray(init_positions, dtype=float).reshape(1, -1)
        if x.shape[1] != d:
            raise ValueError("initial position dimension mismatch")
        pos = np.repeat(x, n_reps, axis=0)
        rep = np.arange(n_reps)
    next_b = rng.exponential(1.0 / config.branch_rate, size=len(rep))
    last_t = np.zeros(len(rep))
    return _Arrays(pos, last_t, next_b, rep)


def run_replica_block(config, n_reps, rng, times, phis, init_positions=None):
    """Simulate n_reps independent replicas, observing <N_t, phi> at times.

    times are absolute (post burn-in) observation times, increasing, >= 0.
    If the config asks for an equilibrium start, the block first runs
    t_burn of pure branching/motion, then re-origins its clocks, matching
    init_equilibrium. Returns (obs, aborted, events): obs has shape
    (len(times), n_reps, len(phis)) with NaN rows for aborted replicas.
    """
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or (len(times) and times[0] < 0):
        raise ValueError("observation times must be increasing and >= 0")
    events = np.zeros(n_reps, dtype=np.int64)
    aborted = np.zeros(n_reps, dtype=bool)
    arr = _seed_block(config, n_reps, rng, init_positions)
    offset = 0.0
    if config.init.kind == "equilibrium" and config.init.t_burn > 0:
        tb = config.init.t_burn
        _branch_until(arr, tb, config, rng, events, aborted)
        _displace_all(arr, tb, config, rng)
        # fresh clocks at the new origin (memoryless, but keeps the
        # restart protocol explicit)
        arr.next_b = tb + rng.exponential(1.0 / config.branch_rate,
                                          size=len(arr))
        offset = tb
    obs = np.empty((len(times), n_reps, len(phis)))
    for i, tg in enumerate(times):
        t_abs = tg + offset
        _branch_until(arr, t_abs, config, rng, events, aborted)
        _displace_all(arr, t_abs, config, rng)
        obs[i] = _observe(arr, phis, n_reps, aborted)
    return obs, aborted, events


# ---------------------------------------------------------------------------
# single-replica interface

def init_poisson(config, rng):
    """Poisson(1) field on the window, fresh exponential clocks, clock 0."""
    arr = _seed_block(config, 1, rng, None)
    return SystemState(clock=0.0, positions=arr.pos, next_branch=arr.next_b,
                       window=config.window)


def init_equilibrium(config, rng):
    """Burn the Poisson field for t_burn, then re-origin the clock to 0.

    The window of config should already be enlarged to cover the burn-in
    travel (auto_half_width with t_total = t_burn + horizon does this).
    """
    if config.init.kind != "equilibrium":
        raise ValueError("config.init.kind must be 'equilibrium'")
    tb = config.init.t_burn
    events = np.zeros(1, dtype=np.int64)
    aborted = np.zeros(1, dtype=bool)
    arr = _seed_block(config, 1, rng, None)
    if tb > 0:
        _branch_until(arr, tb, config, rng, events, aborted)
        if aborted[0]:
            raise ExplosionError(int(events[0]), config.event_cap)
        _displace_all(arr, tb, config, rng)
    next_b = rng.exponential(1.0 / config.branch_rate, size=len(arr))
    return SystemState(clock=0.0, positions=arr.pos, next_branch=next_b,
                       window=config.window)


def evolve_and_observe(state, config, phis, grid, rng):
    """Advance one replica along an increasing grid of absolute times.

    Returns the (len(grid), len(phis)) matrix of <N_t, phi>. The state is
    advanced in place to the final grid time. Raises ExplosionError if the
    branch-event cap is exceeded.
    """
    grid = np.asarray(grid, dtype=float)
    if len(grid) == 0:
        return np.zeros((0, len(phis)))
    if grid[0] < state.clock - 1e-12 or np.any(np.diff(grid) < 0):
        raise ValueError("grid must be increasing and start at or after "
                         "the current clock")
    arr = _Arrays(state.positions, np.full(state.n_particles, state.clock),
                  state.next_branch, np.zeros(state.n_particles, dtype=np.int64))
    events = np.zeros(1, dtype=np.int64)
    aborted = np.zeros(1, dtype=bool)
    obs = np.empty((len(grid), len(phis)))
    for i, tg in enumerate(grid):
        _branch_until(arr, tg, config, rng, events, aborted)
        if aborted[0]:
            raise ExplosionError(int(events[0]), config.event_cap)
        _displace_all(arr, tg, config, rng)
        obs[i] = _observe(arr, phis, 1, aborted)[0]
    state.positions = arr.pos
    state.next_branch = arr.next_b
    state.clock = float(grid[-1])
    return obs
