"""Occupation time fluctuations and space-time functionals.

Given observations <N_s, phi> of the particle system along a dense grid on
[0, T], the rescaled occupation time fluctuation is

    X_T(t) = (1/F_T) int_0^{Tt} ( <N_s, phi> - <lambda, phi> ) ds,

with norming F_T = T^{(3 - d/alpha)/2}. The centering is analytic (the
homogeneous intensity is exactly preserved in expectation), so no empirical
mean enters. Space-time functionals pair X_T with a weight psi on [0, 1];
the pair (psi, chi), chi(t) = int_t^1 psi, also drives the single-ancestor
comparison v <= n used as a cheap nonlinearity check.
"""

import numpy as np
from dataclasses import dataclass

from .stable_motion import apply_semigroup_pointwise, StableParams

GRID_MATCH_TOL = 1e-9


@dataclass(frozen=True)
class TimeWeight:
    """Nonnegative weight psi on [0, 1] with analytic tail chi(t) = int_t^1 psi.

    Kinds:
        constant    psi = scale
        power       psi = scale * t^power              (power >= 0)
        bump        psi = scale * sin^2(pi t)
        gauss_bump  psi = scale * exp(-(t-center)^2 / (2 width^2))

    chi is closed form per kind (erf for the Gaussian bump), so the pair
    (psi, chi) is exact, not a quadrature of psi.
    """
    kind: str = "constant"
    scale: float = 1.0
    power: float = 1.0
    center: float = 0.5
    width: float = 0.15

    def __post_init__(self):
        if self.kind not in ("constant", "power", "bump", "gauss_bump"):
            raise ValueError("unknown weight kind %r" % (self.kind,))
        if self.scale < 0:
            raise ValueError("scale must be >= 0")
        if self.kind == "power" and self.power < 0:
            raise ValueError("power must be >= 0")
        if self.kind == "gauss_bump" and self.width <= 0:
            raise ValueError("width must be > 0")
        # guard the contract numerically: psi >= 0 on a grid, chi(1) = 0
        grid = np.linspace(0.0, 1.0, 1001)
        if np.any(self.psi(grid) < -1e-15):
            raise ValueError("weight must be nonnegative on [0, 1]")
        if abs(self.chi(1.0)) > 1e-14:
            raise ValueError("chi(1) must vanish")

    def psi(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            out = np.full_like(t, self.scale)
        elif self.kind == "power":
            out = self.scale * t ** self.power
        elif self.kind == "bump":
            out = self.scale * np.sin(np.pi * t) ** 2
        else:
            out = self.scale * np.exp(-(t - self.center) ** 2
                                      / (2.0 * self.width ** 2))
        return out if out.ndim else float(out)

    def chi(self, t):
        """int_t^1 psi(s) ds, closed form per kind."""
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            out = self.scale * (1.0 - t)
        elif self.kind == "power":
            p1 = self.power + 1.0
            out = self.scale * (1.0 - t ** p1) / p1
        elif self.kind == "bump":
            out = self.scale * ((1.0 - t) / 2.0
                                + np.sin(2.0 * np.pi * t) / (4.0 * np.pi))
        else:
            from scipy.special import erf
            c = self.scale * self.width * np.sqrt(np.pi / 2.0)
            s2 = self.width * np.sqrt(2.0)
            out = c * (erf((1.0 - self.center) / s2)
                       - erf((t - self.center) / s2))
        return out if out.ndim else float(out)


@dataclass
class FluctuationPath:
    """X_T sampled on a grid of horizon fractions; values (n,) or (n, n_phi)."""
    grid: np.ndarray
    values: np.ndarray
    horizon: float
    norm: float


def norming(T, alpha, d):
    """F_T = T^{(3 - d/alpha)/2}, valid in the regime alpha < d < 2 alpha."""
    if not (alpha < d < 2 * alpha):
        raise ValueError("norming defined for alpha < d < 2 alpha")
    if T <= 0:
        raise ValueError("horizon must be positive")
    return T ** ((3.0 - d / alpha) / 2.0)


def occupation_fluctuation(dense_times, obs, phi_mass, T, out_grid,
                           norm=None, alpha=None, d=None):
    """Build X_T on out_grid from dense observations of <N_s, phi>.

    dense_times: increasing absolute times starting at 0 and reaching T.
    obs: array (n_times, ...) of <N_s, phi> along dense_times, extra axes
    allowed (test functions, replicas). out_grid: fractions in (0, 1];
    every T * fraction must coincide with a dense time (tolerance 1e-9 T,
    misalignment is an error, not an interpolation).
    The integral is trapezoidal; centering subtracts the exact mean
    s * <lambda, phi> at each grid time.
    """
    dense_times = np.asarray(dense_times, dtype=float)
    obs = np.asarray(obs, dtype=float)
    out_grid = np.asarray(out_grid, dtype=float)
    if dense_times.ndim != 1 or len(dense_times) < 2:
        raise ValueError("need a dense time grid")
    if abs(dense_times[0]) > GRID_MATCH_TOL * T:
        raise ValueError("dense grid must start at 0")
    if np.any(np.diff(dense_times) <= 0):
        raise ValueError("dense grid must be increasing")
    if obs.shape[0] != len(dense_times):
        raise ValueError("observations do not match the dense grid")
    if np.any(out_grid <= 0) or np.any(out_grid > 1.0 + 1e-12):
        raise ValueError("output grid must lie in (0, 1]")
    if norm is None:
        if alpha is None or d is None:
            raise ValueError("give norm explicitly or alpha and d")
        norm = norming(T, alpha, d)
    targets = T * out_grid
    idx = np.searchsorted(dense_times, targets)
    idx = np.clip(idx, 0, len(dense_times) - 1)
    left = np.clip(idx - 1, 0, None)
    pick = np.where(np.abs(dense_times[left] - targets)
                    < np.abs(dense_times[idx] - targets), left, idx)
    if np.any(np.abs(dense_times[pick] - targets) > GRID_MATCH_TOL * max(T, 1.0)):
        raise ValueError("output grid misaligned with the dense grid")
    dt = np.diff(dense_times)
    shape_tail = (1,) * (obs.ndim - 1)
    steps = 0.5 * dt.reshape(dt.shape + shape_tail) * (obs[1:] + obs[:-1])
    cum = np.concatenate([np.zeros((1,) + obs.shape[1:]),
                          np.cumsum(steps, axis=0)], axis=0)
    centered = cum[pick] - (targets.reshape(targets.shape + shape_tail)
                            * phi_mass)
    values = centered / norm
    return FluctuationPath(grid=out_grid, values=values, horizon=T, norm=norm)


def space_time_pairing(path, weight):
    """Trapezoid of X_T(t) psi(t) over the path grid (fractions of T).

    The grid should be dense and start near 0 for the quadrature to mean
    int_0^1 X psi dt; values may carry extra axes.
    """
    g = np.asarray(path.grid, dtype=float)
    w = weight.psi(g)
    vals = np.asarray(path.values, dtype=float)
    w = w.reshape(w.shape + (1,) * (vals.ndim - 1))
    grid_full = g
    integrand = vals * w
    return np.trapezoid(integrand, grid_full, axis=0)


def compute_n(x, r, t, phi, weight, T, params, quad=None):
    """n_T(x; r, t) = (1/F_T) int_0^t (T_s phi)(x) chi((r+s)/T) ds.

    The expected weighted occupation integral of a single ancestor at x:
    the mean of the functional whose nonlinear counterpart estimate_v
    simulates. r is the time offset into the weight, 0 <= r, r + t <= T.
    """
    if t < 0 or r < 0 or r + t > T * (1 + 1e-12):
        raise ValueError("need 0 <= r, r + t <= T")
    f_t = norming(T, params.alpha, params.d)
    motion = StableParams(params.alpha, params.d)
    if t == 0:
        return 0.0

    def f(s_arr):
        out = np.empty_like(s_arr)
        for i, s in enumerate(s_arr):
            out[i] = apply_semigroup_pointwise(phi, s, x, motion, quad=quad) \
                * weight.chi((r + s) / T)
        return out

    from .stable_motion import panel_gauss
    edges = np.linspace(0.0, t, 17)
    val = panel_gauss(f, edges, rtol=1e-8, nodes=12)
    return val / f_t


def estimate_v(x, r, t, phi, weight, T, config, reps, rng, dense_step=None):
    """Monte Carlo estimate of v_T(x; r, t) = 1 - E_x exp(-I) with

        I = (1/F_T) int_0^t <N_s^x, phi> chi((r+s)/T) ds

    for the system started from a single particle at x. Returns (v, se).
    reps >= 100 replicas; the occupation integral is trapezoidal on a
    dense grid of step dense_step (default t/512).
    """
    from .particle_system import run_replica_block
    if reps < 100:
        raise ValueError("need at least 100 replicas")
    if t <= 0:
        raise ValueError("t must be positive")
    if dense_step is None:
        dense_step = t / 512.0
    n_steps = max(int(round(t / dense_step)), 2)
    times = np.linspace(0.0, t, n_steps + 1)
    x = np.asarray(x, dtype=float).reshape(-1)
    obs, aborted, _ = run_replica_block(config, reps, rng, times, [phi],
                                        init_positions=x)
    if aborted.any():
        raise RuntimeError("explosion guard tripped in %d of %d replicas"
                           % (int(aborted.sum()), reps))
    f_t = norming(T, config.stable.alpha, config.stable.dim)
    w = weight.chi((r + times) / T)
    integrand = obs[:, :, 0] * w[:, None]
    integral = np.trapezoid(integrand, times, axis=0) / f_t
    vals = 1.0 - np.exp(-integral)
    v = float(vals.mean())
    se = float(vals.std(ddof=1) / np.sqrt(reps))
    return v, se
