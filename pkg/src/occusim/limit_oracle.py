"""Covariance oracles for the occupation fluctuation limits.

For alpha < d < 2 alpha the rescaled occupation time fluctuation of the
critical branching stable system converges (as the horizon T grows) to a
centered Gaussian process: started from a homogeneous Poisson field the
limit is sub-fractional Brownian motion, started from the equilibrium state
it is fractional Brownian motion, both with exponent

    h = 3 - d/alpha  in (1, 2)

and global constant

    K = V Gamma(2-h) / (2^{d-1} pi^{d/2} alpha Gamma(d/2) h (h-1)).

This module evaluates those limit covariances, the exact finite-horizon
covariances of the simulated system (a single radial Fourier quadrature,
no asymptotics), the identity connecting the two time-kernel
representations, and a Cholesky sampler for the limit paths.

Everything here is deterministic numerics; the only randomness is in
sample_limit_path, which consumes the generator it is given.
"""

import numpy as np
from dataclasses import dataclass, field

from .stable_motion import (DEFAULT_QUAD, QuadConfig,
                            pairing_with_time_kernel,
                            panel_gauss, geometric_edges,
                            apply_semigroup_pointwise, stable_tail_exact,
                            semigroup_pairing, tail_constant)

# Lanczos approximation, g = 7, 9 coefficients. Kept local on purpose: the
# global constant K must not silently track an external gamma
# implementation; tests compare this one against an independent route.
_LANCZOS_C = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
_LANCZOS_G = 7.0


def gamma_lanczos(x):
    """Gamma(x) for real x that is not a nonpositive integer."""
    x = float(x)
    if x <= 0 and x == np.floor(x):
        raise ValueError("gamma pole at %g" % x)
    if x < 0.5:
        return np.pi / (np.sin(np.pi * x) * gamma_lanczos(1.0 - x))
    x -= 1.0
    acc = _LANCZOS_C[0]
    for i, c in enumerate(_LANCZOS_C[1:], start=1):
        acc += c / (x + i)
    t = x + _LANCZOS_G + 0.5
    return np.sqrt(2.0 * np.pi) * t ** (x + 0.5) * np.exp(-t) * acc


def hurst(alpha, d):
    """Variance exponent h = 3 - d/alpha of the limit processes.

    Requires the intermediate regime alpha < d < 2 alpha, which pins
    h to (1, 2). The classical Hurst index of the limit paths is h/2.
    """
    if not (alpha < d < 2 * alpha):
        raise ValueError(
            "need alpha < d < 2 alpha (got alpha=%g, d=%g)" % (alpha, d))
    return 3.0 - d / alpha


@dataclass(frozen=True)
class LimitParams:
    """Model parameters entering the limit covariances."""
    alpha: float
    d: int
    branch_rate: float = 1.0
    m2: float = 1.0          # second factorial moment of the offspring law

    def __post_init__(self):
        if not (0 < self.alpha <= 2):
            raise ValueError("alpha must lie in (0, 2]")
        if self.branch_rate <= 0:
            raise ValueError("branch_rate must be > 0")
        if self.m2 <= 0:
            raise ValueError("m2 must be > 0")
        hurst(self.alpha, self.d)  # validates the regime

    @property
    def h(self):
        return hurst(self.alpha, self.d)

    @property
    def k_constant(self):
        return k_constant(self)


def params_for_h(h, d=1, branch_rate=1.0, m2=1.0):
    """LimitParams realizing a target exponent h via alpha = d/(3-h)."""
    if not (1.0 < h < 2.0):
        raise ValueError("h must lie in (1, 2)")
    alpha = d / (3.0 - h)
    return LimitParams(alpha, d, branch_rate, m2)


def k_constant(params):
    """K = V Gamma(2-h) / (2^{d-1} pi^{d/2} alpha Gamma(d/2) h (h-1))."""
    h = params.h
    d = params.d
    num = params.branch_rate * gamma_lanczos(2.0 - h)
    den = (2.0 ** (d - 1) * np.pi ** (d / 2.0) * params.alpha
           * gamma_lanczos(d / 2.0) * h * (h - 1.0))
    return num / den


def subfrac_cov(s, t, h):
    """s^h + t^h - [ (s+t)^h + |s-t|^h ] / 2  (sub-fractional kernel)."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    return s**h + t**h - 0.5 * ((s + t)**h + np.abs(s - t)**h)


def frac_cov(s, t, h):
    """( s^h + t^h - |s-t|^h ) / 2  (fractional kernel)."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    return 0.5 * (s**h + t**h - np.abs(s - t)**h)


_KERNELS = {"poisson": subfrac_cov, "equilibrium": frac_cov,
            "subfractional": subfrac_cov, "fractional": frac_cov}


def theorem_covariance(mode, s, t, phi, psi, params):
    """Limit covariance of (<X(s), phi>, <X(t), psi>).

    mode 'poisson' (sub-fractional kernel) or 'equilibrium' (fractional);
    equals M K <lambda, phi> <lambda, psi> kernel_h(s, t).
    """
    if mode not in _KERNELS:
        raise ValueError("mode must be poisson or equilibrium")
    kern = _KERNELS[mode](s, t, params.h)
    return params.m2 * k_constant(params) * phi.mass * psi.mass * kern


def equilibrium_ratio_oracle(params):
    """Limit equilibrium/Poisson variance ratio at t=1: 1/(2 - 2^{h-1})."""
    return 1.0 / (2.0 - 2.0 ** (params.h - 1.0))


# ---------------------------------------------------------------------------
# exact covariances of the simulated system (no T -> inf asymptotics)

def poisson_system_covariance(u, v, phi, psi, params, quad=None):
    """Cov(<N_u, phi>, <N_v, psi>) for the Poisson-started system.

    Equals <lambda, phi T_{|v-u|} psi> + (M V / 2) * int_{|v-u|}^{u+v}
    <lambda, phi T_r psi> dr, evaluated as one radial Fourier quadrature
    (the time integral is done in closed form per frequency).
    """
    if u < 0 or v < 0:
        raise ValueError("times must be >= 0")
    alpha = params.alpha
    mv = params.m2 * params.branch_rate
    lo_t = abs(v - u)
    hi_t = u + v

    def kern(rho):
        a = rho ** alpha
        e_lo = np.expm1(-a * lo_t)
        e_hi = np.expm1(-a * hi_t)
        return (1.0 + e_lo) + 0.5 * mv * (e_lo - e_hi) / a

    hint = hi_t ** (-1.0 / alpha) if hi_t > 0 else None
    return pairing_with_time_kernel(phi, psi, params_to_motion(params),
                                    kern, scale_hint=hint, quad=quad)


def params_to_motion(params):
    from .stable_motion import StableParams
    return StableParams(params.alpha, params.d)


def _square_moments(t1, t2):
    """m_k = int_0^t1 int_0^t2 |u - v|^k du dv for k = 1, 2, 3."""
    lo, hi = (t1, t2) if t1 <= t2 else (t2, t1)
    m1 = lo**3 / 3.0 - hi * lo**2 / 2.0 + hi**2 * lo / 2.0
    m2 = t1**3 * t2 / 3.0 - t1**2 * t2**2 / 2.0 + t1 * t2**3 / 3.0
    m3 = (t1**5 + t2**5 - (hi - lo)**5) / 20.0
    return m1, m2, m3


def _hm_kernel(a, t1, t2):
    """int_0^t1 int_0^t2 e^{-a|u-v|} du dv, vectorized in a, stable as a->0."""
    a = np.asarray(a, dtype=float)
    tmin = min(t1, t2)
    dt = abs(t1 - t2)
    small = a * max(t1, t2) < 1e-5
    a_safe = np.where(small, 1.0, a)
    num = (np.expm1(-a_safe * t1) + np.expm1(-a_safe * t2)
           - np.expm1(-a_safe * dt))
    exact = (num + 2.0 * a_safe * tmin) / a_safe**2
    m1, m2, m3 = _square_moments(t1, t2)
    series = t1 * t2 - a * m1 + a**2 * m2 / 2.0 - a**3 * m3 / 6.0
    return np.where(small, series, exact)


def _branch_kernel(a, t1, t2, t_burn):
    """(Hm - e^{-2 a tb} Hp)/a with Hp = (1-e^{-a t1})(1-e^{-a t2})/a^2.

    The double time integral of the branching covariance density, again
    stable as a -> 0. t_burn = inf gives the stationary-start kernel Hm/a.
    """
    a = np.asarray(a, dtype=float)
    hm = _hm_kernel(a, t1, t2)
    if np.isinf(t_burn):
        return hm / a
    small = a * (max(t1, t2) + 2.0 * t_burn) < 1e-5
    a_safe = np.where(small, 1.0, a)
    hp = np.expm1(-a_safe * t1) * np.expm1(-a_safe * t2) / a_safe**2
    damp = np.exp(-2.0 * a_safe * t_burn)
    exact = (hm - damp * hp) / a_safe
    m1, m2, _ = _square_moments(t1, t2)
    s12 = t1 * t2 * (t1 + t2) / 2.0
    lead = s12 + 2.0 * t_burn * t1 * t2 - m1
    nxt = (m2 / 2.0 - (t1**3 * t2 + t1 * t2**3) / 6.0 - t1**2 * t2**2 / 4.0
           - t_burn * (t1**2 * t2 + t1 * t2**2) - 2.0 * t_burn**2 * t1 * t2)
    series = lead + a * nxt
    return np.where(small, series, exact)


def occupation_covariance(T, s_frac, t_frac, phi, psi, params,
                          t_burn=0.0, quad=None):
    """Exact Cov(X_T(s), X_T(t)) of the rescaled occupation fluctuation.

    s_frac, t_frac are fractions of the horizon T. t_burn is the burn-in
    length of the initial state: 0 means Poisson start, a positive value
    means the system ran that long before time zero (the simulator's
    stationarity protocol), inf means the exact stationary start. The
    whole thing is one radial quadrature:

        T^{-h} (2pi)^{-d} int hat phi conj hat psi
            [ Hm(a) + (MV/2) Hb(a) ] dz,   a = |z|^alpha,

    with Hm, Hb the closed-form double time integrals of the motion and
    branching covariance densities. No large-T approximation is made, so
    this pins down what a correct simulation must produce at finite T,
    burn-in and all.
    """
    if T <= 0:
        raise ValueError("horizon must be positive")
    alpha = params.alpha
    h = params.h
    mv = params.m2 * params.branch_rate
    t1 = T * s_frac
    t2 = T * t_frac
    if t1 < 0 or t2 < 0:
        raise ValueError("times must be >= 0")
    if t1 == 0 or t2 == 0:
        return 0.0

    def kern(rho):
        a = rho ** alpha
        return _hm_kernel(a, t1, t2) + 0.5 * mv * _branch_kernel(a, t1, t2,
                                                                 t_burn)

    hint = (t1 + t2) ** (-1.0 / alpha)
    lo_floor = 1e-45 if np.isinf(t_burn) else None
    val = pairing_with_time_kernel(phi, psi, params_to_motion(params), kern,
                                   scale_hint=hint, lo_floor=lo_floor,
                                   quad=quad)
    return val / T ** h


def occupation_pairing_variance(T, phi, weight, params, t_burn=0.0,
                                quad=None, n_gauss=40):
    """Exact Var of int_0^1 X_T(t) psi(t) dt by tensor quadrature.

    Splits the square at the diagonal (the covariance has a kink there)
    and applies Gauss-Legendre on each triangle. Diagnostic accuracy
    (~1e-5 relative); the limit-theorem oracle for this quantity is
    limit_laplace_exponent, not this function.
    """
    xs, ws = np.polynomial.legendre.leggauss(n_gauss)
    t_nodes = 0.5 * (xs + 1.0)
    t_w = 0.5 * ws
    total = 0.0
    # triangle s <= t via s = t * u
    for ti, wi in zip(t_nodes, t_w):
        row = 0.0
        for uj, wj in zip(t_nodes, t_w):
            s = ti * uj
            cov = occupation_covariance(T, s, ti, phi, phi, params,
                                        t_burn=t_burn, quad=quad)
            row += wj * weight.psi(s) * cov * ti
        total += wi * weight.psi(ti) * row
    return 2.0 * total


# ---------------------------------------------------------------------------
# time-kernel integrals of the limit covariances

def _graded_tensor_integral(f2, rtol=1e-10, nodes=12, ratio=1.7, lo=1e-12):
    """int_0^1 int_0^1 f2(U, V) dU dV with panels graded toward both axes.

    f2 must accept 2-d arrays. Two resolutions are compared; if they
    disagree beyond rtol the node count is doubled once.
    """
    edges = geometric_edges(lo, 1.0, ratio=ratio)

    def run(n):
        xs, ws = np.polynomial.legendre.leggauss(n)
        pts, wts = [], []
        for a, b in zip(edges[:-1], edges[1:]):
            pts.append(0.5 * (a + b) + 0.5 * (b - a) * xs)
            wts.append(0.5 * (b - a) * ws)
        p = np.concatenate(pts)
        w = np.concatenate(wts)
        vals = f2(p[:, None], p[None, :])
        return float(w @ vals @ w)

    lo_val = run(nodes)
    hi_val = run(nodes + 6)
    if abs(hi_val - lo_val) > rtol * max(abs(hi_val), 1e-300):
        hi_val = run(2 * nodes + 6)
    return hi_val


def _weighted_line_integral(f, rtol=1e-11):
    """int_0^1 f with grading toward 0 (f vectorized)."""
    return panel_gauss(f, geometric_edges(1e-12, 1.0, ratio=1.7),
                       rtol=rtol, nodes=16)


def _abs_diff_moment(weight, h, rtol=1e-10):
    """A3 = int int |s-t|^h psi(s) psi(t) ds dt via the nested reduction

        2 int_0^1 psi(t) [ int_0^t w^h psi(t - w) dw ] dt.
    """
    unit = geometric_edges(1e-12, 1.0, ratio=1.7)

    def inner(t):
        if t <= 0:
            return 0.0
        return panel_gauss(
            lambda w: w**h * weight.psi(t - w), unit * t, rtol=rtol, nodes=12)

    def outer(ts):
        ts = np.atleast_1d(ts)
        return np.array([weight.psi(t) * inner(t) for t in ts])

    return 2.0 * panel_gauss(outer, np.linspace(0.0, 1.0, 9), rtol=rtol,
                             nodes=16)


def weighted_kernel_integral(kind, weight, h, rtol=1e-10):
    """∬ kernel_h(s,t) psi(s) psi(t) ds dt on [0,1]^2.

    kind 'subfractional' or 'fractional'. Decomposes the kernel into the
    moments A0 = int psi, A1 = int s^h psi, A2 = ∬ (s+t)^h psi psi and
    A3 = ∬ |s-t|^h psi psi, each integrated with grading matched to its
    singular structure.
    """
    a0 = _weighted_line_integral(lambda s: weight.psi(s))
    a1 = _weighted_line_integral(lambda s: s**h * weight.psi(s))
    a3 = _abs_diff_moment(weight, h, rtol=rtol)
    if kind in ("fractional", "equilibrium"):
        return a1 * a0 - 0.5 * a3
    if kind in ("subfractional", "poisson"):
        a2 = _graded_tensor_integral(
            lambda u, v: (u + v)**h * weight.psi(u) * weight.psi(v),
            rtol=rtol)
        return 2.0 * a1 * a0 - 0.5 * (a2 + a3)
    raise ValueError("kind must be subfractional or fractional")


def limit_laplace_exponent(phi, weight, mode, params, rtol=1e-10):
    """Variance of the limit space-time functional int_0^1 <X(t), phi> psi(t) dt.

    Returns M K <lambda, phi>^2 ∬ kernel_h psi psi. For the centered
    Gaussian functional Z this fixes the Laplace functional through
    E e^{-Z} = e^{Var/2}.
    """
    kern_kind = "subfractional" if mode in ("poisson", "subfractional") \
        else "fractional"
    integral = weighted_kernel_integral(kern_kind, weight, params.h,
                                        rtol=rtol)
    return params.m2 * k_constant(params) * phi.mass**2 * integral


def b3_identity_sides(weight, params, rtol=1e-10):
    """Both sides of the exchange-of-integrals identity for the kernel.

    Left: [Gamma(d/alpha - 1) / (2^d alpha Gamma(d/2) pi^{d/2})]
          ∬ (u1+u2)^{h-2} chi(u1) chi(u2),  chi(t) = int_t^1 psi.
    Right: (K / 2V) ∬ [ (s+t)^h - s^h - t^h ] psi(s) psi(t).

    Equal exactly (Fubini plus Gamma(d/alpha - 1) = Gamma(2-h)); the
    residual exercises the quadratures and the constant K.
    """
    h = params.h
    d = params.d
    const = gamma_lanczos(d / params.alpha - 1.0) / (
        2.0 ** d * params.alpha * gamma_lanczos(d / 2.0)
        * np.pi ** (d / 2.0))
    lhs = const * _graded_tensor_integral(
        lambda u, v: (u + v) ** (h - 2.0) * weight.chi(u) * weight.chi(v),
        rtol=rtol)
    a0 = _weighted_line_integral(lambda s: weight.psi(s))
    a1 = _weighted_line_integral(lambda s: s**h * weight.psi(s))
    a2 = _graded_tensor_integral(
        lambda u, v: (u + v)**h * weight.psi(u) * weight.psi(v), rtol=rtol)
    rhs = k_constant(params) / (2.0 * params.branch_rate) * (a2 - 2.0 * a1 * a0)
    return lhs, rhs


def b3_identity_residual(weight, params, rtol=1e-10):
    lhs, rhs = b3_identity_sides(weight, params, rtol=rtol)
    return lhs - rhs


# ---------------------------------------------------------------------------
# limit path sampling

@dataclass
class GaussianPathSample:
    """Sampled limit paths on a fixed grid, plus factorization details."""
    kind: str
    grid: np.ndarray
    values: np.ndarray          # (n_paths, n_grid)
    jitter_used: float = 0.0


MAX_SAMPLE_GRID = 2048


def limit_covariance_matrix(kind, grid, params, phi_mass=1.0):
    """Covariance matrix of the limit path functional on the grid."""
    if kind not in _KERNELS:
        raise ValueError("kind must name a limit kernel")
    grid = np.asarray(grid, dtype=float)
    kern = _KERNELS[kind](grid[:, None], grid[None, :], params.h)
    return params.m2 * k_constant(params) * phi_mass**2 * kern


def sample_limit_path(kind, grid, params, rng, n_paths=1, phi_mass=1.0):
    """Exact Gaussian sampling of the limit process on a grid (Cholesky).

    The grid may not exceed 2048 points. If the covariance matrix fails
    to factor, a diagonal jitter of 1e-12 * trace/n is added, escalating
    tenfold up to three retries; the jitter actually used is recorded on
    the returned sample.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 1:
        raise ValueError("grid must be a 1-d array of times")
    if len(grid) > MAX_SAMPLE_GRID:
        raise ValueError("grid capped at %d points" % MAX_SAMPLE_GRID)
    if np.any(grid < 0):
        raise ValueError("grid times must be >= 0")
    cov = limit_covariance_matrix(kind, grid, params, phi_mass=phi_mass)
    n = len(grid)
    base = 1e-12 * np.trace(cov) / max(n, 1)
    jitter = 0.0
    chol = None
    for attempt in range(4):
        try:
            chol = np.linalg.cholesky(cov + jitter * np.eye(n))
            break
        except np.linalg.LinAlgError:
            jitter = base * 10.0 ** attempt if base > 0 else 1e-300
    if chol is None:
        raise np.linalg.LinAlgError(
            "covariance not factorable even with jitter %g" % jitter)
    z = rng.standard_normal((n_paths, n))
    vals = z @ chol.T
    return GaussianPathSample(kind=kind, grid=grid, values=vals,
                              jitter_used=jitter)


# ---------------------------------------------------------------------------
# window truncation diagnostic

def stable_tail_series(r, t, alpha, tol=1e-13, max_terms=80):
    """P(X_t > r) for the CF-normalized symmetric stable law, alpha < 1.

    Convergent tail series

        sum_k (-1)^(k+1) t^k Gamma(alpha k + 1) sin(pi alpha k / 2)
              r^(-alpha k) / (pi k! alpha k)

    (absolutely convergent for alpha < 1 since Gamma(alpha k + 1) / k!
    decays superexponentially). Vectorized over r > 0.
    """
    if not 0 < alpha < 1:
        raise ValueError("tail series valid for alpha in (0, 1)")
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("need r > 0")
    out = np.zeros_like(r)
    term_scale = 1.0  # t^k / k!
    for k in range(1, max_terms + 1):
        term_scale *= t / k
        coef = term_scale * gamma_lanczos(alpha * k + 1) \
            * np.sin(np.pi * alpha * k / 2) / (np.pi * alpha * k)
        term = coef * r ** (-alpha * k)
        out += -term if k % 2 == 0 else term
        if np.max(np.abs(term)) < tol:
            break
    return np.clip(out, 0.0, 1.0)


def semigroup_on_grid(f, s, ys, alpha, tol_decay=1e-15, nodes=10):
    """(T_s f)(y) on a 1-d grid via one vectorized cosine transform.

    f must be a Gaussian test function; its transform has the envelope
    e^(-sigma^2 z^2 / 2), so a fixed panel grid out to the envelope's
    cutoff resolves the integral. Panels are narrow enough to track the
    fastest oscillation cos(z (y - c)).
    """
    ymax = float(np.max(np.abs(ys - np.asarray(f.center)[0]))) + 1e-9
    zmax = np.sqrt(2.0 * np.log(1.0 / tol_decay)) / f.sigma
    width = min(np.pi / (2.0 * ymax), f.sigma / 2.0)
    n_panels = max(8, int(np.ceil(zmax / width)))
    x, w = np.polynomial.legendre.leggauss(nodes)
    body = np.linspace(width, zmax, n_panels + 1)
    # z^alpha has a branch point at 0; grade the leading panel
    # geometrically so its kink does not poison the fixed-order rule
    lead = width * 0.65 ** np.arange(60, 0, -1)
    edges = np.concatenate([lead, body])
    mid = 0.5 * (edges[:-1] + edges[1:])
    half = 0.5 * np.diff(edges)
    z = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    zw = (half[:, None] * w[None, :]).ravel()
    envelope = f.mass * np.exp(-0.5 * (f.sigma * z) ** 2 - s * z ** alpha)
    phase = np.cos(z[None, :] * (ys[:, None] - np.asarray(f.center)[0]))
    return phase @ (zw * envelope) / np.pi


def truncated_start_deficit(u, v, half_width, phi, psi, params, quad=None,
                            y_span=14.0, n_r=20):
    """Covariance lost to truncating the initial field to [-L, L] (d = 1).

    The exact system covariance assumes ancestors on all of R; a simulation
    seeds them only inside the window. The missing mass is

        int phi(y) (T_{|v-u|} psi)(y) Q_u(y) dy
      + M V int_0^{min(u,v)} int (T_{u-r} phi)(y) (T_{v-r} psi)(y) Q_r(y) dy dr

    with Q_t(y) = P(|y + X_t| > L). Quadrature accuracy ~1 percent, which
    is all a bias diagnostic needs.
    """
    if params.d != 1:
        raise ValueError("deficit diagnostic implemented for d = 1")
    L = half_width
    lo_t, hi = (u, v) if u <= v else (v, u)
    alpha = params.alpha
    mv = params.m2 * params.branch_rate
    ys, yw = np.polynomial.legendre.leggauss(64)
    ys = ys * y_span
    yw = yw * y_span
    if L - y_span <= 0:
        raise ValueError("window must exceed the y integration span")

    def q_tail(t, y):
        # one-sided tails: P(y + X > L) + P(y + X < -L)
        return stable_tail_series(L - y, t, alpha) \
            + stable_tail_series(L + y, t, alpha)

    def t_phi_vals(f, s):
        if s == 0:
            return f(ys[:, None])
        return semigroup_on_grid(f, s, ys, alpha)

    motion = 0.0
    if lo_t > 0:
        motion = float(np.sum(yw * phi(ys[:, None])
                              * t_phi_vals(psi, hi - lo_t)
                              * q_tail(lo_t, ys)))
    rs, rw = np.polynomial.legendre.leggauss(n_r)
    rs = 0.5 * lo_t * (rs + 1.0)
    rw = 0.5 * lo_t * rw
    branch = 0.0
    for r, wr in zip(rs, rw):
        vals = t_phi_vals(phi, u - r) * t_phi_vals(psi, v - r)
        branch += wr * float(np.sum(yw * vals * q_tail(r, ys)))
    return motion + mv * branch


# Piecewise-stable building blocks for the variance-deficit kernel. Each is
# switched to its Maclaurin series below x = 0.03 so the values stay accurate
# to ~1e-12; plain evaluation loses enough digits near zero to stall the
# adaptive quadrature.

def _i2_block(x):
    # int_0^x (1 - e^-w)^2 dw; (1 - e^-w)^2 = sum (-1)^k (2^k - 2) w^k / k!
    small = x < 0.03
    xs = np.where(small, x, 1.0)
    ser = (xs**3 / 3 - xs**4 / 4 + 7 * xs**5 / 60 - xs**6 / 24
           + 31 * xs**7 / 2880 - xs**8 / 320)
    direct = x + 2.0 * np.expm1(-x) - 0.5 * np.expm1(-2.0 * x)
    return np.where(small, ser, direct)


def _i3_block(x):
    # int_0^x w (1 - e^-w)^2 dw
    small = x < 0.03
    xs = np.where(small, x, 1.0)
    ser = (xs**4 / 4 - xs**5 / 5 + 7 * xs**6 / 72 - xs**7 / 28
           + 31 * xs**8 / 2880 - xs**9 / 360)
    xb = np.where(small, 1.0, x)
    ex = np.exp(-xb)
    direct = (xb**2 / 2 - 2.0 * (1.0 - (1.0 + xb) * ex)
              + 0.25 * (1.0 - (1.0 + 2.0 * xb) * ex**2))
    return np.where(small, ser, direct)


def _m0_block(x):
    # 1 - (1 - e^-x)/x = sum_{j>=1} (-1)^{j+1} x^j / (j+1)!
    small = x < 0.03
    xs = np.where(small, x, 1.0)
    ser = (xs / 2 - xs**2 / 6 + xs**3 / 24 - xs**4 / 120 + xs**5 / 720
           - xs**6 / 5040)
    xb = np.where(small, 1.0, x)
    direct = 1.0 + np.expm1(-xb) / xb
    return np.where(small, ser, direct)


def _m1_block(x):
    # 1/2 - (1 - e^-x)/x + (1 - (1+x) e^-x)/x^2
    #   = sum_{j>=1} (-1)^{j+1} x^j / (j+2)!
    small = x < 0.03
    xs = np.where(small, x, 1.0)
    ser = (xs / 6 - xs**2 / 24 + xs**3 / 120 - xs**4 / 720 + xs**5 / 5040
           - xs**6 / 40320)
    xb = np.where(small, 1.0, x)
    ex = np.exp(-xb)
    direct = 0.5 - (1.0 - ex) / xb + (1.0 - (1.0 + xb) * ex) / xb**2
    return np.where(small, ser, direct)


_DEFICIT_QUAD = QuadConfig(rtol=1e-7, max_rounds=12)


def window_variance_deficit(T, t_frac, half_width, phi, params, t_burn=0.0):
    """First-order Var X_T(t) loss from seeding only inside [-L, L] (d = 1).

    Ancestors outside the window still feed covariance mass into the
    observation region through their heavy tails. Writing Q for the chance
    that an ancestor crosses the window edge, Q ~ (age) * C_alpha * L^-alpha,
    the missing variance separates into a motion part weighted by the
    particle age at the earlier observation time and a branching part
    weighted by the ancestor age at the branch time. Both collapse to one
    radial quadrature with closed-form time integrals:

        D = T^-h C_alpha L^-alpha (2 pi)^-1 int |phi_hat|^2
              [ Jm(S, a) + (M V) Jb(S, a) ] dz,     a = |z|^alpha, S = T t

    with t_burn > 0 adding the pre-observation ancestor age (the burn-in
    protocol) to both weights plus the burn-in-era branch term. Accuracy is
    first order in the crossing mass; at the default window rule the
    correction to the correction is O(eps^2). Companion diagnostic to
    truncated_start_deficit, which is exact but limited to small times.
    """
    if params.d != 1:
        raise ValueError("deficit diagnostic implemented for d = 1")
    S = T * t_frac
    if S <= 0:
        return 0.0
    alpha = params.alpha
    mv = params.m2 * params.branch_rate
    motion = params_to_motion(params)

    def branch_kernel(rho):
        a = rho ** alpha
        x = S * a
        out = (x * _i2_block(x) - _i3_block(x)) / a**4
        if t_burn > 0:
            g2 = (np.expm1(-x) / a) ** 2
            pre = g2 * (2.0 * t_burn * a + np.expm1(-2.0 * t_burn * a)) \
                / (4.0 * a**2)
            out = out + t_burn * _i2_block(x) / a**3 + pre
        return out

    def motion_kernel(rho):
        a = rho ** alpha
        x = S * a
        jm = 2.0 * S**2 / a * _m1_block(x)
        if t_burn > 0:
            jm = jm + 2.0 * t_burn * S / a * _m0_block(x)
        return jm

    hint = S ** (-1.0 / alpha)
    db = pairing_with_time_kernel(phi, phi, motion, branch_kernel,
                                  scale_hint=hint, quad=_DEFICIT_QUAD)
    dm = pairing_with_time_kernel(phi, phi, motion, motion_kernel,
                                  scale_hint=hint, quad=_DEFICIT_QUAD)
    return (mv * db + dm) * tail_constant(alpha) \
        / half_width**alpha / T**params.h
