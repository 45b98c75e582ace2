"""Critical offspring distributions for the branching mechanism.

A law here is a probability mass function (p_k) on the nonnegative integers
with mean exactly 1 (critical branching) and finite second factorial moment
M = F''(1) = sum_k k(k-1) p_k. The generating function is F(s) = sum p_k s^k,
and the derived function

    G(v) = F(1 - v) - 1 + v,   v in [0, 1],

collects everything the limit theory needs from the law: G(v) ~ (M/2) v^2
as v -> 0, G is nonnegative, nondecreasing on [0, 1], and G(v)/v^2 is
bounded by M/2 when F''' exists (true for every law built here).

Builtin kinds:
    binary              p_0 = p_2 = 1/2, F(s) = (1 + s^2)/2, M = 1.
                        G(v) = v^2/2 exactly.
    geometric_critical  p_k = 2^{-(k+1)}, F(s) = 1/(2 - s), M = 2.
    poisson_unit        Poisson(1), F(s) = e^{s-1}, M = 1.
    custom              finite support, at most 64 atoms, must be critical.
"""

import numpy as np

MAX_CUSTOM_ATOMS = 64
MOMENT_TOL = 1e-12

_KINDS = ("binary", "geometric_critical", "poisson_unit", "custom")


class OffspringLaw:
    """Offspring distribution with exact pgf evaluation and sampling."""

    def __init__(self, kind, atoms=None, probs=None):
        if kind not in _KINDS:
            raise ValueError("unknown offspring law kind: %r" % (kind,))
        self.kind = kind
        if kind == "custom":
            if atoms is None or probs is None:
                raise ValueError("custom law needs atoms and probs")
            atoms = np.asarray(atoms)
            probs = np.asarray(probs, dtype=float)
            if atoms.ndim != 1 or probs.shape != atoms.shape:
                raise ValueError("atoms and probs must be 1-d and same length")
            if len(atoms) > MAX_CUSTOM_ATOMS:
                raise ValueError(
                    "custom law limited to %d atoms" % MAX_CUSTOM_ATOMS)
            if not np.issubdtype(atoms.dtype, np.integer):
                if not np.all(atoms == np.floor(atoms)):
                    raise ValueError("atoms must be integers")
                atoms = atoms.astype(np.int64)
            if np.any(atoms < 0):
                raise ValueError("atoms must be nonnegative")
            if len(np.unique(atoms)) != len(atoms):
                raise ValueError("atoms must be distinct")
            if np.any(probs < 0):
                raise ValueError("probabilities must be nonnegative")
            if abs(probs.sum() - 1.0) > MOMENT_TOL:
                raise ValueError("probabilities must sum to 1 (got %.17g)"
                                 % probs.sum())
            mean = float(np.sum(atoms * probs))
            if abs(mean - 1.0) > MOMENT_TOL:
                raise ValueError(
                    "law must be critical: mean = %.17g != 1" % mean)
            order = np.argsort(atoms)
            self.atoms = atoms[order]
            self.probs = probs[order]
            self._cum = np.cumsum(self.probs)
            self._m2 = float(np.sum(self.atoms * (self.atoms - 1) * self.probs))
        else:
            if atoms is not None or probs is not None:
                raise ValueError("atoms/probs only apply to kind='custom'")
            self.atoms = None
            self.probs = None
            self._m2 = {"binary": 1.0,
                        "geometric_critical": 2.0,
                        "poisson_unit": 1.0}[kind]

    @classmethod
    def binary(cls):
        return cls("binary")

    @classmethod
    def geometric_critical(cls):
        return cls("geometric_critical")

    @classmethod
    def poisson_unit(cls):
        return cls("poisson_unit")

    @classmethod
    def custom(cls, atoms, probs):
        return cls("custom", atoms=atoms, probs=probs)

    def pgf(self, s):
        """F(s) for s in [0, 1] (scalar or array), closed form per kind."""
        s = np.asarray(s, dtype=float)
        if np.any(s < 0) or np.any(s > 1):
            raise ValueError("pgf argument must lie in [0, 1]")
        if self.kind == "binary":
            out = 0.5 * (1.0 + s * s)
        elif self.kind == "geometric_critical":
            out = 1.0 / (2.0 - s)
        elif self.kind == "poisson_unit":
            out = np.exp(s - 1.0)
        else:
            # Horner on the sorted atoms would skip gaps; direct power sum
            # is exact enough for <= 64 integer exponents.
            out = np.sum(self.probs * np.power.outer(s, self.atoms), axis=-1)
        return out if out.ndim else float(out)

    def g(self, v):
        """G(v) = F(1 - v) - 1 + v on [0, 1].

        The builtin kinds use the algebraically simplified forms (v^2/2,
        v^2/(1+v), expm1(-v)+v): the direct expression cancels to O(v^2)
        and would drown the small-v values in rounding error. Custom laws
        subtract F(1) rather than the literal 1, so G(0) is exactly zero
        even when the stored probabilities sum to 1 only up to rounding.
        """
        v = np.asarray(v, dtype=float)
        if np.any(v < 0) or np.any(v > 1):
            raise ValueError("g argument must lie in [0, 1]")
        if self.kind == "binary":
            out = 0.5 * v * v
        elif self.kind == "geometric_critical":
            out = v * v / (1.0 + v)
        elif self.kind == "poisson_unit":
            out = np.expm1(-v) + v
        else:
            out = self.pgf(1.0 - v) - self.pgf(1.0) + v
        return out if np.ndim(out) else float(out)

    def second_factorial_moment(self):
        return self._m2

    def mean(self):
        return 1.0

    def sample(self, rng, size=None):
        """Draw offspring counts. Returns int64 scalar or array."""
        if self.kind == "binary":
            out = 2 * rng.integers(0, 2, size=size)
        elif self.kind == "geometric_critical":
            # numpy's geometric counts trials to first success (>= 1);
            # shifting by 1 gives P(k) = 2^{-(k+1)} on k = 0, 1, ...
            out = rng.geometric(0.5, size=size) - 1
        elif self.kind == "poisson_unit":
            out = rng.poisson(1.0, size=size)
        else:
            u = rng.random(size=size)
            out = self.atoms[np.searchsorted(self._cum, u, side="right")]
        if size is None:
            return int(out)
        return np.asarray(out, dtype=np.int64)

    def __repr__(self):
        if self.kind == "custom":
            return "OffspringLaw(custom, %d atoms)" % len(self.atoms)
        return "OffspringLaw(%s)" % self.kind


def pgf_eval(law, s):
    return law.pgf(s)


def g_eval(law, v):
    return law.g(v)


def second_factorial_moment(law):
    return law.second_factorial_moment()


def sample_offspring(law, rng):
    """One offspring count drawn from the law."""
    return law.sample(rng)


def law_from_config(cfg):
    """Build a law from a config mapping {'kind': ..., 'atoms': [[k, p], ...]}."""
    kind = cfg.get("kind")
    if kind == "custom":
        pairs = cfg.get("atoms")
        if not pairs:
            raise ValueError("custom law config needs 'atoms': [[k, p], ...]")
        atoms = [int(k) for k, _ in pairs]
        probs = [float(p) for _, p in pairs]
        return OffspringLaw.custom(atoms, probs)
    return OffspringLaw(kind)


def random_critical_law(rng, max_atom=8):
    """A fuzzed finite-support critical law (exact mean 1 within 1e-12).

    Draws a random pmf on a random subset of {0, ..., max_atom}, then mixes
    in a point mass at 0 or at max_atom+1 to pull the mean to exactly 1.
    """
    while True:
        m = int(rng.integers(2, max_atom + 1))
        atoms = np.sort(rng.choice(np.arange(max_atom + 1), size=m,
                                   replace=False))
        probs = rng.dirichlet(np.ones(m))
        mean = float(np.sum(atoms * probs))
        if mean > 1.0:
            # mix with delta_0
            theta = 1.0 - 1.0 / mean
            if 0 in atoms:
                probs = probs * (1.0 - theta)
                probs[atoms == 0] += theta
            else:
                atoms = np.concatenate([[0], atoms])
                probs = np.concatenate([[theta], probs * (1.0 - theta)])
        elif mean < 1.0:
            big = max_atom + 1
            theta = (1.0 - mean) / (big - mean)
            atoms = np.concatenate([atoms, [big]])
            probs = np.concatenate([probs * (1.0 - theta), [theta]])
        probs = probs / probs.sum()
        # nudge the largest atom's probability so the mean is 1 to 1e-15
        mean = float(np.sum(atoms * probs))
        err = mean - 1.0
        k_hi = atoms[-1]
        if k_hi > 1 and 0 in atoms:
            # shift weight between atom 0 and k_hi: d(mean) = k_hi * dp
            dp = err / k_hi
            i0 = int(np.nonzero(atoms == 0)[0][0])
            probs[-1] -= dp
            probs[i0] += dp
        if np.all(probs >= 0) and abs(np.sum(atoms * probs) - 1.0) < 1e-12:
            try:
                return OffspringLaw.custom(atoms, probs)
            except ValueError:
                continue


def g_property_report(law, grid_step=1e-3):
    """Numerically audit the structural properties of G on a grid.

    Returns a dict of named checks, each a (value, bound, passed) triple.
    The checks: G(0) = 0, G >= 0, G nondecreasing, G(v)/v^2 <= M/2 + tol,
    G(v)/v^2 -> M/2 as v -> 0 (ratio residual shrinking over decades),
    and for the binary law G(v) = v^2/2 to machine precision.
    """
    m2 = law.second_factorial_moment()
    n = int(round(1.0 / grid_step))
    v = np.linspace(0.0, 1.0, n + 1)
    gv = law.g(v)
    checks = {}
    checks["g_at_zero"] = (abs(float(gv[0])), 1e-14, abs(float(gv[0])) <= 1e-14)
    min_g = float(gv.min())
    checks["g_nonnegative"] = (min_g, -1e-14, min_g >= -1e-14)
    min_step = float(np.diff(gv).min())
    checks["g_nondecreasing"] = (min_step, -1e-12, min_step >= -1e-12)
    vp = v[1:]
    ratio = gv[1:] / vp**2
    max_ratio = float(ratio.max())
    checks["ratio_bounded_by_half_m2"] = (
        max_ratio, m2 / 2 + 1e-9, max_ratio <= m2 / 2 + 1e-9)
    # quadratic behaviour at the origin: residual of G/v^2 against M/2
    # should shrink roughly linearly in v
    res = {}
    for vv in (1e-1, 1e-2, 1e-3):
        res[vv] = abs(float(law.g(vv)) / vv**2 - m2 / 2)
    # laws supported on {0,1,2} have G(v) = (M/2) v^2 exactly, so the
    # residual is pure cancellation noise of size ~eps/v^2; the slack
    # term must absorb that without blunting the check for other laws
    eps = np.finfo(float).eps

    def slack(vv):
        return 300.0 * eps * max(1.0, m2) / vv**2

    shrink = res[1e-2] <= 0.2 * res[1e-1] + slack(1e-2) and \
        res[1e-3] <= 0.2 * res[1e-2] + slack(1e-3)
    checks["quadratic_origin_residual_1e-3"] = (res[1e-3], 0.01 * m2, shrink)
    if law.kind == "binary":
        exact_dev = float(np.abs(gv - v**2 / 2).max())
        checks["binary_exact_half_v_squared"] = (
            exact_dev, 1e-15, exact_dev <= 1e-15)
    return checks
