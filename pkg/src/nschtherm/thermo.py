"""Material closures and the scalar inequality suite.

Caloric law: the free energy density ``f_delta(theta)`` with

    f_0(theta)     = -theta (log theta - 1)
    f_delta(theta) = -theta**(delta+1) / (delta (delta+1)),   0 < delta < 1

internal energy ``Q = f - theta f'`` and relative free energy
``Lambda(theta|theta_t) = f(theta) - f(theta_t) - f'(theta) (theta - theta_t)``.
Mixing energy: ``F(y) = (y^2 - 1)^2 / 4`` split as ``F = G - lam y^2`` with
``G`` convex.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from .errors import DomainError
from .grid import Grid, integrate


@dataclass(frozen=True)
class PhysParams:
    """Physical parameters.

    ``M`` weights the dual-norm term of the relative energy; ``None`` means
    "calibrate on first use" (see :func:`nschtherm.relenergy.calibrate_M`).
    """

    eps: float = 0.1
    delta: float = 0.0
    beta: float = 1.0
    kappa0: float = 1.0
    kappa1: float = 0.0
    nu0: float = 1.0
    nu1: float = 0.0
    lam: float = 1.0
    gamma: float = 0.0
    p_reg: float = 4.0
    M: float | None = None

    def __post_init__(self):
        if not self.eps > 0:
            raise DomainError("eps must be positive")
        if not 0.0 <= self.delta < 1.0:
            raise DomainError("delta must lie in [0, 1)")
        if self.beta < 0:
            raise DomainError("beta must be nonnegative")
        if not self.kappa0 > 0 or self.kappa1 < 0:
            raise DomainError("need kappa0 > 0 and kappa1 >= 0")
        if not self.nu0 > 0 or self.nu1 < 0:
            raise DomainError("need nu0 > 0 and nu1 >= 0")
        if self.lam < 0 or self.gamma < 0:
            raise DomainError("lam and gamma must be nonnegative")
        if self.M is not None and self.M < 0:
            raise DomainError("M must be nonnegative")

    def with_(self, **kw) -> "PhysParams":
        return replace(self, **kw)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def _positive(theta):
    theta = np.asarray(theta, dtype=float)
    if np.any(~(theta > 0)):
        raise DomainError("temperature must be positive")
    return theta


def _check_delta(delta):
    if not 0.0 <= delta < 1.0:
        raise DomainError(f"delta={delta} outside [0, 1)")


# ---------------------------------------------------------------------------
# Caloric law


def f(theta, delta=0.0):
    theta = _positive(theta)
    _check_delta(delta)
    if delta == 0:
        return -theta * (np.log(theta) - 1.0)
    return -theta ** (delta + 1) / (delta * (delta + 1))


def f_prime(theta, delta=0.0):
    theta = _positive(theta)
    _check_delta(delta)
    if delta == 0:
        return -np.log(theta)
    return -theta**delta / delta


def f_second(theta, delta=0.0):
    theta = _positive(theta)
    _check_delta(delta)
    return -theta ** (delta - 1.0)


def inv_f_prime(y, delta=0.0):
    """Inverse of ``f'``: the temperature with ``f'(theta) = y``."""
    y = np.asarray(y, dtype=float)
    _check_delta(delta)
    if delta == 0:
        return np.exp(-y)
    if np.any(y >= 0):
        raise DomainError("f' is negative for delta > 0")
    return (-delta * y) ** (1.0 / delta)


def Q(theta, delta=0.0):
    """Internal energy ``f - theta f'`` = ``theta^(1+delta) / (1+delta)``."""
    theta = _positive(theta)
    _check_delta(delta)
    return theta ** (1.0 + delta) / (1.0 + delta)


def heat_capacity(theta, delta=0.0):
    """``dQ/dtheta = theta^delta``."""
    theta = _positive(theta)
    return theta**delta


def Lambda(theta, theta_t, delta=0.0):
    """Relative free energy ``f(theta) - f(theta_t) - f'(theta)(theta - theta_t)``; nonnegative."""
    theta, theta_t = _positive(theta), _positive(theta_t)
    return f(theta, delta) - f(theta_t, delta) - f_prime(theta, delta) * (theta - theta_t)


# ---------------------------------------------------------------------------
# Transport coefficients


def kappa(theta, p: PhysParams):
    theta = _positive(theta)
    return p.kappa0 + p.kappa1 * theta**p.beta


def kappa_gamma(theta, p: PhysParams):
    """Conductivity plus the ``gamma theta^p_reg`` regularisation."""
    k = kappa(theta, p)
    return k + p.gamma * theta**p.p_reg if p.gamma else k


def kappa_hat(r, p: PhysParams):
    """Antiderivative of ``kappa(r)/r`` vanishing at ``r = 1``."""
    r = _positive(r)
    if p.beta == 0:
        return (p.kappa0 + p.kappa1) * np.log(r)
    return p.kappa0 * np.log(r) + (p.kappa1 / p.beta) * (r**p.beta - 1.0)


def nu(theta, p: PhysParams):
    theta = _positive(theta)
    return p.nu0 + p.nu1 * theta / (1.0 + theta)


# ---------------------------------------------------------------------------
# Mixing energy


def F(y):
    y = np.asarray(y, dtype=float)
    return 0.25 * (y * y - 1.0) ** 2


def F_prime(y):
    y = np.asarray(y, dtype=float)
    return y**3 - y


def F_second(y):
    y = np.asarray(y, dtype=float)
    return 3.0 * y * y - 1.0


def G(y, lam=1.0):
    """Convex part ``F + lam y^2`` (convex for ``lam >= 1/2``)."""
    y = np.asarray(y, dtype=float)
    return F(y) + lam * y * y


def G_prime(y, lam=1.0):
    return F_prime(y) + 2.0 * lam * np.asarray(y, dtype=float)


def G_second(y, lam=1.0):
    return F_second(y) + 2.0 * lam


def growth_check(y) -> float:
    """``sup |F'| log(e + |F'|) / (1 + |F|)`` over the samples ``y``."""
    fp = np.abs(F_prime(y))
    return float(np.max(fp * np.log(np.e + fp) / (1.0 + np.abs(F(y)))))


# ---------------------------------------------------------------------------
# Scalar inequalities

ABS_TOL = 1e-12


def _check_beta(beta, delta, lo=2.0, hi=2.0):
    beta = np.asarray(beta, dtype=float)
    if np.any(beta < lo * delta - 1e-15) or np.any(beta > hi - hi * delta + 1e-15):
        raise DomainError(f"beta outside [{lo}*delta, {hi}-{hi}*delta]")


def relpos_terms(theta, theta_t, delta, beta=None):
    """Left-hand sides of the two relative-positivity bounds, ``Lambda``, and the
    quotient ``(theta^(b/2) - theta_t^(b/2))^2 / Lambda``.

    With ``beta=None`` only the first bound and ``Lambda`` are computed (the
    other two entries are ``None``).
    """
    theta, theta_t = _positive(theta), _positive(theta_t)
    _check_delta(delta)
    lam = Lambda(theta, theta_t, delta)
    step = (f_prime(theta, delta) - f_prime(theta_t, delta)) / f_second(theta_t, delta)
    lhs1 = theta - theta_t - step
    if beta is None:
        return lhs1, None, lam, None
    _check_beta(beta, delta)
    b2 = np.asarray(beta) / 2.0
    lhs2 = theta_t ** (1.0 - b2) * (theta**b2 - theta_t**b2 - b2 * theta_t ** (b2 - 1.0) * step)
    diff2 = (theta**b2 - theta_t**b2) ** 2
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(lam > 0, diff2 / np.where(lam > 0, lam, 1.0), 0.0)
    return lhs1, lhs2, lam, ratio


def lemma_relpos_check(theta, theta_t, delta, beta):
    """Return ``(ok_i, ok_ii, ratio_iii)``.

    ``ok_i``/``ok_ii`` test the two constant-free bounds against ``Lambda`` with
    an absolute slack of 1e-12; ``ratio_iii`` is the largest quotient for the
    constant-bearing bound.
    """
    lhs1, lhs2, lam, ratio = relpos_terms(theta, theta_t, delta, beta)
    ok1 = bool(np.all(lhs1 - lam <= ABS_TOL))
    ok2 = bool(np.all(lhs2 - lam <= ABS_TOL))
    return ok1, ok2, float(np.max(ratio))


def fenchel_terms(theta, theta_t, g, delta):
    theta, theta_t = _positive(theta), _positive(theta_t)
    g = np.asarray(g, dtype=float)
    if np.any(g < 0) or np.any(g > 0.5):
        raise DomainError("g must lie in [0, 1/2]")
    lhs = theta / theta_t * g
    rhs = Lambda(theta, theta_t, delta) / theta_t + 2.0 ** (1.0 / (1.0 - delta)) * g
    return lhs, rhs


def lemma_fenchel_check(theta, theta_t, g, delta) -> bool:
    """Pointwise ``(theta/theta_t) g <= Lambda/theta_t + 2^(1/(1-delta)) g`` for ``0 <= g <= 1/2``."""
    lhs, rhs = fenchel_terms(theta, theta_t, g, delta)
    return bool(np.all(lhs - rhs <= ABS_TOL))


def lemma_lnest_pointwise_check(a, b) -> float:
    """Largest ``v sqrt(log v) / (v^2/u^2 + u^2 log u^2 + 1)``, ``u = sqrt(b)+1``, ``v = a+2u``."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if np.any(a < 0) or np.any(b < 0):
        raise DomainError("a, b must be nonnegative")
    u = np.sqrt(b) + 1.0
    v = a + 2.0 * u
    ratio = v * np.sqrt(np.log(v)) / (v * v / (u * u) + u * u * np.log(u * u) + 1.0)
    return float(np.max(ratio))


def _field_ratio(grid, num, theta, theta_t, delta):
    den = integrate(grid, Lambda(theta, theta_t, delta))
    top = integrate(grid, np.abs(num)) ** 2
    if den <= 0.0:
        return 0.0
    return top / den


def lemma_log_ratio(grid: Grid, theta, theta_t, delta=0.0) -> float:
    """``|f'(theta) - f'(theta_t)|_{L1}^2 / integral Lambda`` (0 when the fields agree)."""
    num = f_prime(theta, delta) - f_prime(theta_t, delta)
    return _field_ratio(grid, num, theta, theta_t, delta)


def lemma_diff_ratio(grid: Grid, theta, theta_t, delta, beta) -> float:
    """``|theta^(b/2) - theta_t^(b/2)|_{L1}^2 / integral Lambda``."""
    theta, theta_t = _positive(theta), _positive(theta_t)
    num = theta ** (beta / 2) - theta_t ** (beta / 2)
    return _field_ratio(grid, num, theta, theta_t, delta)


# ---------------------------------------------------------------------------
# Sampling for the scans


def smooth_random_field(grid: Grid, rng: np.random.Generator, modes: int = 4) -> np.ndarray:
    """Random cosine series with ``modes`` x ``modes`` terms, scaled to max |.| = 1."""
    x, y = grid.centers()
    out = np.zeros(grid.shape)
    for k in range(modes):
        for l in range(modes):
            out += rng.normal() / (1 + k * k + l * l) * np.cos(np.pi * k * x / grid.lx) * np.cos(
                np.pi * l * y / grid.ly)
    return out / np.max(np.abs(out))


def random_theta_pair(grid: Grid, rng: np.random.Generator, theta_t_min=0.5, theta_t_max=2.0):
    """A reference field in ``[theta_t_min, theta_t_max]`` and a perturbation of it."""
    s = 0.5 * (smooth_random_field(grid, rng) + 1.0)
    theta_t = theta_t_min + (theta_t_max - theta_t_min) * s
    amp = 10 ** rng.uniform(-2, 0.5)
    theta = theta_t * np.exp(amp * smooth_random_field(grid, rng))
    return theta, theta_t


def log_uniform(rng, lo, hi, n):
    return 10 ** rng.uniform(np.log10(lo), np.log10(hi), n)


@dataclass
class LemmaRow:
    """One line of the lemma report.

    For the constant-free inequalities ``max_value`` is the largest excess
    ``lhs - rhs`` (a pass means ``<= 1e-12``) and ``violations`` counts samples
    above that slack; for ratio scans it is the largest quotient and
    ``violations`` counts non-finite quotients.
    """

    lemma: str
    param_summary: str
    max_value: float
    violations: int

    HEADER = ("lemma", "param_summary", "max_value", "violations")

    def csv_fields(self):
        return [self.lemma, self.param_summary, repr(float(self.max_value)), str(self.violations)]


def _deltas(delta_range, n_groups):
    lo, hi = delta_range
    if hi <= lo:
        return np.array([lo])
    return np.linspace(lo, hi, n_groups, endpoint=False)


def relpos_scan(rng, n, delta_range=(0.0, 0.0), theta_range=(1e-2, 1e2), n_groups=100):
    """Sample the two constant-free relative-positivity bounds.

    ``delta`` runs over ``n_groups`` equispaced values of ``delta_range`` (a
    single value when the range is degenerate); ``beta`` is uniform on
    ``[2 delta, 2 - 2 delta]``, so the second bound is only sampled for
    ``delta <= 1/2``.  Returns violation counts and, for each bound,
    the sample with the largest excess ``lhs - Lambda``.
    """
    deltas = _deltas(delta_range, n_groups)
    per = -(-n // len(deltas))
    out = {"n": per * len(deltas), "viol_i": 0, "viol_ii": 0,
           "worst_i": (0.0, None), "worst_ii": (0.0, None)}
    for d in deltas:
        theta = log_uniform(rng, *theta_range, per)
        theta_t = log_uniform(rng, *theta_range, per)
        # the second bound needs beta in [2 delta, 2 - 2 delta], empty for delta > 1/2
        has_beta = d <= 0.5
        beta = rng.uniform(2.0 * d, 2.0 - 2.0 * d, per) if has_beta else np.full(per, np.nan)
        lhs1, lhs2, lam, _ = relpos_terms(theta, theta_t, d, beta if has_beta else None)
        checks = [("i", lhs1 - lam)] + ([("ii", lhs2 - lam)] if has_beta else [])
        for key, e in checks:
            out["viol_" + key] += int(np.sum(e > ABS_TOL))
            k = int(np.argmax(e))
            if e[k] > out["worst_" + key][0]:
                out["worst_" + key] = (float(e[k]), dict(theta=float(theta[k]), theta_t=float(theta_t[k]),
                                                         delta=float(d), beta=float(beta[k])))
    return out


def relpos_ratio_scan(rng, n, delta=0.0, window="narrow", theta_range=(1e-2, 1e2)):
    """Largest ``(theta^(b/2) - theta_t^(b/2))^2 / Lambda`` with ``beta`` uniform on
    ``[4 delta, 1 - delta]`` (``"narrow"``) or ``[4 delta, 2 - 2 delta]`` (``"wide"``)."""
    hi = 1.0 - delta if window == "narrow" else 2.0 - 2.0 * delta
    if hi < 4.0 * delta:
        raise DomainError(f"empty beta window for delta={delta}")
    theta = log_uniform(rng, *theta_range, n)
    theta_t = log_uniform(rng, *theta_range, n)
    beta = rng.uniform(4.0 * delta, hi, n)
    return float(np.max(relpos_terms(theta, theta_t, delta, beta)[3]))


def fenchel_scan(rng, n, delta_range=(0.0, 0.0), theta_range=(1e-2, 1e2), n_groups=100):
    """Sample the pointwise conjugate-function bound; same layout as :func:`relpos_scan`."""
    deltas = _deltas(delta_range, n_groups)
    per = -(-n // len(deltas))
    out = {"n": per * len(deltas), "viol": 0, "worst": (0.0, None)}
    for d in deltas:
        theta = log_uniform(rng, *theta_range, per)
        theta_t = log_uniform(rng, *theta_range, per)
        g = rng.uniform(0.0, 0.5, per)
        lhs, rhs = fenchel_terms(theta, theta_t, g, d)
        e = lhs - rhs
        out["viol"] += int(np.sum(e > ABS_TOL))
        k = int(np.argmax(e))
        if e[k] > out["worst"][0]:
            out["worst"] = (float(e[k]), dict(theta=float(theta[k]), theta_t=float(theta_t[k]),
                                              delta=float(d), g=float(g[k])))
    return out


def lnest_scan(decades: int = 6, per_decade: int = 20) -> float:
    """Largest pointwise quotient over the log-grid ``[0, 10^decades]^2``."""
    pts = np.concatenate([[0.0], np.logspace(-3, decades, (decades + 3) * per_decade + 1)])
    a, b = np.meshgrid(pts, pts, indexing="ij")
    return lemma_lnest_pointwise_check(a, b)


def field_ratio_scan(grid: Grid, rng, trials: int, kind: str = "log", delta=0.0, beta=1.0,
                     theta_t_min=0.5, theta_t_max=2.0) -> float:
    """Largest field quotient of :func:`lemma_log_ratio` (``kind="log"``) or
    :func:`lemma_diff_ratio` (``kind="diff"``) over ``trials`` random pairs."""
    best = 0.0
    for _ in range(trials):
        theta, theta_t = random_theta_pair(grid, rng, theta_t_min, theta_t_max)
        if kind == "log":
            r = lemma_log_ratio(grid, theta, theta_t, delta)
        else:
            r = lemma_diff_ratio(grid, theta, theta_t, delta, beta)
        best = max(best, r)
    return best


def lemma_suite(rng: np.random.Generator, samples: int = 100_000, delta_range=(0.0, 0.0),
                theta_range=(1e-2, 1e2), field_trials: int = 200, lnest_per_decade: int = 20,
                grid: Grid | None = None) -> list[LemmaRow]:
    """Run every scalar scan and return one :class:`LemmaRow` per check.

    ``delta_range`` applies to the constant-free inequalities; the ratio scans
    use ``delta = delta_range[0]``.
    """
    grid = Grid(16, 16) if grid is None else grid
    lo, hi = delta_range
    dsum = f"delta={lo:g}" if hi <= lo else f"delta=[{lo:g},{hi:g})"
    tsum = f"theta=[{theta_range[0]:g},{theta_range[1]:g}]"
    rows = []
    rp = relpos_scan(rng, samples, delta_range, theta_range)
    rows.append(LemmaRow("relpos_i", f"{dsum};{tsum};n={rp['n']}", rp["worst_i"][0], rp["viol_i"]))
    rows.append(LemmaRow("relpos_ii", f"{dsum};{tsum};beta=[2delta,2-2delta];n={rp['n']}",
                         rp["worst_ii"][0], rp["viol_ii"]))
    fe = fenchel_scan(rng, samples, delta_range, theta_range)
    rows.append(LemmaRow("fenchel", f"{dsum};{tsum};g=[0,0.5];n={fe['n']}", fe["worst"][0], fe["viol"]))
    r3 = relpos_ratio_scan(rng, samples, lo, "narrow", theta_range)
    rows.append(LemmaRow("relpos_iii_ratio", f"delta={lo:g};{tsum};beta=[4delta,1-delta];n={samples}",
                         r3, int(not np.isfinite(r3))))
    ln = lnest_scan(per_decade=lnest_per_decade)
    rows.append(LemmaRow("lnest_chain", f"a,b=[0,1e6];per_decade={lnest_per_decade}", ln,
                         int(not np.isfinite(ln))))
    for kind in ("log", "diff"):
        r = field_ratio_scan(grid, rng, field_trials, kind, delta=lo)
        rows.append(LemmaRow(f"{kind}_ratio", f"delta={lo:g};grid={grid.nx}x{grid.ny};trials={field_trials}",
                             r, int(not np.isfinite(r))))
    return rows


def write_lemma_csv(rows, path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LemmaRow.HEADER)
        for r in rows:
            w.writerow(r.csv_fields())
