"""Gauge functions, a Borwein-Preiss search on finite samples, the squared-distance
functional and polynomial approximation of terminal conditions.

Everything here works on finite sample sets of ``P(K) x [0, T]``, where upper
semicontinuity and boundedness are automatic and every inequality of the
variational principle can be checked exhaustively.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from . import functions as fn
from .calculus import CylinderFunctional, DerivativeField, PolynomialMap, QuadraticMap
from .errors import UsageError
from .measures import GridMeasure, MetricFamily, d2_from_features
from .kolmogorov import TerminalFunctional, terminal_batch

SLACK = 1e-12


# ---------------------------------------------------------------------------
# Gauge function and perturbations
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GaugeFunction:
    """``rho((mu, t), (nu, s)) = (t - s)^2 + d2(mu, nu)^2``."""

    family: MetricFamily

    def features(self, mu):
        return self.family.features(mu)

    def from_features(self, fa, ta, fb, tb):
        """Vectorised form on feature vectors (broadcast over leading axes)."""
        return (np.asarray(ta) - np.asarray(tb)) ** 2 + d2_from_features(fa, fb, self.family) ** 2

    def __call__(self, p, q):
        (mu, t), (nu, s) = p, q
        return float(self.from_features(self.features(mu), t, self.features(nu), s))

    @staticmethod
    def epsilon_prime(delta_prime):
        """Sharp radius: ``rho <= delta'`` implies ``|t - s| + d2 <= sqrt(2 delta')``."""
        return math.sqrt(2.0 * delta_prime)

    @staticmethod
    def epsilon_prime_loose(delta_prime):
        """Cruder radius ``sqrt(2 delta') + sqrt(delta')`` (implied by the sharp one)."""
        return math.sqrt(2.0 * delta_prime) + math.sqrt(delta_prime)


def check_gauge_properties(rho, points, delta_primes=(1e-4, 1e-3, 1e-2, 1e-1)):
    """Gauge properties on a finite list of (measure, time) points.

    Returns a dict with the maximal self-distance, a continuity probe along
    convex interpolations, and for each ``delta'`` whether every pair with
    ``rho <= delta'`` obeys both radius bounds.
    """
    F = np.stack([rho.features(m) for m, _ in points])
    t = np.array([s for _, s in points])
    R = rho.from_features(F[:, None, :], t[:, None], F[None, :, :], t[None, :])
    D = d2_from_features(F[:, None, :], F[None, :, :], rho.family)
    sep = np.abs(t[:, None] - t[None, :]) + D
    out = {"self_max": float(np.max(np.abs(np.diag(R)))), "radius": []}
    for dp in delta_primes:
        mask = R <= dp
        worst = float(np.max(sep[mask])) if mask.any() else 0.0
        out["radius"].append(
            {
                "delta_prime": dp,
                "pairs": int(mask.sum()),
                "max_separation": worst,
                "sharp_ok": bool(worst <= rho.epsilon_prime(dp) + SLACK),
                "loose_ok": bool(worst <= rho.epsilon_prime_loose(dp) + SLACK),
            }
        )
    # continuity: rho((mu_n, t_n), (mu, t)) -> 0 along mu_n = (1 - 1/n) mu + nu / n, t_n -> t
    (m0, t0), (m1, _) = points[0], points[-1]
    seq = []
    for n in (1, 2, 4, 8, 16, 32, 64):
        th = 1.0 / n
        fn_ = (1 - th) * F[0] + th * F[-1]
        seq.append(float(rho.from_features(fn_, t0 + th * 0.1, F[0], t0)))
    out["continuity_sequence"] = seq
    out["continuity_ok"] = bool(all(a >= b for a, b in zip(seq, seq[1:])) and seq[-1] < 1e-3 * max(seq[0], 1e-300) + 1e-12)
    out["passed"] = bool(out["self_max"] == 0.0 and out["continuity_ok"] and all(r["sharp_ok"] and r["loose_ok"] for r in out["radius"]))
    return out


@dataclass(frozen=True, eq=False)
class PerturbationSeries:
    """``phi(mu, t) = sum_k w_k rho((mu, t), (mu_k, t_k))`` with finitely many centres."""

    centers: tuple  # ((GridMeasure, t), ...)
    weights: np.ndarray
    gauge: GaugeFunction

    @property
    def length(self):
        return len(self.centers)

    def __call__(self, p):
        return math.fsum(w * self.gauge(p, c) for w, c in zip(self.weights, self.centers))

    def term(self, k, p):
        return float(self.weights[k] * self.gauge(p, self.centers[k]))

    def as_functional(self, t):
        """``mu -> phi(mu, t)`` as a cylinder functional over the metric family (quadratic outer map)."""
        fam = self.gauge.family
        c = fam.coefficients
        w = np.asarray(self.weights)
        Fk = np.stack([fam.features(m) for m, _ in self.centers])  # (K, m)
        tk = np.array([s for _, s in self.centers])
        Q = 2.0 * w.sum() * np.diag(c)
        b = -2.0 * c * (w @ Fk)
        const = float(w @ ((t - tk) ** 2) + w @ (Fk**2 @ c))
        return CylinderFunctional(fam.funcs, QuadraticMap(Q, b, const), f"perturbation(t={t:g})")


@dataclass(frozen=True, eq=False)
class SampledObjective:
    points: tuple  # ((GridMeasure, t), ...)
    values: np.ndarray
    tag: str = "sampled"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 1 or v.size == 0 or v.size != len(self.points):
            raise UsageError("objective needs one finite value per sample point")
        if not np.all(np.isfinite(v)):
            raise UsageError("objective values must be finite")
        object.__setattr__(self, "points", tuple(self.points))
        object.__setattr__(self, "values", v)

    @property
    def size(self):
        return self.values.size


@dataclass
class BPResult:
    index: int
    point: tuple
    sequence: list  # indices of the centres x_0, x_1, ...
    series: PerturbationSeries
    certificates: dict

    @property
    def passed(self):
        return all(c["passed"] for c in self.certificates.values())


def bp_search(G, rho, delta, eps, start):
    """Constructive Borwein-Preiss iteration on a finite sample set.

    Stage ``k`` maximises ``G - delta sum_{i<=k} 2^-i rho(., x_i)`` over the
    samples (ties keep the current point, then the lowest index) and stops
    when the maximiser repeats.  The returned series continues the stationary
    sequence to infinity, which puts total weight ``2^{1-k}`` on the final point.
    """
    if not delta > 0 or not eps > 0:
        raise UsageError("delta and eps must be positive")
    n = G.size
    if not 0 <= start < n:
        raise UsageError(f"start index {start} outside the sample set")
    vals = G.values
    sup = float(vals.max())
    if vals[start] < sup - eps:
        raise UsageError(f"G(start) = {vals[start]:.6g} is below sup G - eps = {sup - eps:.6g}")
    F = np.stack([rho.features(m) for m, _ in G.points])
    t = np.array([s for _, s in G.points])

    def rho_to(i):
        return rho.from_features(F, t, F[i], t[i])

    seq = [start]
    pert = np.zeros(n)
    for k in range(n + 1):
        pert = pert + 2.0 ** (-k) * rho_to(seq[-1])
        obj = vals - delta * pert
        best = float(obj.max())
        cur = seq[-1]
        nxt = cur if obj[cur] >= best else int(np.flatnonzero(obj == best)[0])
        if nxt == cur:
            break
        seq.append(nxt)
    else:  # pragma: no cover - a strictly increasing objective cannot cycle on a finite set
        raise RuntimeError("Borwein-Preiss iteration did not terminate")
    K = len(seq) - 1
    weights = np.array([2.0 ** (-i) for i in range(K)] + [2.0 ** (1 - K)])
    centers = tuple(G.points[i] for i in seq)
    series = PerturbationSeries(centers, weights, rho)
    bar = seq[-1]

    phi = weights @ np.stack([rho_to(i) for i in seq])  # phi_eps at every sample
    perturbed = vals - delta * phi
    # i) rho(x_bar, x_k) <= eps / (2^k delta) for every centre; the tail repeats x_bar (rho = 0)
    rho_bar = rho_to(bar)
    bounds = [
        {"k": k, "rho": float(rho_bar[i]), "bound": eps / (2.0**k * delta), "passed": bool(rho_bar[i] <= eps / (2.0**k * delta) + SLACK)}
        for k, i in enumerate(seq)
    ]
    cert = {
        "i": {"passed": all(b["passed"] for b in bounds), "per_k": bounds},
        "ii": {
            "start_value": float(vals[start]),
            "perturbed_value_at_bar": float(perturbed[bar]),
            "objective_form": "G(x0) <= G(xbar) - delta phi(xbar)",
            "difference_form": "G(x0) - delta phi(x0) <= (G - delta phi)(xbar)",
            "objective_form_ok": bool(vals[start] <= perturbed[bar] + SLACK),
            "difference_form_ok": bool(perturbed[start] <= perturbed[bar] + SLACK),
        },
        "iii": {
            "max_perturbed": float(perturbed.max()),
            "value_at_bar": float(perturbed[bar]),
            "passed": bool(np.all(perturbed <= perturbed[bar] + SLACK)),
        },
    }
    cert["ii"]["passed"] = cert["ii"]["objective_form_ok"] and cert["ii"]["difference_form_ok"]
    return BPResult(bar, G.points[bar], seq, series, cert)


# ---------------------------------------------------------------------------
# Squared distance functional
# ---------------------------------------------------------------------------


@dataclass
class D2SqDerivatives:
    functional: CylinderFunctional
    lf: DerivativeField
    lf2: DerivativeField
    term_bounds: list

    @property
    def bounds_ok(self):
        return all(t["passed"] for t in self.term_bounds)


def d2sq_functional(mu0, fam):
    """``mu -> d2(mu, mu0)^2`` as a cylinder functional over the family."""
    c = fam.coefficients
    r0 = fam.features(mu0)
    return CylinderFunctional(fam.funcs, QuadraticMap(2.0 * np.diag(c), -2.0 * c * r0, float(c @ r0**2)), "d2sq")


def _term_sup(fam, x_fine):
    """Per mode: sup |f_k| and sup |f_k'| on a fine sample of the domain."""
    vals = np.stack([np.abs(f(x_fine)) for f in fam.funcs])
    ders = np.stack([np.abs(f.derivative(x_fine, 1)) for f in fam.funcs])
    return vals.max(axis=1), ders.max(axis=1)


def d2sq_derivatives(mu0, fam, probes=()):
    """Linear functional derivatives of ``mu -> d2(mu, mu0)^2`` and per-mode bound checks.

    With ``g_k(mu) = <mu - mu0, f_k>^2``:
    ``dg_k/dm = 2 <mu - mu0, f_k> f_k`` (sup <= 4), ``d2g_k/dm2 = 2 f_k f_k`` (sup <= 2),
    and the L-derivatives are bounded by ``4 a_k`` and ``2 a_k^2``.  The bounds are
    checked at the worst case over the domain and at every probe measure.
    """
    grid = fam.grid
    c = fam.coefficients
    r0 = fam.features(mu0)
    F = d2sq_functional(mu0, fam)

    def lf(mu, x):
        r = fam.features(mu)
        x = np.asarray(x, dtype=float)
        return sum(ck * 2.0 * (rk - r0k) * f(x) for ck, rk, r0k, f in zip(c, r, r0, fam.funcs))

    def lf2(mu, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        return sum(ck * 2.0 * f(x) * f(y) for ck, f in zip(c, fam.funcs))

    x_fine = np.linspace(grid.lower, grid.upper, 8 * grid.n + 1)
    sup_f, sup_df = _term_sup(fam, x_fine)
    term_bounds = []
    for k in range(fam.m):
        a = fam.a[k]
        worst_lf = 2.0 * 2.0 * sup_f[k] * sup_f[k]  # |<mu - mu0, f>| <= 2 sup|f|
        probe_lf = max((2.0 * abs(fam.features(m)[k] - r0[k]) * sup_f[k] for m in probes), default=0.0)
        entry = {
            "k": k + 1,
            "lf_sup": worst_lf,
            "lf_probe_sup": probe_lf,
            "lf2_sup": 2.0 * sup_f[k] ** 2,
            "L_sup": 4.0 * sup_f[k] * sup_df[k],
            "L2_sup": 2.0 * sup_df[k] ** 2,
            "a": float(a),
        }
        entry["passed"] = bool(
            entry["lf_sup"] <= 4.0 + SLACK
            and entry["lf_probe_sup"] <= 4.0 + SLACK
            and entry["lf2_sup"] <= 2.0 + SLACK
            and entry["L_sup"] <= 4.0 * a * (1 + 1e-9) + SLACK
            and entry["L2_sup"] <= 2.0 * a * a * (1 + 1e-9) + SLACK
        )
        term_bounds.append(entry)
    return D2SqDerivatives(F, DerivativeField("lf", lf, False), DerivativeField("lf2", lf2), term_bounds)


def lipschitz_benchmark(mu_star, fam):
    """Terminal condition ``Phi(mu) = d2(mu, mu_star)`` (Lipschitz, not a polynomial)."""
    r0 = fam.features(mu_star)

    def single(mu):
        return float(d2_from_features(fam.features(mu), r0, fam))

    def batch(W):
        return d2_from_features(fam.features(W).T, r0, fam)

    return TerminalFunctional.generic(single, bound=None, batch=batch, name="d2(., mu*)")


# ---------------------------------------------------------------------------
# Polynomial functionals
# ---------------------------------------------------------------------------


def moment_exponents(degree):
    """Exponent tuples ``alpha`` over moments ``m_1..m_D`` with ``sum_j j alpha_j <= degree``.

    ``prod_j m_j^alpha_j`` is then a polynomial of total degree at most
    ``degree`` in the measure's atoms, and the sets are nested in ``degree``.
    Ordered by weighted degree, so lower-degree features come first.
    """
    D = max(int(degree), 1)
    out = []
    for total in range(int(degree) + 1):
        for alpha in itertools.product(*(range(total // j + 1) for j in range(1, D + 1))):
            if sum((j + 1) * a for j, a in enumerate(alpha)) == total:
                out.append(alpha)
    return np.array(out, dtype=int).reshape(-1, D)


@dataclass(frozen=True, eq=False)
class PolynomialFunctional:
    """``sum_alpha c_alpha prod_j <mu, xi^j>^alpha_j`` with ``xi`` the rescaled coordinate."""

    exponents: np.ndarray
    coeffs: np.ndarray
    degree: int
    lower: float = 0.0
    upper: float = 1.0

    @property
    def phis(self):
        return tuple(fn.monomial(j, self.lower, self.upper) for j in range(1, self.exponents.shape[1] + 1))

    def as_cylinder(self):
        return CylinderFunctional(self.phis, PolynomialMap(self.exponents, self.coeffs), f"poly[{self.degree}]")

    def moments(self, W, grid):
        W = W.weights if isinstance(W, GridMeasure) else np.asarray(W, dtype=float)
        P = np.stack([fn.on_grid(p, grid) for p in self.phis])
        return P @ W

    def design(self, W, grid):
        r = self.moments(W, grid)
        if r.ndim == 1:
            r = r[:, None]
        return design_matrix(r, self.exponents)

    def batch(self, W, grid):
        return self.design(W, grid) @ self.coeffs

    def __call__(self, mu):
        return float(self.batch(mu.weights[:, None], mu.grid)[0])

    def as_terminal(self):
        return TerminalFunctional.generic(lambda mu: self(mu), name=f"poly[{self.degree}]")


def design_matrix(r, exponents):
    """(M, n_features) matrix of moment monomials; ``r`` is (D, M)."""
    M = r.shape[1]
    cols = []
    for e in exponents:
        col = np.ones(M)
        for j, p in enumerate(e):
            if p:
                col = col * r[j] ** p
        cols.append(col)
    return np.stack(cols, axis=1)


@dataclass
class FitReport:
    degree: int
    norm: str
    train_sup: float
    train_rms: float
    heldout_sup: Optional[float]
    rank: int
    n_features: int
    rank_deficient: bool
    fallback: bool = False

    def to_dict(self):
        return dict(self.__dict__)


def _phi_values(Phi, W, grid):
    Phi = Phi if isinstance(Phi, TerminalFunctional) else (
        TerminalFunctional.from_cylinder(Phi) if isinstance(Phi, CylinderFunctional) else TerminalFunctional.generic(Phi)
    )
    return Phi.evaluate_batch(W, grid)


def _minimax(X, y):
    """Coefficients minimising ``max |X c - y|`` (linear program)."""
    M, p = X.shape
    cost = np.zeros(p + 1)
    cost[-1] = 1.0
    ones = np.ones((M, 1))
    A = np.block([[X, -ones], [-X, -ones]])
    bvec = np.concatenate([y, -y])
    res = linprog(cost, A_ub=A, b_ub=bvec, bounds=[(None, None)] * p + [(0, None)], method="highs")
    if not res.success:  # pragma: no cover - the problem is always feasible and bounded
        raise RuntimeError(f"minimax fit failed: {res.message}")
    return res.x[:p]


def poly_fit(Phi, degree, samples, heldout=(), norm="ls", previous=None):
    """Fit a moment polynomial of the given degree to ``Phi`` on ``samples``.

    ``norm="ls"``: minimum-norm least squares (rank deficiency is flagged).
    ``norm="sup"``: minimax fit by linear programming.  ``previous`` may hold a
    lower-degree fit; its coefficients embed into the larger feature set, and
    the embedded fit is kept if it is at least as good, so the training sup
    error never increases along a degree sequence.
    """
    if degree < 0:
        raise UsageError("degree must be nonnegative")
    samples = list(samples)
    if not samples:
        raise UsageError("poly_fit needs at least one sample")
    grid = samples[0].grid
    W = np.stack([m.weights for m in samples], axis=1)
    y = _phi_values(Phi, W, grid)
    E = moment_exponents(degree)
    poly = PolynomialFunctional(E, np.zeros(len(E)), int(degree), grid.lower, grid.upper)
    X = poly.design(W, grid)
    rank = int(np.linalg.matrix_rank(X))
    if norm == "ls":
        coef = np.linalg.lstsq(X, y, rcond=None)[0]
    elif norm == "sup":
        coef = _minimax(X, y)
    else:
        raise UsageError(f"unknown norm {norm!r}")
    fallback = False
    if previous is not None:
        emb = embed_coefficients(previous, E)
        err_prev = np.max(np.abs(X @ emb - y))
        err_new = np.max(np.abs(X @ coef - y))
        if norm == "sup" and err_prev <= err_new:
            coef, fallback = emb, True
    fit = PolynomialFunctional(E, coef, int(degree), grid.lower, grid.upper)
    resid = X @ coef - y
    held = None
    if heldout:
        Wh = np.stack([m.weights for m in heldout], axis=1)
        held = float(np.max(np.abs(fit.batch(Wh, grid) - _phi_values(Phi, Wh, grid))))
    report = FitReport(
        int(degree), norm, float(np.max(np.abs(resid))), float(np.sqrt(np.mean(resid**2))), held, rank, len(E), rank < len(E), fallback
    )
    return fit, report


def embed_coefficients(poly, exponents):
    """Coefficients of ``poly`` expressed over a larger exponent list."""
    out = np.zeros(len(exponents))
    D = exponents.shape[1]
    index = {tuple(e): i for i, e in enumerate(exponents)}
    for e, c in zip(poly.exponents, poly.coeffs):
        e = tuple(e) + (0,) * (D - len(e))
        if tuple(e[D:]) and any(e[D:]):
            raise UsageError("previous fit uses moments beyond the new degree")
        out[index[tuple(e[:D])]] += c
    return out


# ---------------------------------------------------------------------------
# Comparison pipeline
# ---------------------------------------------------------------------------


@dataclass
class ComparisonRow:
    degree: int
    u_n: float
    u: float
    difference: float
    sampled_sup: float
    bound_holds: bool
    fit: FitReport


@dataclass
class ComparisonReport:
    rows: list
    u: float
    u_stderr: float
    M: int
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "u": self.u,
            "u_stderr": self.u_stderr,
            "M": self.M,
            "rows": [
                {
                    "degree": r.degree,
                    "u_n": r.u_n,
                    "u": r.u,
                    "difference": r.difference,
                    "sampled_sup": r.sampled_sup,
                    "bound_holds": r.bound_holds,
                    "fit": r.fit.to_dict(),
                }
                for r in self.rows
            ],
        }


def comparison_pipeline(Phi, probe, degrees, M, scenario, samples, seed=0, workers=1, norm="sup", heldout=()):
    """``u_n(probe) -> u(probe)`` for polynomial fits ``Phi_n`` under common random numbers.

    One batch of terminal measures from the probe serves every functional,
    which is what two calls of :func:`~kslab.kolmogorov.solve_u` with the same
    seed would produce.  ``u_n - u`` is then an average of per-path
    differences and is bounded by their maximum; ``sampled_sup`` is the sup
    of ``|Phi_n - Phi|`` over the training samples together with these
    terminal measures.
    """
    mu0, t0 = probe
    grid = mu0.grid
    batch = terminal_batch(mu0, t0, scenario, M, seed, 0, workers)
    W = batch.terminal
    base = _phi_values(Phi, W, grid)
    u = math.fsum(base) / M
    u_se = float(np.std(base, ddof=1) / math.sqrt(M)) if M > 1 else 0.0
    Wtr = np.stack([m.weights for m in samples], axis=1)
    ytr = _phi_values(Phi, Wtr, grid)
    rows = []
    prev = None
    for n in sorted(degrees):
        fit, rep = poly_fit(Phi, n, samples, heldout, norm=norm, previous=prev)
        prev = fit
        vals = fit.batch(W, grid)
        per_path = vals - base
        diff = math.fsum(per_path) / M
        sup = max(float(np.max(np.abs(per_path))), float(np.max(np.abs(fit.batch(Wtr, grid) - ytr))))
        rows.append(ComparisonRow(n, math.fsum(vals) / M, u, diff, sup, bool(abs(diff) <= sup), rep))
    diag = {"max_mass_error": batch.max_mass_error, "min_weight": batch.min_weight}
    return ComparisonReport(rows, u, u_se, M, diag)
