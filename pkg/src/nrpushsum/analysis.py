"""Matrix-analytic oracles and convergence diagnostics.

The per-round mixing matrix of the noise-resilient protocol is

    M(k) = diag(alpha_i(k) * p_ii) + beta(k) * P_hat = I + beta(k) * (P - I),

a convex combination of the identity and the weight matrix, hence column
stochastic with a strictly positive diagonal.  Products

    W(l, k) = M(k) @ M(k-1) @ ... @ M(l)      (empty product = identity)

drive both state recursions; all M(k) are polynomials in the same P, so
they commute and the accumulation order does not change the product.
Products are accumulated with no re-normalization: column-sum drift is a
measured quantity, not a corrected one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import DirectedNetwork, WeightMatrix
from .noise import NoiseModel, RoundSampler
from .protocol import ProblemInstance
from .schedules import BetaSchedule, ThetaSchedule

MIXING_COLSUM_TOL = 1e-12
PRODUCT_COLSUM_TOL = 1e-10
SUPPORT_TOL = 1e-14
FIT_FLOOR = 100.0 * np.finfo(float).eps


def mixing_matrix(weights: WeightMatrix, beta_k: float) -> np.ndarray:
    """M = I + beta_k * (P - I); columns sum to 1 within 1e-12."""
    if not (0.0 <= beta_k <= 1.0):
        raise ValueError(f"beta_k must lie in [0, 1], got {beta_k}")
    return np.eye(weights.n) + beta_k * weights.p_tilde


def product_matrix(weights: WeightMatrix, beta: BetaSchedule, l: int, k: int) -> np.ndarray:
    """W(l, k) accumulated over rounds r = l..k; k = l-1 gives the identity."""
    if l < 0:
        raise ValueError(f"l must be >= 0, got {l}")
    if k < l - 1:
        raise ValueError(f"k must be >= l-1, got l={l}, k={k}")
    w = np.eye(weights.n)
    for r in range(l, k + 1):
        w = mixing_matrix(weights, beta(r)) @ w
    return w


def contraction(w: np.ndarray) -> float:
    """Largest elementwise spread between any two columns:
    max_j max_{i1,i2} |W[j, i1] - W[j, i2]|."""
    return float((w.max(axis=1) - w.min(axis=1)).max())


def _support_strongly_connected(support: np.ndarray) -> bool:
    """Strong connectivity of the directed graph induced by a boolean matrix
    (support[i, j] means j -> i), via boolean transitive closure."""
    n = support.shape[0]
    reach = support | np.eye(n, dtype=bool)
    # squaring the reachability matrix log2(n) + 1 times closes all paths
    for _ in range(int(np.ceil(np.log2(max(n, 2)))) + 1):
        reach = reach | (reach @ reach)
    return bool(reach.all())


@dataclass(frozen=True)
class CsiaReport:
    column_stochastic: bool
    irreducible: bool
    aperiodic: bool
    max_colsum_error: float

    @property
    def all_true(self) -> bool:
        return self.column_stochastic and self.irreducible and self.aperiodic


def check_csia(
    w: np.ndarray,
    colsum_tol: float = PRODUCT_COLSUM_TOL,
    support_tol: float = SUPPORT_TOL,
) -> CsiaReport:
    """Column-stochastic / irreducible / aperiodic report for a matrix.

    Failures are report entries, never exceptions.  The support uses a
    1e-14 threshold to separate structural zeros from accumulated
    roundoff; aperiodicity additionally needs a positive diagonal.
    """
    colsum_err = float(np.abs(w.sum(axis=0) - 1.0).max())
    column_stochastic = colsum_err <= colsum_tol
    support = np.abs(w) > support_tol
    irreducible = _support_strongly_connected(support)
    aperiodic = irreducible and bool(np.all(np.diag(w) > support_tol))
    return CsiaReport(column_stochastic, irreducible, aperiodic, colsum_err)


@dataclass(frozen=True)
class ConvergenceDiagnostics:
    lambda_hat: float
    upsilon_hat: float
    r_squared: float
    n_points: int
    slope: float
    intercept: float


def fit_log_linear(ks, errors, floor: float = FIT_FLOOR, min_points: int = 20) -> ConvergenceDiagnostics:
    """Least-squares fit of log(error) against k over the pre-floor regime.

    Rejects inputs that never decay (slope >= 0) or with fewer than
    ``min_points`` samples above the floor.
    """
    ks = np.asarray(ks, dtype=float)
    errors = np.asarray(errors, dtype=float)
    mask = np.isfinite(errors) & (errors > floor)
    if int(mask.sum()) < min_points:
        raise ValueError(
            f"need at least {min_points} samples above the floor {floor:.3e}, "
            f"got {int(mask.sum())}"
        )
    kk = ks[mask]
    logs = np.log(errors[mask])
    slope, intercept = np.polyfit(kk, logs, 1)
    if slope >= 0.0:
        raise ValueError(f"error series never decays: fitted log-slope {slope:.3e} >= 0")
    pred = slope * kk + intercept
    ss_res = float(np.sum((logs - pred) ** 2))
    ss_tot = float(np.sum((logs - logs.mean()) ** 2))
    r_squared = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return ConvergenceDiagnostics(
        lambda_hat=float(np.exp(slope)),
        upsilon_hat=float(np.exp(intercept)),
        r_squared=r_squared,
        n_points=int(mask.sum()),
        slope=float(slope),
        intercept=float(intercept),
    )


def fit_geometric_rate(trace, u_bar, floor: float = FIT_FLOOR, min_points: int = 20) -> ConvergenceDiagnostics:
    """Fit max_i ||z_i(k) - u_bar|| ~ upsilon * lambda**k on a recorded trace."""
    u_bar = np.atleast_1d(np.asarray(u_bar, dtype=float))
    ks = []
    errs = []
    for snap in trace.snapshots:
        dev = np.linalg.norm(snap.z - u_bar[None, :], axis=1)
        ks.append(snap.k)
        errs.append(float(np.max(dev)))
    return fit_log_linear(np.array(ks), np.array(errs), floor=floor, min_points=min_points)


def theorem4_band(u_bar, mu: float):
    """Limit band for the consensus value under bounded noise:
    ((u_bar - mu) / (1 + mu), (u_bar + mu) / (1 - mu)), per component."""
    if mu < 0.0:
        raise ValueError(f"mu must be >= 0, got {mu}")
    if mu >= 1.0:
        raise ValueError(f"mu must be < 1 (the upper denominator flips sign), got {mu}")
    u_bar = np.asarray(u_bar, dtype=float)
    lower = (u_bar - mu) / (1.0 + mu)
    upper = (u_bar + mu) / (1.0 - mu)
    if u_bar.ndim == 0:
        return float(lower), float(upper)
    return lower, upper


def theorem3_bound(c1: float, c: float, lam: float, theta: ThetaSchedule, k: int) -> float:
    """Finite-time envelope c1 * (lam**k + sum_{s<k} theta(s) lam**(k-s-1)
    + theta(k)/c), evaluated by direct summation.  c1, c and lam are fitted
    constants, not derived ones."""
    if not (0.0 < lam < 1.0):
        raise ValueError(f"lam must lie in (0, 1), got {lam}")
    if c <= 0.0 or c1 <= 0.0:
        raise ValueError("c and c1 must be positive")
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    if k == 0:
        conv = 0.0
    else:
        s = np.arange(k)
        conv = float(np.sum(theta(s) * lam ** (k - s - 1.0)))
    return c1 * (lam**k + conv + theta(k) / c)


def compact_recursion_states(
    inst: ProblemInstance,
    noise_model: NoiseModel,
    rounds: int,
    beta: BetaSchedule | None = None,
    theta: ThetaSchedule | None = None,
    algorithm: str = "nrps",
):
    """Stacked matrix recursion, the oracle for the per-agent protocol.

    nrps:     x(k+1) = M(k) x(k) + theta(k) x(0) + beta(k) eta_x(k)
    pushsum:  x(k+1) = P x(k) + eta_x(k)

    Noise is replayed from the model's counter-based streams.  Returns the
    lists of x(k) (n, p) and y(k) (n,) for k = 0..rounds.
    """
    if algorithm not in ("pushsum", "nrps"):
        raise ValueError(f"unknown algorithm {algorithm!r}")
    if algorithm == "nrps" and (beta is None or theta is None):
        raise ValueError("the noise-resilient recursion needs beta and theta")
    n, p = inst.n, inst.p
    sampler = RoundSampler(noise_model, inst.net, p)
    x = inst.u.astype(float).copy()
    y = np.ones(n)
    xs, ys = [x.copy()], [y.copy()]
    pmat = inst.weights.matrix
    for k in range(rounds):
        eta_x, eta_y = sampler(k).aggregate(n)
        if algorithm == "pushsum":
            x = pmat @ x + eta_x
            y = pmat @ y + eta_y
        else:
            bk = beta(k)
            tk = theta(k)
            m = mixing_matrix(inst.weights, bk)
            x = m @ x + tk * inst.u + bk * eta_x
            y = m @ y + tk * np.ones(n) + bk * eta_y
        xs.append(x.copy())
        ys.append(y.copy())
    return xs, ys


def closed_form_state(
    inst: ProblemInstance,
    noise_model: NoiseModel,
    beta: BetaSchedule,
    theta: ThetaSchedule,
    k: int,
):
    """Closed-form expansion of the noise-resilient recursion at round k+1:

        x(k+1) = W(0,k) x(0) + sum_s theta(s) W(s+1,k) x(0)
                 + sum_s beta(s) W(s+1,k) eta_x(s)

    (same shape for y with y(0) = 1), assembled from suffix products and
    the replayed noise stream; independent of the forward recursion.
    """
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    n, p = inst.n, inst.p
    sampler = RoundSampler(noise_model, inst.net, p)
    # suffix[s] = W(s, k) built downward from the empty product
    suffix = [np.eye(n)]
    for s in range(k, -1, -1):
        suffix.append(suffix[-1] @ mixing_matrix(inst.weights, beta(s)))
    suffix.reverse()  # suffix[s] = W(s, k) for s = 0..k+1
    x0 = inst.u.astype(float)
    y0 = np.ones(n)
    x = suffix[0] @ x0
    y = suffix[0] @ y0
    for s in range(k + 1):
        eta_x, eta_y = sampler(s).aggregate(n)
        ts = theta(s)
        bs = beta(s)
        x = x + ts * (suffix[s + 1] @ x0) + bs * (suffix[s + 1] @ eta_x)
        y = y + ts * (suffix[s + 1] @ y0) + bs * (suffix[s + 1] @ eta_y)
    return x, y


def row_sum_lower_bound(beta: BetaSchedule, l: int, k: int) -> float:
    """(1 - max beta)**(k - l + 1), the proven floor for every row sum of
    W(l, k)."""
    w_o = 1.0 - beta.max_value()
    return w_o ** (k - l + 1)


def structural_report(
    weights: WeightMatrix,
    beta: BetaSchedule,
    windows: list[tuple[int, int]],
    contraction_ks: list[int] | None = None,
) -> dict:
    """JSON-ready diagnostics: column sums and cSIA for selected product
    windows, the row-sum floor margin, and the contraction sequence."""
    out: dict = {"windows": [], "contraction": []}
    for l, k in windows:
        w = product_matrix(weights, beta, l, k)
        report = check_csia(w)
        out["windows"].append(
            {
                "l": l,
                "k": k,
                "max_colsum_error": report.max_colsum_error,
                "column_stochastic": report.column_stochastic,
                "irreducible": report.irreducible,
                "aperiodic": report.aperiodic,
                "min_row_sum": float(w.sum(axis=1).min()),
                "row_sum_floor": row_sum_lower_bound(beta, l, k),
            }
        )
    if contraction_ks:
        w = np.eye(weights.n)
        ks = sorted(contraction_ks)
        r = 0
        for k in ks:
            while r <= k:
                w = mixing_matrix(weights, beta(r)) @ w
                r += 1
            out["contraction"].append({"k": k, "value": contraction(w)})
    return out
