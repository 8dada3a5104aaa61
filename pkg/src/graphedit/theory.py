"""Numerical checks of the one-layer binary locality analysis.

Model: y_hat = sigmoid(Z theta) with Z = X (MLP) or Z = Ã X (GCN). An edit takes one
gradient step on the cross-entropy of node j toward the flipped label.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.optimize
from scipy.special import expit, log_expit

from .errors import DegenerateEditError, InvalidInputError, NumericError
from .graph import CsrGraph, SbmConfig, generate_sbm


def aggregate(variant: str, x: np.ndarray, a_hat=None) -> np.ndarray:
    if variant == "mlp":
        return np.asarray(x, dtype=np.float64)
    if variant == "gcn":
        if a_hat is None:
            raise InvalidInputError("gcn variant needs the normalized adjacency")
        return np.asarray(a_hat @ x, dtype=np.float64)
    raise InvalidInputError(f"unknown variant {variant!r}")


def edit_gradient(z: np.ndarray, theta: np.ndarray, j: int) -> np.ndarray:
    """Gradient of CE(flipped label, y_hat_j) w.r.t. theta: sign(y_hat_j - 0.5) max(y_hat_j, 1 - y_hat_j) Z_j."""
    yj = float(expit(z[j] @ theta))
    if yj == 0.5:
        raise DegenerateEditError(f"prediction at node {j} is exactly 0.5")
    return np.sign(yj - 0.5) * max(yj, 1.0 - yj) * z[j]


def binary_kl_from_logits(s_new: np.ndarray, s_old: np.ndarray) -> np.ndarray:
    """KL(Bern(sigmoid(s_new)) || Bern(sigmoid(s_old))), elementwise, from logits."""
    p = expit(s_new)
    kl = p * (log_expit(s_new) - log_expit(s_old)) + (1.0 - p) * (log_expit(-s_new) - log_expit(-s_old))
    return np.maximum(kl, 0.0)


@dataclass
class LocalityReport:
    variant: str
    node: int
    step: float
    exact: float
    taylor: float  # mean of 1/2 y(1-y) (Z_i dtheta)^2
    taylor_unhalved: float  # same quadratic form without the 1/2
    y_hat: np.ndarray = field(repr=False)
    y_hat_new: np.ndarray = field(repr=False)
    delta: np.ndarray = field(repr=False)

    @property
    def ratio(self) -> float:
        return self.exact / self.taylor if self.taylor > 0 else float("nan")


def taylor_locality(
    variant: str,
    x: np.ndarray,
    theta: np.ndarray,
    train_idx,
    j: int,
    step: float,
    a_hat=None,
    delta_norm: float | None = None,
) -> LocalityReport:
    """Exact mean binary KL over train nodes after one edit step, and its quadratic approximation.

    With ``delta_norm`` the parameter change keeps the gradient direction but is
    rescaled to that Euclidean norm (``step`` is then reported as the implied step).
    """
    z = aggregate(variant, x, a_hat)
    theta = np.asarray(theta, dtype=np.float64).ravel()
    train_idx = np.asarray(train_idx, dtype=np.int64)
    grad = edit_gradient(z, theta, j)
    delta = -step * grad
    if delta_norm is not None:
        gn = np.linalg.norm(grad)
        step = delta_norm / gn if gn > 0 else 0.0
        delta = -step * grad
    s_old = z[train_idx] @ theta
    s_new = z[train_idx] @ (theta + delta)
    y = expit(s_old)
    quad = y * (1.0 - y) * (z[train_idx] @ delta) ** 2
    exact = float(binary_kl_from_logits(s_new, s_old).mean())
    return LocalityReport(variant, int(j), float(step), exact, float(0.5 * quad.mean()), float(quad.mean()),
                          y, expit(s_new), delta)


@dataclass
class OversmoothCheck:
    lam: float
    components: int
    d_x: float
    d_ax: float

    @property
    def slack(self) -> float:
        return self.lam * self.d_x - self.d_ax


def oversmoothing_check(graph: CsrGraph, x: np.ndarray, tol: float = 1e-9) -> OversmoothCheck:
    """Distance of X and ÃX to the eigenvalue-1 eigenspace of Ã, and the contraction factor."""
    if graph.n > 2000:
        raise InvalidInputError("dense eigendecomposition limited to n <= 2000")
    a = graph.dense_a_hat()
    try:
        w, v = np.linalg.eigh(a)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"eigendecomposition failed: {exc}") from None
    top = np.abs(w - 1.0) < tol
    rest = np.abs(w[~top])
    lam = float(rest.max()) if rest.size else 0.0
    u = v[:, top]

    def dist(m: np.ndarray) -> float:
        return float(np.linalg.norm(m - u @ (u.T @ m)))

    return OversmoothCheck(lam, int(top.sum()), dist(x), dist(a @ x))


def fit_logistic(z: np.ndarray, y: np.ndarray, l2: float = 0.1) -> np.ndarray:
    """Bias-free L2-regularised logistic regression via L-BFGS."""
    n = z.shape[0]
    sign = 2.0 * y - 1.0

    def f(theta):
        s = z @ theta
        loss = -log_expit(sign * s).mean() + 0.5 * l2 * theta @ theta
        g = z.T @ (expit(s) - y) / n + l2 * theta
        return loss, g

    res = scipy.optimize.minimize(f, np.zeros(z.shape[1]), jac=True, method="L-BFGS-B",
                                  options={"maxiter": 1000, "gtol": 1e-10, "ftol": 1e-15})
    return res.x


@dataclass
class TrialRow:
    trial: int
    seed: int
    kl_gcn: float
    kl_mlp: float
    taylor_gcn: float
    taylor_mlp: float
    ip_sum_gcn: float
    ip_sum_mlp: float
    gcn_wins: bool


@dataclass
class LocalityComparison:
    rows: list[TrialRow]
    skipped: int
    config: dict

    @property
    def win_rate(self) -> float:
        return float(np.mean([r.gcn_wins for r in self.rows])) if self.rows else float("nan")

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["trial", "seed", "kl_gcn", "kl_mlp", "taylor_gcn", "taylor_mlp", "ip_sum_gcn", "ip_sum_mlp",
                        "gcn_wins"])
            for r in self.rows:
                w.writerow([r.trial, r.seed] + [f"{v:.17g}" for v in (r.kl_gcn, r.kl_mlp, r.taylor_gcn, r.taylor_mlp,
                                                                      r.ip_sum_gcn, r.ip_sum_mlp)] + [int(r.gcn_wins)])


def trial_seed(base: int, trial: int) -> int:
    return int(np.random.SeedSequence([base, trial]).generate_state(1)[0])


def locality_compare(
    sbm: SbmConfig,
    n_trials: int = 100,
    step: float = 1e-2,
    seed: int = 0,
    train_fraction: float = 0.6,
    match_scale: bool = True,
    l2: float = 0.1,
) -> LocalityComparison:
    """GCN vs MLP locality after one matched edit step, over independent SBM draws.

    ``match_scale`` rescales ÃX to the Frobenius norm of X so both variants see
    features of equal overall scale.
    """
    if sbm.blocks != 2:
        raise InvalidInputError("locality comparison is defined for binary (2-block) SBMs")
    rows: list[TrialRow] = []
    skipped = 0
    for t in range(n_trials):
        s = trial_seed(seed, t)
        graph, data = generate_sbm(replace(sbm, seed=s), fractions=(train_fraction, 0.0, 1.0 - train_fraction))
        x = data.x
        ax = graph.propagate(x)
        if match_scale:
            nx, nax = np.linalg.norm(x), np.linalg.norm(ax)
            if nax > 0:
                ax = ax * (nx / nax)
        train = np.flatnonzero(data.train_mask)
        rest = np.flatnonzero(~data.train_mask)
        y = data.y.astype(np.float64)
        th_m = fit_logistic(x[train], y[train], l2)
        th_g = fit_logistic(ax[train], y[train], l2)
        wrong_m = (x[rest] @ th_m > 0) != (y[rest] > 0.5)
        wrong_g = (ax[rest] @ th_g > 0) != (y[rest] > 0.5)
        both = rest[wrong_m & wrong_g]
        either = rest[wrong_m | wrong_g]
        pool = both if both.size else either
        if pool.size == 0:
            skipped += 1
            continue
        j = int(np.random.default_rng(s).choice(pool))
        try:
            rg = taylor_locality("mlp", ax, th_g, train, j, step)
            rm = taylor_locality("mlp", x, th_m, train, j, step)
        except DegenerateEditError:
            skipped += 1
            continue
        rows.append(TrialRow(t, s, rg.exact, rm.exact, rg.taylor, rm.taylor,
                             float((ax[train] @ ax[j]).sum()), float((x[train] @ x[j]).sum()),
                             rg.exact > rm.exact))
    cfg = {**sbm.__dict__, "n_trials": n_trials, "step": step, "seed": seed, "train_fraction": train_fraction,
           "match_scale": match_scale, "l2": l2}
    return LocalityComparison(rows, skipped, cfg)


def binomial_band(n: int, p: float = 0.5, level: float = 0.95) -> tuple[float, float]:
    """Central binomial interval for the success fraction."""
    from scipy.stats import binom

    lo, hi = binom.interval(level, n, p)
    return lo / n, hi / n


def taylor_convergence(
    sbm: SbmConfig,
    variant: str = "gcn",
    norms=(1e-2, 1e-3, 1e-4),
    train_fraction: float = 0.6,
    l2: float = 0.1,
) -> list[LocalityReport]:
    """Exact vs quadratic locality on one fitted binary instance at several edit sizes ``||dtheta||``.

    The edited node is a misclassified held-out node when one exists, else the
    held-out node with the smallest margin.
    """
    graph, data = generate_sbm(sbm, fractions=(train_fraction, 0.0, 1.0 - train_fraction))
    a_hat = graph.a_hat if variant == "gcn" else None
    z = aggregate(variant, data.x, a_hat)
    train = np.flatnonzero(data.train_mask)
    rest = np.flatnonzero(~data.train_mask)
    if rest.size == 0:
        raise InvalidInputError("need at least one held-out node")
    y = data.y.astype(np.float64)
    theta = fit_logistic(z[train], y[train], l2)
    s = z[rest] @ theta
    wrong = rest[(s > 0) != (y[rest] > 0.5)]
    j = int(wrong[0]) if wrong.size else int(rest[np.argmin(np.abs(s))])
    return [taylor_locality(variant, data.x, theta, train, j, 0.0, a_hat=a_hat, delta_norm=d) for d in norms]
