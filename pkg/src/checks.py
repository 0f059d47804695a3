"""
Verification suites run by ``python -m src check``.

Each suite compares the unrolled networks against an independent reference (enumeration,
finite differences or an algebraic identity) and returns a ``CheckResult``. The gradient
suites accept a perturbation that is added to every analytic gradient entry; a non-zero
perturbation is the negative control that must make them fail.
"""
from typing import Callable, Dict, Iterable, List, Optional

import numpy as np
import structlog
from pydantic import BaseModel
from scipy.special import logsumexp

from .inference.binary_qtnn import (
    dbm_backward,
    dbm_forward,
    rbm_backward,
    rbm_forward,
)
from .inference.gaussian_qtnn import grbm_backward, grbm_forward
from .inference.grid_mrf import gmrf_backward, gmrf_forward, valid_masks
from .inference.numerics import tau_for_temperature, transfer_grads_t, transfer_t
from .models.params import DbmParams, GmrfParams, GradientBundle, GrbmParams, ParamSet, RbmParams
from .models.training import GrbmConfig
from .oracle.enumeration import exact_conditional_marginals, grid_pgm, rbm_pgm
from .oracle.finite_diff import RELATIVE_FLOOR, finite_diff_grad, max_relative_error
from .training.query_loss import masked_ce_binary, nce

logger = structlog.get_logger()

SCOPES = ("kernels", "rbm", "dbm", "grbm", "gmrf")

GRADIENT_TOLERANCE = 1e-4
TREE_TOLERANCE = 1e-6
REDUCTION_TOLERANCE = 1e-15


class CheckResult(BaseModel):
    scope: str
    suite: str
    passed: bool
    metric: float
    threshold: float
    cases: int = 1
    detail: str = ""


def _result(scope: str, suite: str, metric: float, threshold: float, cases: int = 1, detail: str = "") -> CheckResult:
    passed = bool(np.isfinite(metric) and metric <= threshold)
    return CheckResult(scope=scope, suite=suite, passed=passed, metric=float(metric),
                       threshold=threshold, cases=cases, detail=detail)


def _random_mask(rng: np.random.Generator, B: int, V: int) -> np.ndarray:
    """Bernoulli(0.5) masks with at least one target per row."""
    q = (rng.random((B, V)) < 0.5).astype(np.float64)
    q[np.arange(B), rng.integers(0, V, size=B)] = 0.0
    return q


def _gradient_check(
    scope: str,
    params: ParamSet,
    loss_and_grads: Callable[[ParamSet], tuple],
    perturb: float,
) -> CheckResult:
    _, analytic = loss_and_grads(params)
    if perturb:
        analytic = GradientBundle(analytic.kind, {k: v + perturb for k, v in analytic.tensors.items()})
    numeric = finite_diff_grad(lambda p: loss_and_grads(p)[0], params)
    n_entries = sum(int(np.size(v)) for v in numeric.tensors.values())
    return _result(scope, "gradient", max_relative_error(analytic, numeric), GRADIENT_TOLERANCE,
                   cases=n_entries, detail="max relative error vs central differences")


# kernels

def check_kernels(rng: np.random.Generator, n_cases: int, perturb: float = 0.0, n_temperatures: int = 10) -> List[CheckResult]:
    """Transfer-function properties over random (w, x) at a handful of temperatures."""
    temperatures = rng.uniform(0.1, 3.0, n_temperatures)
    per_t = max(1, n_cases // n_temperatures)
    odd = sat = drop = cold_gap = grad_err = 0.0
    cold = 1e-4
    h = 1e-6
    for T in temperatures:
        T = float(T)
        w = rng.uniform(-10.0, 10.0, per_t)
        x = rng.uniform(-50.0, 50.0, per_t)
        f = transfer_t(w, x, T)
        odd = max(odd, float(np.max(np.abs(transfer_t(w, -x, T) + f))))
        sat = max(sat, float(np.max(np.abs(f) - np.abs(w))))
        step = rng.uniform(0.0, 2.0, per_t)
        drop = max(drop, float(np.max(-np.sign(w) * (transfer_t(w, x + step, T) - f))))
        cold_gap = max(cold_gap, float(np.max(np.abs(transfer_t(w, x, cold) - transfer_t(w, x, 0.0)))))

        analytic = transfer_grads_t(w, x, T)
        numeric = (
            (transfer_t(w + h, x, T) - transfer_t(w - h, x, T)) / (2.0 * h),
            (transfer_t(w, x + h, T) - transfer_t(w, x - h, T)) / (2.0 * h),
            (transfer_t(w, x, T + h) - transfer_t(w, x, T - h)) / (2.0 * h),
        )
        for a, n in zip(analytic, numeric):
            a = a + perturb
            scale = np.maximum(np.maximum(np.abs(a), np.abs(n)), RELATIVE_FLOOR)
            grad_err = max(grad_err, float(np.max(np.abs(a - n) / scale)))

    n = per_t * n_temperatures
    return [
        _result("kernels", "odd_symmetry", odd, 1e-12, n),
        _result("kernels", "saturation", sat, 1e-12, n, detail="max(|f_w(x)| - |w|)"),
        _result("kernels", "monotonicity", drop, 1e-12, n, detail="largest move against the sign of w"),
        _result("kernels", "zero_temperature_limit", cold_gap, 2.0 * np.log(2.0) * cold, n),
        _result("kernels", "transfer_gradient", grad_err, GRADIENT_TOLERANCE, n),
    ]



# binary models

def _random_rbm(rng: np.random.Generator, V: int, H: int, T: float = 1.0) -> RbmParams:
    return RbmParams(
        W=rng.uniform(-1.0, 1.0, (H, V)),
        c_V=rng.uniform(-1.0, 1.0, V),
        c_H=rng.uniform(-1.0, 1.0, H),
        tau=np.asarray(tau_for_temperature(T)),
    )


def check_rbm(rng: np.random.Generator, n_cases: int, perturb: float = 0.0, n_tree: int = 100) -> List[CheckResult]:
    V, H, N = 8, 1, 10
    worst = 0.0
    for _ in range(n_tree):
        params = _random_rbm(rng, V, H)
        x = np.where(rng.random(V) < 0.5, 1.0, -1.0)
        q = (rng.random(V) < 0.5).astype(np.float64)
        v_hat, h_hat, _ = rbm_forward(params, x, q, N, temperature=1.0)
        evidence = {j: int(x[j] > 0) for j in range(V) if q[j] == 1.0}
        exact = exact_conditional_marginals(rbm_pgm(params), evidence, range(V + H))
        approx = np.concatenate([v_hat, h_hat])
        worst = max(worst, max(abs(approx[t] - exact[t][1]) for t in range(V + H)))
    results = [_result("rbm", "tree_exactness", worst, TREE_TOLERANCE, n_tree,
                       detail="single hidden unit, exact enumeration")]

    B, V, H, N = 3, 6, 4, 5
    params = _random_rbm(rng, V, H, T=rng.uniform(0.5, 1.5))
    x = np.where(rng.random((B, V)) < 0.5, 1.0, -1.0)
    q = _random_mask(rng, B, V)

    def rbm_loss(p: RbmParams):
        return rbm_backward(p, x, q, rbm_forward(p, x, q, N)[2])

    results.append(_gradient_check("rbm", params, rbm_loss, perturb))

    zero = RbmParams(W=np.zeros((H, V)), c_V=np.zeros(V), c_H=np.zeros(H), tau=np.asarray(tau_for_temperature(1.0)))
    data = (rng.random((50, V)) < 0.5).astype(np.float64)
    masks = _random_mask(rng, 50, V)
    v_hat = rbm_forward(zero, 2.0 * data - 1.0, masks, N)[0]
    uniform = nce(*masked_ce_binary(data, v_hat, masks))
    results.append(_result("rbm", "uniform_model_nce", abs(uniform - 1.0), 1e-12, 50,
                           detail=f"all-zero model NCE {uniform:.6f} bits"))
    return results


def _random_dbm(rng: np.random.Generator, V: int, H1: int, H2: int, zero_top: bool = False) -> DbmParams:
    return DbmParams(
        W_H1V=rng.uniform(-1.0, 1.0, (H1, V)),
        W_H2H1=np.zeros((H2, H1)) if zero_top else rng.uniform(-1.0, 1.0, (H2, H1)),
        c_V=rng.uniform(-1.0, 1.0, V),
        c_H1=rng.uniform(-1.0, 1.0, H1),
        c_H2=rng.uniform(-1.0, 1.0, H2),
        tau=np.asarray(tau_for_temperature(rng.uniform(0.5, 1.5))),
    )


def check_dbm(rng: np.random.Generator, n_cases: int, perturb: float = 0.0, n_reduction: int = 50) -> List[CheckResult]:
    V, H1, H2, N = 5, 3, 2, 5
    worst = 0.0
    for _ in range(n_reduction):
        params = _random_dbm(rng, V, H1, H2, zero_top=True)
        rbm = RbmParams(W=params.W_H1V, c_V=params.c_V, c_H=params.c_H1, tau=params.tau)
        x = np.where(rng.random(V) < 0.5, 1.0, -1.0)
        q = (rng.random(V) < 0.5).astype(np.float64)
        v_dbm = dbm_forward(params, x, q, N)[0]
        v_rbm = rbm_forward(rbm, x, q, N)[0]
        worst = max(worst, float(np.max(np.abs(v_dbm - v_rbm))))
    results = [_result("dbm", "rbm_reduction", worst, REDUCTION_TOLERANCE, n_reduction,
                       detail="top weights zero")]

    B = 3
    params = _random_dbm(rng, V, H1, H2)
    x = np.where(rng.random((B, V)) < 0.5, 1.0, -1.0)
    q = _random_mask(rng, B, V)

    def dbm_loss(p: DbmParams):
        return dbm_backward(p, x, q, dbm_forward(p, x, q, N)[-1])

    results.append(_gradient_check("dbm", params, dbm_loss, perturb))
    return results


# Gaussian model

def check_grbm(rng: np.random.Generator, n_cases: int, perturb: float = 0.0) -> List[CheckResult]:
    B, V, H = 3, 4, 2
    cfg = GrbmConfig(N=5, epsilon=1e-4)
    params = GrbmParams(W=rng.normal(0.0, 0.3, (H, V)), b=rng.normal(0.0, 0.5, V), c=rng.normal(0.0, 0.5, H))
    v = rng.normal(0.0, 1.0, (B, V))
    q = _random_mask(rng, B, V)

    def grbm_loss(p: GrbmParams):
        return grbm_backward(p, v, q, grbm_forward(p, v, q, cfg)[-1])

    results = [_gradient_check("grbm", params, grbm_loss, perturb)]

    flat = GrbmParams(W=np.zeros((H, V)), b=rng.normal(0.0, 1.0, V), c=rng.normal(0.0, 1.0, H))
    mean, var, _, _ = grbm_forward(flat, v, np.ones_like(v), cfg)
    gap = max(float(np.max(np.abs(mean - v))), float(np.max(np.abs(var - cfg.epsilon))))
    results.append(_result("grbm", "clamped_identity", gap, 1e-9, B,
                           detail="zero weights, everything observed"))
    return results


# grid model

def _random_gmrf(rng: np.random.Generator, K: int, scale: float = 0.5) -> GmrfParams:
    tables = {name: rng.normal(0.0, scale, (K, K)) for name in GmrfParams.TRAINABLE}
    return GmrfParams(noise=np.array([0.8, 0.05, 0.05]), **tables)


def check_gmrf(rng: np.random.Generator, n_cases: int, perturb: float = 0.0) -> List[CheckResult]:
    K = 3
    params = _random_gmrf(rng, K)
    images = (rng.random((2, 6, 6)) < 0.4).astype(np.float64)
    labels = rng.integers(0, 3, size=(2, 6, 6))

    def gmrf_loss(p: GmrfParams):
        return gmrf_backward(p, labels, gmrf_forward(p, images, 4, 1.0)[1])

    results = [_gradient_check("gmrf", params, gmrf_loss, perturb)]

    small = (rng.random((n_cases, 3, 3)) < 0.4).astype(np.float64)
    base, trace = gmrf_forward(params, small, 3)
    shifted = params.with_tensors(**{name: getattr(params, name) + rng.normal() for name in GmrfParams.TRAINABLE})
    moved, _ = gmrf_forward(shifted, small, 3)
    results.append(_result("gmrf", "additive_constant", float(np.max(np.abs(base - moved))), 1e-10, n_cases))

    valid = valid_masks(3, 3)[:, None, :, :].astype(bool)
    norm = logsumexp(trace.layers[-1], axis=-1)
    results.append(_result("gmrf", "message_normalisation", float(np.max(np.abs(norm[np.broadcast_to(valid, norm.shape)]))),
                           1e-10, n_cases))

    chain = (rng.random((1, 4)) < 0.5).astype(np.float64)
    beliefs, _ = gmrf_forward(params, chain, 4)
    exact = exact_conditional_marginals(grid_pgm(params, chain), {}, range(4))
    gap = max(float(np.max(np.abs(beliefs[0, c] - exact[c]))) for c in range(4))
    results.append(_result("gmrf", "chain_exactness", gap, TREE_TOLERANCE, 1, detail="1x4 grid is a tree"))
    return results


SUITES: Dict[str, Callable[..., List[CheckResult]]] = {
    "kernels": check_kernels,
    "rbm": check_rbm,
    "dbm": check_dbm,
    "grbm": check_grbm,
    "gmrf": check_gmrf,
}


def run_checks(
    scopes: Optional[Iterable[str]] = None,
    seed: int = 0,
    n_cases: int = 10_000,
    perturb: float = 0.0,
) -> List[CheckResult]:
    """Run the suites of every requested scope (all by default) in a fixed order."""
    results: List[CheckResult] = []
    selected = set(scopes or SCOPES)
    for i, scope in enumerate(SCOPES):
        if scope not in selected:
            continue
        rng = np.random.default_rng([seed, i])
        scope_results = SUITES[scope](rng, n_cases, perturb)
        for r in scope_results:
            logger.info("Check finished", scope=r.scope, suite=r.suite, passed=r.passed, metric=r.metric)
        results.extend(scope_results)
    return results
