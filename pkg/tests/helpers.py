"""Shared test oracles: central finite differences and brute-force AUC."""

import numpy as np

from mialab.model import forward, init_model

FD_STEP = 1e-5
FD_TOL = 1e-4


def numeric_grad(f, x, step=FD_STEP):
    """Central-difference gradient of scalar f with respect to array x.

    Perturbs x in place (restoring each entry), so f must re-read x on
    every call.
    """
    x = np.asarray(x)
    grad = np.zeros_like(x, dtype=np.float64)
    flat, gout = x.ravel(), grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f()
        flat[i] = orig - step
        lo = f()
        flat[i] = orig
        gout[i] = (hi - lo) / (2.0 * step)
    return grad


def max_rel_err(analytic, numeric):
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    scale = np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / scale))


def assert_grad_matches(analytic, f, x, step=FD_STEP, tol=FD_TOL):
    err = max_rel_err(analytic, numeric_grad(f, x, step))
    assert err < tol, f"analytic vs finite-difference gradient: rel err {err:.3e} >= {tol}"


def safe_net(layer_sizes, batch, seed, margin=1e-3, tries=100):
    """Random net + input whose ReLU pre-activations stay clear of the kink.

    Finite differences are only valid where the objective is differentiable;
    a pre-activation within the step size of zero would flip the ReLU slope
    between the two evaluation points. Redraw until every pre-activation has
    a safe margin.
    """
    for k in range(tries):
        s = seed + 7919 * k
        params = init_model(layer_sizes, s)
        x = np.random.default_rng(s).standard_normal((batch, layer_sizes[0]))
        trace = forward(params, x)
        if all(np.abs(z).min() > margin for z in trace.pre_activations):
            return params, x
    raise AssertionError("no kink-safe configuration found")


def auc_bruteforce(member_scores, nonmember_scores):
    """O(n*m) pairwise counting with ties worth 1/2."""
    wins = 0.0
    for a in member_scores:
        for b in nonmember_scores:
            if a > b:
                wins += 1.0
            elif a == b:
                wins += 0.5
    return wins / (len(member_scores) * len(nonmember_scores))


def frozen_target_loss(logits, targets, tau):
    """Independent oracle: CE of norm-capped softmax against FIXED targets.

    The soft-target losses stop gradients through the targets, so their FD
    oracle must hold the targets at the unperturbed value instead of
    rebuilding them from the perturbed logits.
    """
    h = logits / (1.0 + tau * np.linalg.norm(logits, axis=1, keepdims=True))
    m = h.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(h - m).sum(axis=1, keepdims=True))).ravel()
    return float(np.mean(lse - (targets * h).sum(axis=1)))


def frozen_soft_targets(logits, labels):
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    p = e / e.sum(axis=1, keepdims=True)
    batch, n_classes = p.shape
    p_y = p[np.arange(batch), labels]
    t = np.repeat(((1.0 - p_y) / (n_classes - 1))[:, None], n_classes, axis=1)
    t[np.arange(batch), labels] = p_y
    return t
