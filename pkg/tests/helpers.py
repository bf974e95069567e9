"""Shared test oracles: finite differences, naive spline evaluation, and a
brute-force pairwise AUC. These stay independent of the library paths they
check."""

import numpy as np

from kandiag import autograd as ag
from kandiag.kan import KanLayer, SplineGrid
from kandiag.models import build_model
from kandiag.training import PRED_CLAMP, bce_loss


def finite_diff(loss_fn, params, step=1e-6):
    """Central-difference gradient of loss_fn() for every entry of params.

    loss_fn re-runs the full forward pass and returns a float; it must be a
    deterministic function of the parameter values.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p.values)
        flat = p.values.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = loss_fn()
            flat[i] = orig - step
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * step)
        grads.append(g)
    return grads


def max_rel_error(analytic, numeric, floor=1e-5):
    """Worst relative disagreement, with the denominator floored.

    Central differences at step 1e-6 on an O(1) loss carry ~1e-10 of
    roundoff noise, so gradients below the floor cannot be measured to a
    relative tolerance; they are compared against the floor instead.
    """
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = np.zeros_like(n) if a is None else a
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def naive_bspline_basis(x: float, grid: SplineGrid) -> np.ndarray:
    """Textbook recursive Cox-de Boor over the extended knot vector."""
    t = grid.knots
    x = min(max(x, grid.lo), grid.hi)

    def basis(i, p):
        if p == 0:
            return 1.0 if t[i] <= x < t[i + 1] else 0.0
        left = 0.0
        if t[i + p] != t[i]:
            left = (x - t[i]) / (t[i + p] - t[i]) * basis(i, p - 1)
        right = 0.0
        if t[i + p + 1] != t[i + 1]:
            right = (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * basis(i + 1, p - 1)
        return left + right

    values = np.array([basis(i, grid.degree) for i in range(grid.n_bases)])
    if grid.degree == 0 and x == grid.hi:
        values[-1] = 1.0  # the degree-0 grid closes its last interval
    return values


def naive_layer_forward(layer: KanLayer, x: np.ndarray) -> np.ndarray:
    """Per-edge evaluation of a layer: loops every (sample, out, in) edge.

    Only the basis term clamps out-of-range inputs; the residual base
    activation acts on the raw value, matching the edge-function definition.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros((x.shape[0], layer.n_out))
    for b in range(x.shape[0]):
        for q in range(layer.n_out):
            total = 0.0
            for p in range(layer.n_in):
                v = x[b, p]
                bases = naive_bspline_basis(v, layer.grid)
                spline = float(bases @ layer.spline_coeffs.values[q, p])
                silu = v / (1.0 + np.exp(-v))
                total += layer.base_weight.values[q, p] * silu + spline
            out[b, q] = total
    return out


def pairwise_auc(scores, labels) -> float:
    """O(n^2) pair counting: wins plus half ties over pos x neg pairs."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = 0.0
    ties = 0.0
    for sp in pos:
        for sn in neg:
            if sp > sn:
                wins += 1.0
            elif sp == sn:
                ties += 1.0
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


def toy_q_matrix() -> np.ndarray:
    return np.array(
        [[1, 0, 1], [0, 1, 0], [1, 1, 0], [0, 0, 1]], dtype=np.float64
    )


def toy_batch():
    students = np.array([0, 1, 2, 3, 4, 0, 2, 4])
    exercises = np.array([0, 1, 2, 3, 0, 2, 3, 1])
    labels = np.array([1, 0, 1, 1, 0, 1, 0, 1], dtype=np.float64)
    return students, exercises, labels


def full_model_gradient_error(variant, seed=3, step=1e-6, hidden=(16, 8)):
    """Worst relative disagreement between the recorded gradients of the
    full loss and central finite differences, on the 5x4x3 toy instance.

    Returns (max relative error, parameter count).
    """
    model = build_model(variant, 5, toy_q_matrix(),
                        rng=np.random.default_rng(seed), hidden=hidden)
    students, exercises, labels = toy_batch()
    train_mode = variant == "DINA"  # soft sampling so gradients exist

    def forward_values():
        rng = np.random.default_rng(1234) if train_mode else None
        with ag.no_grad():
            out = model.forward(students, exercises, train_mode=train_mode, rng=rng)
        p = np.clip(out.values.ravel(), PRED_CLAMP, 1.0 - PRED_CLAMP)
        return float(-np.mean(labels * np.log(p) + (1 - labels) * np.log(1 - p)))

    rng = np.random.default_rng(1234) if train_mode else None
    out = model.forward(students, exercises, train_mode=train_mode, rng=rng)
    loss = bce_loss(out, labels)
    loss.backward()
    params = model.parameters()
    analytic = [p.grad for p in params]
    numeric = finite_diff(forward_values, params, step=step)
    n_params = sum(p.values.size for p in params)
    return max_rel_error(analytic, numeric), n_params
