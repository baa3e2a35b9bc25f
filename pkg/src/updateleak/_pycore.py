"""Pure numpy training kernels.

Same contract as the compiled ``_core`` extension. Used when the extension is
not built, or when ``UPDATELEAK_PURE_PYTHON=1``.
"""
import numpy as np

NAME = "python"


def logistic_loss_grad(X, y, w, b, l2):
    """Mean logistic loss + 0.5*l2*|w|^2 and its gradient (intercept unpenalized)."""
    n = X.shape[0]
    z = X @ w + b
    loss = float(np.sum(np.logaddexp(0.0, z) - y * z)) / n + 0.5 * l2 * float(w @ w)
    r = (0.5 * (1.0 + np.tanh(0.5 * z)) - y) / n
    return loss, X.T @ r + l2 * w, float(r.sum())


def mlp_loss_grad(Ws, bs, X, y, l2):
    """Softmax cross-entropy of a ReLU MLP, averaged over rows, plus L2 on weights.

    Returns (loss, weight_grads, bias_grads).
    """
    m = X.shape[0]
    acts = [X]
    h = X
    last = len(Ws) - 1
    for i, (W, b) in enumerate(zip(Ws, bs)):
        z = h @ W + b
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    z = acts[-1]
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    s = e.sum(axis=1, keepdims=True)
    rows = np.arange(m)
    loss = float(np.sum(np.log(s[:, 0]) + zmax[:, 0] - z[rows, y])) / m
    loss += 0.5 * l2 * sum(float(np.sum(W * W)) for W in Ws)
    delta = e / s
    delta[rows, y] -= 1.0
    delta /= m
    gWs = [None] * len(Ws)
    gbs = [None] * len(Ws)
    for i in range(last, -1, -1):
        gWs[i] = acts[i].T @ delta + l2 * Ws[i]
        gbs[i] = delta.sum(axis=0)
        if i:
            delta = (delta @ Ws[i].T) * (acts[i] > 0)
    return loss, gWs, gbs


def mlp_epoch(Ws, bs, vWs, vbs, X, y, order, lr, momentum, l2, batch_size):
    """One pass of mini-batch SGD (heavy-ball momentum) in visiting ``order``.

    Parameters and velocities are updated in place. Returns the row-weighted
    mean of the mini-batch losses.
    """
    n = len(order)
    total = 0.0
    # a diverging run surfaces as a non-finite return value; the caller reports it
    with np.errstate(over="ignore", invalid="ignore"):
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            loss, gWs, gbs = mlp_loss_grad(Ws, bs, X[idx], y[idx], l2)
            total += loss * len(idx)
            for W, b, vW, vb, gW, gb in zip(Ws, bs, vWs, vbs, gWs, gbs):
                vW *= momentum
                vW += gW
                vb *= momentum
                vb += gb
                W -= lr * vW
                b -= lr * vb
    return total / n
