"""Hot numeric kernels.

The SGD inner loop dominates matrix-factorization training time, so it is
JIT-compiled with numba. Set RERANKEVAL_NO_NUMBA=1 to force the pure-Python
fallback (same update order, bit-identical results); benchmarks/bench_mf.py
compares the two.
"""

import os

import numpy as np

USE_NUMBA = os.environ.get("RERANKEVAL_NO_NUMBA", "") not in ("1", "true", "yes")


def _sgd_epoch_py(u_idx, i_idx, ratings, order, user_f, item_f,
                  user_b, item_b, global_mean, lr, reg):
    """One SGD pass over the given interaction order. Returns sum of squared
    pre-update residuals."""
    sse = 0.0
    k = user_f.shape[1]
    for t in range(order.shape[0]):
        n = order[t]
        u = u_idx[n]
        i = i_idx[n]
        pred = global_mean + user_b[u] + item_b[i]
        for f in range(k):
            pred += user_f[u, f] * item_f[i, f]
        err = ratings[n] - pred
        sse += err * err
        user_b[u] += lr * (err - reg * user_b[u])
        item_b[i] += lr * (err - reg * item_b[i])
        for f in range(k):
            puf = user_f[u, f]
            qif = item_f[i, f]
            user_f[u, f] += lr * (err * qif - reg * puf)
            item_f[i, f] += lr * (err * puf - reg * qif)
    return sse


if USE_NUMBA:
    try:
        from numba import njit
        sgd_epoch = njit(cache=True)(_sgd_epoch_py)
    except ImportError:
        USE_NUMBA = False
        sgd_epoch = _sgd_epoch_py
else:
    sgd_epoch = _sgd_epoch_py


def predict_batch(u_indices, i_indices, user_f, item_f, user_b, item_b, global_mean):
    """Vectorized predictions for aligned index arrays; -1 marks unknown ids."""
    u = np.asarray(u_indices)
    i = np.asarray(i_indices)
    pred = np.full(u.shape, global_mean, dtype=np.float64)
    ku = u >= 0
    ki = i >= 0
    pred[ku] += user_b[u[ku]]
    pred[ki] += item_b[i[ki]]
    both = ku & ki
    if both.any():
        pred[both] += np.einsum("nf,nf->n", user_f[u[both]], item_f[i[both]])
    return pred
