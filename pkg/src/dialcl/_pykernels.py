"""NumPy implementation of the pooling kernels (fallback for ``_ckernels``)."""
import numpy as np


def pool_forward(E, P, ids, lengths, mask=None):
    """Mean over valid positions of ``tanh(mask * (E[id_t] + P[t]))``.

    Returns ``(pooled, act)`` with ``act`` the per-position tanh outputs,
    zero beyond each sequence's length.
    """
    L = ids.shape[1]
    x = E[ids] + P[None, :L]
    if mask is not None:
        x *= mask
    act = np.tanh(x)
    valid = np.arange(L)[None, :] < lengths[:, None]
    act *= valid[:, :, None]
    pooled = act.sum(axis=1) / lengths[:, None]
    return pooled, act


def pool_backward(g_pooled, ids, lengths, mask, act, gE, gP):
    """Accumulate embedding and positional gradients into ``gE``, ``gP`` in place."""
    B, L = ids.shape
    gx = (g_pooled / lengths[:, None])[:, None, :] * (1.0 - act * act)
    if mask is not None:
        gx *= mask
    valid = np.arange(L)[None, :] < lengths[:, None]
    rows, cols = np.nonzero(valid)
    g = gx[rows, cols]
    np.add.at(gE, ids[rows, cols], g)
    np.add.at(gP, cols, g)
