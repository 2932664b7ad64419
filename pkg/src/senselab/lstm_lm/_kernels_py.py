"""Pure NumPy LSTM recurrence. Reference path and fallback for the compiled kernels.

Shapes: ``X`` (T, B, p) inputs, ``mask`` (T, B) of 0/1, ``W_x`` (p, 4h),
``W_h`` (h, 4h), ``b`` (4h,). Gate blocks are ordered input, forget,
candidate, output. A masked step leaves that row's (h, c) untouched.
"""
import numpy as np

from ..numeric import sigmoid


def lstm_forward(X, mask, W_x, W_h, b):
    T, B, p = X.shape
    h = W_h.shape[0]
    XW = (X.reshape(T * B, p) @ W_x).reshape(T, B, 4 * h)
    H = np.zeros((T + 1, B, h))
    C = np.zeros((T + 1, B, h))
    A = np.zeros((T, B, 4 * h))
    TC = np.zeros((T, B, h))
    for t in range(T):
        pre = XW[t] + H[t] @ W_h + b
        i = sigmoid(pre[:, :h])
        f = sigmoid(pre[:, h:2 * h])
        g = np.tanh(pre[:, 2 * h:3 * h])
        o = sigmoid(pre[:, 3 * h:])
        c = f * C[t] + i * g
        tc = np.tanh(c)
        m = mask[t][:, None] != 0
        A[t] = np.where(m, np.concatenate([i, f, g, o], axis=1), 0.0)
        TC[t] = np.where(m, tc, 0.0)
        C[t + 1] = np.where(m, c, C[t])
        H[t + 1] = np.where(m, o * tc, H[t])
    return H, C, A, TC


def lstm_backward(X, mask, W_x, W_h, H, C, A, TC, dh_last):
    """Gradients of a loss that depends on the final hidden state only.

    Returns ``(dX, dW_x, dW_h, db)``.
    """
    T, B, p = X.shape
    h = W_h.shape[0]
    D = np.zeros((T, B, 4 * h))
    dh = np.array(dh_last, dtype=np.float64)
    dc = np.zeros((B, h))
    for t in range(T - 1, -1, -1):
        i, f, g, o = (A[t, :, k * h:(k + 1) * h] for k in range(4))
        tc = TC[t]
        m = mask[t][:, None] != 0
        dct = dc + dh * o * (1.0 - tc * tc)
        dpre = np.concatenate([
            dct * g * i * (1.0 - i),
            dct * C[t] * f * (1.0 - f),
            dct * i * (1.0 - g * g),
            dh * tc * o * (1.0 - o),
        ], axis=1)
        dpre = np.where(m, dpre, 0.0)
        D[t] = dpre
        dh = np.where(m, dpre @ W_h.T, dh)
        dc = np.where(m, dct * f, dc)
    D2 = D.reshape(T * B, 4 * h)
    dW_x = X.reshape(T * B, p).T @ D2
    dW_h = H[:-1].reshape(T * B, h).T @ D2
    db = D2.sum(axis=0)
    dX = (D2 @ W_x.T).reshape(T, B, p)
    return dX, dW_x, dW_h, db
