"""Pure numpy training kernels.

This is the reference implementation of the hot loop and the fallback used
when the compiled ``_kernels`` extension is unavailable. Both modules expose
the same two functions with identical semantics:

``batch_grads``
    loss and parameter gradients for one minibatch.
``train_epoch``
    one pass of Adam over a caller-supplied sample order, updating the
    parameter and moment arrays in place.

Activation codes: 0 = tanh, 1 = relu. ``teacher_logits=None`` means plain
cross-entropy (``mix`` must then be 0).
"""

import numpy as np

TANH = 0
RELU = 1


def _log_softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _forward(weights, biases, x, activation):
    acts = [x]
    a = x
    last = len(weights) - 1
    for i, (w, b) in enumerate(zip(weights, biases)):
        z = a @ w.T + b
        if i < last:
            a = np.tanh(z) if activation == TANH else np.maximum(z, 0.0)
            acts.append(a)
        else:
            a = z
    return a, acts


def _loss_and_dlogits(logits, y, teacher_logits, temperature, mix):
    n = logits.shape[0]
    logp = _log_softmax(logits)
    rows = np.arange(n)
    ce = -logp[rows, y].mean()
    dz = np.exp(logp)
    dz[rows, y] -= 1.0
    dz *= (1.0 - mix) / n
    loss = (1.0 - mix) * ce
    if mix > 0.0:
        t = temperature
        logq_s = _log_softmax(logits / t)
        logq_t = _log_softmax(teacher_logits / t)
        q_t = np.exp(logq_t)
        kl = np.sum(q_t * (logq_t - logq_s)) / n
        loss += mix * t * t * kl
        dz += (mix * t / n) * (np.exp(logq_s) - q_t)
    return loss, dz


def _backward(weights, acts, dz, activation):
    gw = [None] * len(weights)
    gb = [None] * len(weights)
    delta = dz
    for i in range(len(weights) - 1, -1, -1):
        a_in = acts[i]
        gw[i] = delta.T @ a_in
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = delta @ weights[i]
            if activation == TANH:
                delta = delta * (1.0 - a_in * a_in)
            else:
                delta = delta * (a_in > 0.0)
    return gw, gb


def batch_grads(weights, biases, x, y, teacher_logits, activation, temperature, mix):
    logits, acts = _forward(weights, biases, x, activation)
    loss, dz = _loss_and_dlogits(logits, y, teacher_logits, temperature, mix)
    gw, gb = _backward(weights, acts, dz, activation)
    return loss, gw, gb


def train_epoch(weights, biases, m_w, v_w, m_b, v_b, x, y, teacher_logits, order,
                batch_size, activation, temperature, mix, lr, beta1, beta2, eps, step):
    total = 0.0
    n = len(order)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        tl = None if teacher_logits is None else teacher_logits[idx]
        loss, gw, gb = batch_grads(weights, biases, x[idx], y[idx], tl, activation, temperature, mix)
        total += loss * len(idx)
        step += 1
        c1 = 1.0 - beta1 ** step
        c2 = 1.0 - beta2 ** step
        for params, grads, m, v in ((weights, gw, m_w, v_w), (biases, gb, m_b, v_b)):
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= beta1
                mi += (1.0 - beta1) * g
                vi *= beta2
                vi += (1.0 - beta2) * (g * g)
                p -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)
    return total, step
