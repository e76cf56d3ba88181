"""Independent brute-force references for the test suite.

Everything here is deliberately naive (scalar loops, literal formulas) and
shares no code with the package implementations it checks.
"""

import numpy as np


def conv2d_scalar(x, w, stride=1, pad=0):
    """Cross-correlation with explicit loops."""
    c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    xp = np.zeros((c_in, h + 2 * pad, wd + 2 * pad))
    xp[:, pad : pad + h, pad : pad + wd] = x
    h_out = (h + 2 * pad - k) // stride + 1
    w_out = (wd + 2 * pad - k) // stride + 1
    y = np.zeros((c_out, h_out, w_out))
    for o in range(c_out):
        for i in range(h_out):
            for j in range(w_out):
                acc = 0.0
                for c in range(c_in):
                    for a in range(k):
                        for b in range(k):
                            acc += w[o, c, a, b] * xp[c, i * stride + a, j * stride + b]
                y[o, i, j] = acc
    return y


def conv1x1_scalar(x, w):
    """1x1 convolution: per-pixel matrix multiply, scalar loops."""
    c_in, h, wd = x.shape
    c_out = w.shape[0]
    y = np.zeros((c_out, h, wd))
    for o in range(c_out):
        for i in range(h):
            for j in range(wd):
                acc = 0.0
                for c in range(c_in):
                    acc += w[o, c, 0, 0] * x[c, i, j]
                y[o, i, j] = acc
    return y


def softmax_rows_scalar(m):
    out = np.zeros_like(m)
    for j in range(m.shape[0]):
        row = m[j] - m[j].max()
        e = np.exp(row)
        out[j] = e / e.sum()
    return out


def position_attention_scalar(p, k1, k2, k3, alpha):
    """Step-by-step evaluation: project, flatten, pairwise dots, softmax
    over positions, alpha-gated value mix plus residual."""
    c, h, w = p.shape
    n = h * w
    p1 = conv1x1_scalar(p, k1).reshape(k1.shape[0], n)
    p2 = conv1x1_scalar(p, k2).reshape(k2.shape[0], n)
    p3 = conv1x1_scalar(p, k3).reshape(c, n)
    logits = np.zeros((n, n))
    for j in range(n):
        for i in range(n):
            logits[j, i] = float(np.dot(p1[:, i], p2[:, j]))
    s = softmax_rows_scalar(logits)
    pf = p.reshape(c, n)
    f1 = np.zeros((c, n))
    for j in range(n):
        acc = np.zeros(c)
        for i in range(n):
            acc += s[j, i] * p3[:, i]
        f1[:, j] = alpha * acc + pf[:, j]
    return f1.reshape(c, h, w), s


def channel_attention_scalar(p, beta):
    """Gram matrix of the flattened input, softmax over channels, beta-gated
    mix plus residual."""
    c, h, w = p.shape
    n = h * w
    p4 = p.reshape(c, n)
    logits = np.zeros((c, c))
    for j in range(c):
        for i in range(c):
            logits[j, i] = float(np.dot(p4[i], p4[j]))
    cmap = softmax_rows_scalar(logits)
    f2 = np.zeros((c, n))
    for j in range(c):
        acc = np.zeros(n)
        for i in range(c):
            acc += cmap[j, i] * p4[i]
        f2[j] = beta * acc + p4[j]
    return f2.reshape(c, h, w), cmap


def cosine_scalar(u, v, eps=1e-12):
    nu = max(float(np.sqrt(np.dot(u, u))), eps)
    nv = max(float(np.sqrt(np.dot(v, v))), eps)
    return float(np.dot(u, v)) / (nu * nv)


def spatial_contrast_scalar(values, eps=1e-12, include_diagonal=True):
    """Literal chain: flatten each channel, pairwise cosines, mean."""
    n = values.shape[0]
    vecs = [values[i].reshape(-1) for i in range(n)]
    m = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            m[i, j] = cosine_scalar(vecs[i], vecs[j], eps)
    if include_diagonal:
        return float(m.mean())
    return float((m.sum() - np.trace(m)) / (n * n - n))


def counting_loss_scalar(pred, gt, mask):
    total = 0.0
    count = 0
    for c in range(pred.shape[0]):
        for i in range(pred.shape[1]):
            for j in range(pred.shape[2]):
                if mask[c, i, j]:
                    total += (pred[c, i, j] - gt[c, i, j]) ** 2
                    count += 1
    return total / count if count else 0.0


def mae_scalar(gts, preds):
    return sum(abs(p - g) for g, p in zip(gts, preds)) / len(gts)


def mse_scalar(gts, preds):
    return sum((p - g) ** 2 for g, p in zip(gts, preds)) / len(gts)


def rmse_scalar(gts, preds):
    return mse_scalar(gts, preds) ** 0.5


def weights_scalar(counts, eps=1e-6):
    """Guarded reciprocal-log-ratio softmax weights, elementwise."""
    names = list(counts.keys())
    c = [float(counts[k]) for k in names]
    med = float(np.median(c))
    fr = []
    for ci in c:
        d = np.log((ci + 1.0) / (med + 1.0))
        s = 1.0 if d >= 0 else -1.0
        fr.append(1.0 / (s * max(abs(d), eps)))
    mx = max(fr)
    e = [np.exp(f - mx) for f in fr]
    z = sum(e)
    return {k: v / z for k, v in zip(names, e)}
