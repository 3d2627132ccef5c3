"""Scalar-loop NumPy references, independent of torch's kernels."""

import math

import numpy as np


def reflect_index(i, n):
    if n == 1:
        return 0
    period = 2 * (n - 1)
    i = i % period
    return i if i < n else period - i


def replicate_index(i, n):
    return min(max(i, 0), n - 1)


def pad(x, p, mode="reflect"):
    """Pad the last two axes of a (C, H, W) array by p on every side."""
    c, h, w = x.shape
    idx = reflect_index if mode == "reflect" else replicate_index
    out = np.zeros((c, h + 2 * p, w + 2 * p), dtype=np.float64)
    for ch in range(c):
        for i in range(h + 2 * p):
            for j in range(w + 2 * p):
                out[ch, i, j] = x[ch, idx(i - p, h), idx(j - p, w)]
    return out


def zero_pad(x, p):
    c, h, w = x.shape
    out = np.zeros((c, h + 2 * p, w + 2 * p), dtype=np.float64)
    out[:, p : p + h, p : p + w] = x
    return out


def conv2d(x, weight, bias=None, stride=1):
    """Valid cross-correlation of a (Cin, H, W) map with (Cout, Cin, k, k) weights."""
    cin, h, w = x.shape
    cout, _, kh, kw = weight.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    out = np.zeros((cout, oh, ow))
    for o in range(cout):
        for i in range(oh):
            for j in range(ow):
                acc = 0.0
                for c in range(cin):
                    for a in range(kh):
                        for b in range(kw):
                            acc += x[c, i * stride + a, j * stride + b] * weight[o, c, a, b]
                out[o, i, j] = acc + (bias[o] if bias is not None else 0.0)
    return out


def conv_transpose2d(x, weight, bias=None, stride=2, padding=1):
    """Scatter form of transposed convolution, weight shape (Cin, Cout, k, k)."""
    cin, h, w = x.shape
    _, cout, k, _ = weight.shape
    full_h = (h - 1) * stride + k
    full_w = (w - 1) * stride + k
    full = np.zeros((cout, full_h, full_w))
    for c in range(cin):
        for i in range(h):
            for j in range(w):
                for o in range(cout):
                    for a in range(k):
                        for b in range(k):
                            full[o, i * stride + a, j * stride + b] += x[c, i, j] * weight[c, o, a, b]
    out = full[:, padding : full_h - padding, padding : full_w - padding]
    if bias is not None:
        out = out + np.asarray(bias)[:, None, None]
    return out


def instance_norm(x, eps=1e-5):
    out = np.zeros_like(x, dtype=np.float64)
    for c in range(x.shape[0]):
        m = x[c].mean()
        v = ((x[c] - m) ** 2).mean()
        out[c] = (x[c] - m) / math.sqrt(v + eps)
    return out


def sigmoid(v):
    return 1.0 / (1.0 + math.exp(-v))


def channel_weights(x, w1, w2):
    """(C, H, W) map, w1 (hidden, C), w2 (C, hidden) -> (C,) gates."""
    c, h, w = x.shape
    avg = [sum(x[ch, i, j] for i in range(h) for j in range(w)) / (h * w) for ch in range(c)]
    mx = [max(x[ch, i, j] for i in range(h) for j in range(w)) for ch in range(c)]

    def mlp(v):
        hidden = [max(0.0, sum(w1[k, ch] * v[ch] for ch in range(c))) for k in range(w1.shape[0])]
        return [sum(w2[ch, k] * hidden[k] for k in range(len(hidden))) for ch in range(c)]

    a, m = mlp(avg), mlp(mx)
    return np.array([sigmoid(a[ch] + m[ch]) for ch in range(c)])


def spatial_weights(x, kernel):
    """(C, H, W) map, kernel (2, k, k) -> (H, W) gates with reflection padding."""
    c, h, w = x.shape
    k = kernel.shape[-1]
    p = (k - 1) // 2
    mean = np.array([[sum(x[ch, i, j] for ch in range(c)) / c for j in range(w)] for i in range(h)])
    mx = np.array([[max(x[ch, i, j] for ch in range(c)) for j in range(w)] for i in range(h)])
    mode = "reflect" if p < h and p < w else "replicate"
    desc = pad(np.stack([mean, mx]), p, mode)
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for d in range(2):
                for a in range(k):
                    for b in range(k):
                        acc += desc[d, i + a, j + b] * kernel[d, a, b]
            out[i, j] = sigmoid(acc)
    return out


def cbam(x, w1, w2, kernel):
    cw = channel_weights(x, w1, w2)
    refined = x * cw[:, None, None]
    sw = spatial_weights(refined, kernel)
    return refined * sw[None]


def gaussian_window(size, sigma):
    g = [math.exp(-((i - (size - 1) / 2) ** 2) / (2 * sigma**2)) for i in range(size)]
    s = sum(g)
    g = [v / s for v in g]
    return np.array([[a * b for b in g] for a in g])


def ssim_map(x, y, window, c1, c2):
    """Direct per-window evaluation of the SSIM index on (H, W) arrays."""
    h, w = x.shape
    k = window.shape[0]
    out = np.zeros((h - k + 1, w - k + 1))
    for i in range(h - k + 1):
        for j in range(w - k + 1):
            px = x[i : i + k, j : j + k]
            py = y[i : i + k, j : j + k]
            mx = float((window * px).sum())
            my = float((window * py).sum())
            vx = float((window * (px - mx) ** 2).sum())
            vy = float((window * (py - my) ** 2).sum())
            cxy = float((window * (px - mx) * (py - my)).sum())
            out[i, j] = ((2 * mx * my + c1) * (2 * cxy + c2)) / (
                (mx * mx + my * my + c1) * (vx + vy + c2)
            )
    return out


class AdamOracle:
    """Textbook Adam with bias correction, plain floats."""

    def __init__(self, theta, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.theta = np.array(theta, dtype=np.float64)
        self.m = np.zeros_like(self.theta)
        self.v = np.zeros_like(self.theta)
        self.t = 0
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps

    def step(self, grad):
        self.t += 1
        self.m = self.b1 * self.m + (1 - self.b1) * grad
        self.v = self.b2 * self.v + (1 - self.b2) * grad * grad
        mhat = self.m / (1 - self.b1**self.t)
        vhat = self.v / (1 - self.b2**self.t)
        self.theta = self.theta - self.lr * mhat / (np.sqrt(vhat) + self.eps)
        return self.theta


def central_difference(f, x, index, h=1e-6):
    """d f / d x[index] for a float64 numpy-style mutable tensor ``x``."""
    orig = float(x[index])
    x[index] = orig + h
    fp = float(f().detach())
    x[index] = orig - h
    fm = float(f().detach())
    x[index] = orig
    return (fp - fm) / (2 * h)
