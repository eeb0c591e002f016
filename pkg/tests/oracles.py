"""Independent reference implementations used only by the tests."""
import numpy as np


def align_double_sum(x, delta):
    """Warp by evaluating the full kernel sum over every source position."""
    C, H, W = x.shape
    out = np.zeros_like(x, dtype=np.float64)
    for i in range(H):
        for j in range(W):
            si = i + delta[0, i, j]
            sj = j + delta[1, i, j]
            for h in range(H):
                kh = max(0.0, 1.0 - abs(si - h))
                if kh == 0.0:
                    continue
                for w in range(W):
                    kw = max(0.0, 1.0 - abs(sj - w))
                    out[:, i, j] += x[:, h, w] * kh * kw
    return out


def confusion_loop(pred, truth, n):
    counts = np.zeros((n, n), dtype=np.int64)
    for p, t in zip(np.ravel(pred), np.ravel(truth)):
        counts[int(t), int(p)] += 1
    return counts


def metrics_loop(counts, include_background=True):
    n = len(counts)
    diag = sum(counts[i][i] for i in range(n))
    total = sum(counts[i][j] for i in range(n) for j in range(n))
    ious, f1s = [], []
    for i in range(n):
        row = sum(counts[i][j] for j in range(n))
        col = sum(counts[j][i] for j in range(n))
        if row + col == 0 or (i == 0 and not include_background):
            continue
        ious.append(counts[i][i] / (row + col - counts[i][i]))
        f1s.append(2 * counts[i][i] / (row + col))
    return diag / total, sum(ious) / len(ious), sum(f1s) / len(f1s)


def numeric_grad(f, x, eps=1e-6):
    """Central differences of a numpy scalar function."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = g.reshape(-1)
    for k in range(x.size):
        xp = x.astype(np.float64).copy().reshape(-1)
        xp[k] += eps
        fp = f(xp.reshape(x.shape))
        xp[k] -= 2 * eps
        fm = f(xp.reshape(x.shape))
        flat[k] = (fp - fm) / (2 * eps)
    return g
