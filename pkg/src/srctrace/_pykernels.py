"""Pure numpy versions of the compiled kernels in ``_ckernels.pyx``."""
import numpy as np


def operating_points(scores, is_target):
    scores = np.asarray(scores, dtype=np.float64)
    is_target = np.asarray(is_target, dtype=bool)
    n_tar = int(is_target.sum())
    n_non = is_target.size - n_tar
    last = np.ones(scores.size, dtype=bool)
    last[:-1] = scores[1:] != scores[:-1]
    acc_tar = np.cumsum(is_target)[last]
    acc_non = np.cumsum(~is_target)[last]
    far = acc_non / float(n_non)
    frr = (n_tar - acc_tar) / float(n_tar)
    return scores[last].copy(), far, frr


def paired_cosine(a, ia, b, ib):
    # Sequential accumulation to match the compiled loop bit for bit.
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    x = a[ia]
    y = b[ib]
    dot = np.zeros(len(ia))
    na = np.zeros(len(ia))
    nb = np.zeros(len(ia))
    for j in range(a.shape[1]):
        dot += x[:, j] * y[:, j]
        na += x[:, j] * x[:, j]
        nb += y[:, j] * y[:, j]
    zero = (na == 0.0) | (nb == 0.0)
    if zero.any():
        raise ZeroDivisionError(f"zero vector in pair {int(np.argmax(zero))}")
    return np.clip(dot / np.sqrt(na * nb), -1.0, 1.0)
