"""Independent numpy reimplementations used as test oracles.

Nothing here imports the package's tensor code; loops are written out so
the reference is easy to audit against the block description.
"""

import math

import numpy as np


def layer_norm(x, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def attention(q, kv, wq, wk, wv, heads, causal):
    """Multi-head attention with one python loop per (batch, head, query)."""
    b, lq, d = q.shape
    lk = kv.shape[1]
    dk = d // heads
    Q, K, V = q @ wq, kv @ wk, kv @ wv
    out = np.zeros((b, lq, d))
    for n in range(b):
        for h in range(heads):
            cols = slice(h * dk, (h + 1) * dk)
            for i in range(lq):
                scores = np.array([Q[n, i, cols] @ K[n, j, cols] / math.sqrt(dk) for j in range(lk)])
                if causal:
                    scores[i + 1 :] = -np.inf
                w = np.exp(scores - scores.max())
                w /= w.sum()
                out[n, i, cols] = sum(w[j] * V[n, j, cols] for j in range(lk))
    return out


def fusion_block(q, kv, w, heads, single_final_norm=False):
    """Reference fusion block; ``w`` maps wq, wk_self, wv_self, wk_cross, wv_cross, wo, w1, w2."""
    s = attention(q, q, w["wq"], w["wk_self"], w["wv_self"], heads, causal=True)
    s_out = layer_norm(s @ w["wo"] + q)
    c = attention(s_out, kv, w["wq"], w["wk_cross"], w["wv_cross"], heads, causal=False)
    c_out = layer_norm(c @ w["wo"] + s_out)
    f_out = layer_norm(np.maximum(c_out @ w["w1"], 0.0) @ w["w2"] + c_out)
    return f_out if single_final_norm else layer_norm(f_out + c_out)


def ranks_bruteforce(scores, labels):
    """1-based rank of each label: sort app ids by (-score, id) and find the label."""
    out = []
    for row, y in zip(scores, labels):
        order = sorted(range(len(row)), key=lambda a: (-row[a], a))
        out.append(order.index(y) + 1)
    return out


def metrics_bruteforce(scores, labels, k):
    ranks = ranks_bruteforce(scores, labels)
    n = len(ranks)
    # fsum is exact up to one final rounding, so any correct summation order agrees
    hit = math.fsum(1.0 for r in ranks if r <= k) / n
    mrr = math.fsum(1.0 / r for r in ranks if r <= k) / n
    ndcg = math.fsum(1.0 / math.log2(r + 1) for r in ranks if r <= k) / n
    return hit, mrr, ndcg


def macro_f1_bruteforce(pred, truth, n_classes):
    scores = []
    for c in range(n_classes):
        tp = sum(1 for p, t in zip(pred, truth) if p == c and t == c)
        fp = sum(1 for p, t in zip(pred, truth) if p == c and t != c)
        fn = sum(1 for p, t in zip(pred, truth) if p != c and t == c)
        scores.append(2 * tp / (2 * tp + fp + fn) if tp else 0.0)
    return math.fsum(scores) / n_classes
