"""Independent reference implementations used as test oracles.

Everything here is deliberately written as plain scalar loops over nested
Python lists (plus `math`), with no imports from the package under test and
no vectorized numpy shortcuts, so that agreement between the package and
these functions is meaningful.
"""

import math


def ref_matmul(a, b):
    """Triple-loop matrix product of two nested lists."""
    m, k = len(a), len(a[0])
    k2, n = len(b), len(b[0])
    assert k == k2
    out = [[0.0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            acc = 0.0
            for l in range(k):
                acc += a[i][l] * b[l][j]
            out[i][j] = acc
    return out


def ref_transpose(a):
    return [[a[i][j] for i in range(len(a))] for j in range(len(a[0]))]


def ref_softmax_row(row):
    mx = max(row)
    exps = [math.exp(v - mx) for v in row]
    s = sum(exps)
    return [e / s for e in exps]


def ref_row_softmax(m):
    return [ref_softmax_row(row) for row in m]


def ref_relu(m):
    return [[v if v > 0.0 else 0.0 for v in row] for row in m]


def ref_hadamard(a, b):
    return [[a[i][j] * b[i][j] for j in range(len(a[0]))] for i in range(len(a))]


def ref_add(a, b):
    return [[a[i][j] + b[i][j] for j in range(len(a[0]))] for i in range(len(a))]


def ref_sub(a, b):
    return [[a[i][j] - b[i][j] for j in range(len(a[0]))] for i in range(len(a))]


def ref_concat_cols(parts):
    rows = len(parts[0])
    out = []
    for i in range(rows):
        row = []
        for p in parts:
            row.extend(p[i])
        out.append(row)
    return out


def ref_mean_rows(m):
    t, d = len(m), len(m[0])
    return [[sum(m[i][j] for i in range(t)) / t for j in range(d)]]


def ref_attention_transfer(m, s_core):
    """softmax -> hadamard -> matmul chain on nested lists."""
    alpha = ref_row_softmax(m)
    a = ref_hadamard(alpha, m)
    return ref_matmul(a, s_core)


def ref_interaction_matrix(w, s_core, s_others):
    """s_core @ (sum_o w @ s_o^T) via scalar loops."""
    acc = None
    for s_o in s_others:
        term = ref_matmul(w, ref_transpose(s_o))
        acc = term if acc is None else ref_add(acc, term)
    return ref_matmul(s_core, acc)


def ref_pair_gate(s_p, s_q, w, b):
    cat = ref_concat_cols([s_p, s_q, ref_sub(s_p, s_q), ref_hadamard(s_p, s_q)])
    lin = ref_matmul(cat, w)
    biased = [[lin[i][j] + b[j] for j in range(len(b))] for i in range(len(lin))]
    return ref_relu(biased)


def ref_joint_representation(a_p, s_p, a_q, s_q, g, w1, w2):
    f1 = ref_matmul(ref_concat_cols([a_p, s_p]), w1)
    f2 = ref_matmul(ref_concat_cols([a_q, s_q]), w2)
    return ref_add(ref_hadamard(g, f1), ref_hadamard(g, f2))


def ref_linear_map(rows, w, b=None):
    out = ref_matmul(rows, w)
    if b is not None:
        out = [[out[i][j] + b[j] for j in range(len(b))] for i in range(len(out))]
    return out


def ref_mmd2_linear(a_rows, b_rows, w, b=None):
    """Squared distance between mean embeddings of two row batches."""
    fa = ref_linear_map(a_rows, w, b)
    fb = ref_linear_map(b_rows, w, b)
    mean_a = ref_mean_rows(fa)[0]
    mean_b = ref_mean_rows(fb)[0]
    return sum((ma - mb) ** 2 for ma, mb in zip(mean_a, mean_b))


def ref_rbf_kernel(x, y, bandwidth):
    sq = sum((xi - yi) ** 2 for xi, yi in zip(x, y))
    return math.exp(-sq / (2.0 * bandwidth * bandwidth))


def ref_mmd2_rbf(a_rows, b_rows, bandwidth):
    """Biased (V-statistic) RBF MMD^2 including diagonal terms."""
    n, m = len(a_rows), len(b_rows)
    kaa = sum(ref_rbf_kernel(x, y, bandwidth) for x in a_rows for y in a_rows) / (n * n)
    kbb = sum(ref_rbf_kernel(x, y, bandwidth) for x in b_rows for y in b_rows) / (m * m)
    kab = sum(ref_rbf_kernel(x, y, bandwidth) for x in a_rows for y in b_rows) / (n * m)
    return kaa + kbb - 2.0 * kab


def ref_multihead(q_in, k_in, v_in, wq, wk, wv, wo, scale):
    """Scalar-loop multi-head attention; wq/wk/wv are per-head weight lists."""
    heads = []
    for hq, hk, hv in zip(wq, wk, wv):
        q = ref_matmul(q_in, hq)
        k = ref_matmul(k_in, hk)
        v = ref_matmul(v_in, hv)
        scores = ref_matmul(q, ref_transpose(k))
        scores = [[s / scale for s in row] for row in scores]
        alpha = ref_row_softmax(scores)
        heads.append(ref_matmul(alpha, v))
    return ref_matmul(ref_concat_cols(heads), wo)


def ref_mae(scores, labels):
    return sum(abs(s - l) for s, l in zip(scores, labels)) / len(scores)


def ref_mse(a, b):
    flat_a = [v for row in a for v in row]
    flat_b = [v for row in b for v in row]
    return sum((x - y) ** 2 for x, y in zip(flat_a, flat_b)) / len(flat_a)


def ref_accuracy(pred, true):
    return sum(1 for p, t in zip(pred, true) if p == t) / len(pred)


def ref_f1_weighted(pred, true):
    classes = sorted(set(true) | set(pred))
    total = len(true)
    out = 0.0
    for c in classes:
        tp = sum(1 for p, t in zip(pred, true) if p == c and t == c)
        fp = sum(1 for p, t in zip(pred, true) if p == c and t != c)
        fn = sum(1 for p, t in zip(pred, true) if p != c and t == c)
        support = tp + fn
        if support == 0:
            continue
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        out += f1 * support / total
    return out


def ref_pearson(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y))
    vx = sum((a - mx) ** 2 for a in x)
    vy = sum((b - my) ** 2 for b in y)
    if vx == 0.0 or vy == 0.0:
        return None
    return cov / math.sqrt(vx * vy)


def ref_adam_step(theta, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam recurrence on flat scalar lists; returns new (theta, m, v, t)."""
    t = t + 1
    new_theta, new_m, new_v = [], [], []
    for th, g, mi, vi in zip(theta, grad, m, v):
        mi = beta1 * mi + (1 - beta1) * g
        vi = beta2 * vi + (1 - beta2) * g * g
        m_hat = mi / (1 - beta1**t)
        v_hat = vi / (1 - beta2**t)
        new_theta.append(th - lr * m_hat / (math.sqrt(v_hat) + eps))
        new_m.append(mi)
        new_v.append(vi)
    return new_theta, new_m, new_v, t


def central_difference(f, xs, eps):
    """Central-difference gradient of scalar f over a flat list of floats."""
    grads = []
    for i in range(len(xs)):
        bumped = list(xs)
        bumped[i] = xs[i] + eps
        fp = f(bumped)
        bumped[i] = xs[i] - eps
        fm = f(bumped)
        grads.append((fp - fm) / (2.0 * eps))
    return grads
