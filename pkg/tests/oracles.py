"""Brute-force reference implementations used only by tests.

Everything here is written from the prose rules, independently of the main
code paths (no imports from compvid internals beyond plain data), so
agreement between the two is evidence rather than tautology. Scales are
capped for exhaustive checks; none of this is meant to be fast.
"""

import math
from dataclasses import dataclass


@dataclass
class OracleReport:
    """One main-path-vs-oracle comparison with its declared tolerance."""

    case: str
    main_value: float
    oracle_value: float
    tolerance: float

    @property
    def abs_error(self) -> float:
        return abs(self.main_value - self.oracle_value)

    @property
    def rel_error(self) -> float:
        scale = max(abs(self.main_value), abs(self.oracle_value), 1e-300)
        return self.abs_error / scale

    @property
    def passed(self) -> bool:
        return self.abs_error <= self.tolerance

    def __str__(self):
        status = "ok" if self.passed else "FAIL"
        return (f"[{status}] {self.case}: main={self.main_value!r} "
                f"oracle={self.oracle_value!r} abs={self.abs_error:.3e} "
                f"rel={self.rel_error:.3e} tol={self.tolerance:.1e}")


def oracle_pool(rows):
    """Mean of a list of row vectors via explicit summation."""
    n = len(rows)
    d = len(rows[0])
    out = [0.0] * d
    for row in rows:
        for j in range(d):
            out[j] += row[j]
    return [v / n for v in out]


def oracle_cosine(u, v):
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    return dot / (nu * nv)


def oracle_softmax_row(row):
    ex = [math.exp(x) for x in row]
    z = sum(ex)
    return [e / z for e in ex]


def oracle_confusion(pooled_prompt, pooled_anchors, tau):
    """Direct evaluation of the confusion-scale ratio, one subject at a time."""
    m = len(pooled_prompt)
    scales = []
    for k in range(m):
        num = 0.0
        den = 0.0
        for i in range(m):
            term = math.exp(oracle_cosine(pooled_prompt[k], pooled_anchors[i]) / tau)
            den += term
            if i != k:
                num += term
        scales.append(num / den)
    return scales


def oracle_topk(values, k):
    """(threshold, selected index set) by full sort.

    Descending value with ascending-index tie-break; threshold is the k-th
    largest value. k=0 returns (None, empty set).
    """
    n = len(values)
    if k == 0:
        return None, set()
    order = sorted(range(n), key=lambda i: (-values[i], i))
    chosen = order[:k]
    return values[order[k - 1]], set(chosen)


def oracle_mask_predicate(p, q, video_masks, text_masks, n_video, context_symmetric=False):
    """Per-pair prose rule for the joint mask.

    A pair is allowed when some subject contains both endpoints, or the query
    token belongs to no subject, or (symmetric mode) the key token belongs to
    no subject.
    """

    def memberships(idx):
        if idx < n_video:
            return [i for i, mask in enumerate(video_masks) if mask[idx]]
        t = idx - n_video
        return [i for i, mask in enumerate(text_masks) if mask[t]]

    mp, mq = memberships(p), memberships(q)
    if any(i in mq for i in mp):
        return 1
    if not mp:
        return 1
    if context_symmetric and not mq:
        return 1
    return 0


def oracle_joint_mask(video_masks, text_masks, n_video, n_text, context_symmetric=False):
    """Full n x n mask by evaluating the per-pair predicate everywhere."""
    n = n_video + n_text
    return [
        [oracle_mask_predicate(p, q, video_masks, text_masks, n_video, context_symmetric)
         for q in range(n)]
        for p in range(n)
    ]


def oracle_attention(q_rows, k_rows, v_rows, allowed):
    """Per-row renormalized attention over allowed columns only.

    ``allowed(p, q)`` is a pair predicate. A row with no allowed column falls
    back to its own value row, matching the main path's self-only guard.
    """
    n = len(q_rows)
    d = len(q_rows[0])
    dv = len(v_rows[0])
    scale = 1.0 / math.sqrt(d)
    out = []
    for p in range(n):
        cols = [c for c in range(n) if allowed(p, c)]
        if not cols:
            out.append(list(v_rows[p]))
            continue
        logits = []
        for c in cols:
            logits.append(scale * sum(q_rows[p][j] * k_rows[c][j] for j in range(d)))
        mx = max(logits)
        ex = [math.exp(l - mx) for l in logits]
        z = sum(ex)
        row = [0.0] * dv
        for w, c in zip(ex, cols):
            for j in range(dv):
                row[j] += (w / z) * v_rows[c][j]
        out.append(row)
    return out


def pearson(xs, ys):
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    sxx = sum((x - mx) ** 2 for x in xs)
    syy = sum((y - my) ** 2 for y in ys)
    return sxy / math.sqrt(sxx * syy)
