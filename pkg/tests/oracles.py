"""Independent scalar oracles shared by unit and acceptance tests."""

import math


def _cos(u, v, eps=1e-8):
    dot = sum(a * b for a, b in zip(u, v))
    nu = max(math.sqrt(sum(a * a for a in u)), eps)
    nv = max(math.sqrt(sum(b * b for b in v)), eps)
    return dot / (nu * nv)


def contrastive_by_enumeration(cls_rows, topic_ids, topic_rows, tau):
    """Loop over segments S, anchors h in {h_cls(S), e_t(S)}, positives, negatives.

    ``topic_rows[i]`` is the topic vector of segment i. Vectors are keyed so a
    topic's embedding is one set element no matter how many segments share it.
    """
    vec = {}
    group = {}
    for i, (c, t, e) in enumerate(zip(cls_rows, topic_ids, topic_rows)):
        vec[("cls", i)] = list(map(float, c))
        vec[("topic", int(t))] = list(map(float, e))
        group[("cls", i)] = int(t)
        group[("topic", int(t))] = int(t)
    total, count = 0.0, 0
    for i, t in enumerate(topic_ids):
        t = int(t)
        for anchor in (("cls", i), ("topic", t)):
            negatives = [k for k in vec if group[k] != t]
            if not negatives:
                continue
            positives = [k for k in vec if group[k] == t and k != anchor]
            for p in positives:
                num = math.exp(_cos(vec[anchor], vec[p]) / tau)
                den = num + sum(math.exp(_cos(vec[anchor], vec[n]) / tau) for n in negatives)
                total += -math.log(num / den)
                count += 1
    return total / count if count else 0.0
