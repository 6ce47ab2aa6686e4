"""Top-k verb / noun / action accuracy."""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from patchda.errors import InvalidInputError


@dataclass
class MetricsReport:
    verb_top1: float
    verb_top5: float
    noun_top1: float
    noun_top5: float
    action_top1: float
    action_top5: float
    counts: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def _topk_hits(scores, labels, k):
    # stable descending order: ties resolved towards the lower class index
    order = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return (order == labels[:, None]).any(axis=1)


def _softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    z = logits - logits.max(axis=1, keepdims=True)
    p = np.exp(z)
    return p / p.sum(axis=1, keepdims=True)


def accuracy_report(verb_logits, noun_logits, verbs, nouns, counts=None, k=5):
    """Top-1 / top-k accuracies in percent.

    Actions are ranked by ``p_verb * p_noun`` over all verb x noun pairs; the
    action label is ``verb * N + noun``.
    """
    verb_logits = np.asarray(verb_logits, dtype=np.float64)
    noun_logits = np.asarray(noun_logits, dtype=np.float64)
    verbs = np.asarray(verbs)
    nouns = np.asarray(nouns)
    n = len(verbs)
    if n == 0:
        raise InvalidInputError("cannot evaluate an empty split")
    num_nouns = noun_logits.shape[1]
    pv, pn = _softmax(verb_logits), _softmax(noun_logits)
    pair = (pv[:, :, None] * pn[:, None, :]).reshape(n, -1)
    action = verbs * num_nouns + nouns

    def pct(hits):
        return 100.0 * float(np.mean(hits))

    verb_top1 = _topk_hits(verb_logits, verbs, 1)
    noun_top1 = _topk_hits(noun_logits, nouns, 1)
    return MetricsReport(
        verb_top1=pct(verb_top1),
        verb_top5=pct(_topk_hits(verb_logits, verbs, k)),
        noun_top1=pct(noun_top1),
        noun_top5=pct(_topk_hits(noun_logits, nouns, k)),
        action_top1=pct(verb_top1 & noun_top1),
        action_top5=pct(_topk_hits(pair, action, k)),
        counts=dict(counts or {"clips": n}),
    )


def random_action_top1(num_verbs, num_nouns):
    return 100.0 / (num_verbs * num_nouns)


def box_iou(a, b):
    """IoU of two ``[x, y, w, h]`` boxes in continuous pixel coordinates."""
    ax0, ay0, aw, ah = a
    bx0, by0, bw, bh = b
    iw = max(0.0, min(ax0 + aw, bx0 + bw) - max(ax0, bx0))
    ih = max(0.0, min(ay0 + ah, by0 + bh) - max(ay0, by0))
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return inter / union if union > 0 else 0.0


def mean_center_distance(centers, boxes):
    """Mean Euclidean distance (pixels) between patch centres and box centres."""
    dists = [math.hypot(cx - (x + w / 2), cy - (y + h / 2)) for (cx, cy), (x, y, w, h) in zip(centers, boxes)]
    return float(np.mean(dists))
