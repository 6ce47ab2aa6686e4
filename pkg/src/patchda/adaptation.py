"""Adversarial alignment stack: gradient reversal, domain classifiers at frame,
relation and video level, entropy-based domain attention, verb/noun heads and
the attentive entropy loss.

Domain tags are integers: 0 for source, 1 for target.
"""

import math
import warnings
from dataclasses import dataclass, field, fields

import torch
import torch.nn.functional as F
from torch import nn

from patchda.errors import InvalidInputError, LabelAccessError, TrainingAbort
from patchda.relation import RelationModule, SharedEmbed, aggregate_video

SOURCE, TARGET = 0, 1
LN2 = math.log(2.0)


class GradReverse(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, coeff):
        ctx.coeff = coeff
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output.neg() * ctx.coeff, None


def grl(x, coeff=1.0):
    """Identity forward; multiplies the incoming gradient by ``-coeff``."""
    if coeff < 0:
        raise InvalidInputError(f"reversal coefficient must be >= 0, got {coeff}")
    return GradReverse.apply(x, float(coeff))


def grl_coefficient(progress):
    """Adversarial warm-up ``2 / (1 + exp(-10 p)) - 1`` for progress ``p`` in [0, 1]."""
    return 2.0 / (1.0 + math.exp(-10.0 * progress)) - 1.0


def entropy(probs, dim=-1):
    """Shannon entropy in nats along ``dim`` with ``0 log 0 = 0``."""
    probs = torch.as_tensor(probs)
    if (probs < 0).any():
        raise InvalidInputError("probabilities must be non-negative")
    sums = probs.sum(dim=dim)
    if not torch.allclose(sums, torch.ones_like(sums), atol=1e-6):
        raise InvalidInputError("probabilities must sum to 1")
    logs = torch.where(probs > 0, torch.log(probs.clamp_min(1e-30)), torch.zeros_like(probs))
    return -(probs * logs).sum(dim=dim)


def normalized_domain_entropy(domain_probs):
    """Binary domain entropy scaled to [0, 1] by ``ln 2``."""
    return entropy(domain_probs) / LN2


class DomainClassifier(nn.Module):
    """Two-layer perceptron emitting 2 domain logits, behind a reversal layer."""

    def __init__(self, feat_dim, hidden=None):
        super().__init__()
        hidden = hidden or max(feat_dim // 4, 1)
        self.net = nn.Sequential(nn.Linear(feat_dim, hidden), nn.ReLU(), nn.Linear(hidden, 2))

    def forward(self, x, coeff=1.0):
        return self.net(grl(x, coeff))


def _check_domains(domains):
    domains = torch.as_tensor(domains, dtype=torch.long)
    if domains.numel() and not ((domains == SOURCE) | (domains == TARGET)).all():
        raise InvalidInputError("domain tags must be 0 (source) or 1 (target)")
    if domains.numel() and domains.unique().numel() < 2:
        warnings.warn("single-domain batch: adversarial signal is degenerate", RuntimeWarning, stacklevel=3)
    return domains


def domain_cross_entropy(logits, domains):
    """Mean 2-class cross-entropy of domain logits against domain tags."""
    return F.cross_entropy(logits, _check_domains(domains))


def frame_domain_loss(classifier, z, domains, coeff=1.0):
    """Segment-level domain loss on shared features ``z`` (B x T x F).

    Returns ``(loss, probs)`` with ``probs`` of shape B x T x 2.
    """
    b, t, f = z.shape
    domains = torch.as_tensor(domains, dtype=torch.long)
    logits = classifier(z.reshape(b * t, f), coeff)
    loss = domain_cross_entropy(logits, domains.repeat_interleave(t))
    return loss, logits.softmax(-1).reshape(b, t, 2)


def relation_domain_losses(classifiers, relations, domains, coeff=1.0):
    """One domain loss and prediction set per relation scale."""
    if set(int(k) for k in classifiers.keys()) != set(relations.scales):
        raise InvalidInputError("one relation domain classifier per scale is required")
    losses, probs = {}, {}
    for n in relations.scales:
        logits = classifiers[str(n)](relations.features[n], coeff)
        losses[n] = domain_cross_entropy(logits, domains)
        probs[n] = logits.softmax(-1)
    return losses, probs


def domain_attention(relations, domain_probs):
    """Residual attention ``r~ = (1 + w) r`` with ``w = 1 - H(p)/ln 2`` per clip.

    Scales whose relation features are easy to tell apart by domain get more
    weight.  The weights are treated as constants for backpropagation.
    """
    if set(domain_probs) != set(relations.scales):
        raise InvalidInputError("domain predictions must cover exactly the relation scales")
    attended, weights = {}, {}
    for n in relations.scales:
        w = 1.0 - normalized_domain_entropy(domain_probs[n].detach())
        w = w.clamp(0.0, 1.0)
        weights[n] = w
        attended[n] = (1.0 + w).unsqueeze(-1) * relations.features[n]
    return attended, weights


def video_domain_loss(classifier, video, domains, coeff=1.0):
    """Video-level domain loss; returns ``(loss, probs)``."""
    logits = classifier(video, coeff)
    return domain_cross_entropy(logits, domains), logits.softmax(-1)


@dataclass
class ActionPrediction:
    verb_logits: torch.Tensor
    noun_logits: torch.Tensor


class ActionHeads(nn.Module):
    """Independent affine verb and noun heads over the video feature."""

    def __init__(self, feat_dim, num_verbs, num_nouns):
        super().__init__()
        self.feat_dim = feat_dim
        self.verb = nn.Linear(feat_dim, num_verbs)
        self.noun = nn.Linear(feat_dim, num_nouns)

    def forward(self, video):
        if video.shape[-1] != self.feat_dim:
            raise InvalidInputError(f"video feature has {video.shape[-1]} dims, heads expect {self.feat_dim}")
        return ActionPrediction(self.verb(video), self.noun(video))


def classification_loss(pred, verbs, nouns, domains):
    """Mean verb and noun cross-entropy; source clips only."""
    domains = torch.as_tensor(domains, dtype=torch.long)
    if (domains != SOURCE).any():
        raise LabelAccessError("classification loss may only consume source-domain labels")
    return F.cross_entropy(pred.verb_logits, verbs), F.cross_entropy(pred.noun_logits, nouns)


def attentive_entropy(pred, domain_probs):
    """Class-prediction entropy weighted per clip by ``1 + H(domain)/ln 2``."""
    weight = 1.0 + normalized_domain_entropy(domain_probs.detach())
    ae_verb = (weight * entropy(pred.verb_logits.softmax(-1))).mean()
    ae_noun = (weight * entropy(pred.noun_logits.softmax(-1))).mean()
    return ae_verb, ae_noun


@dataclass
class LossWeights:
    sd: float = 0.5
    rd: float = 0.5
    td: float = 0.5
    ae: float = 0.01


@dataclass
class LossBreakdown:
    L_y_verb: torch.Tensor
    L_y_noun: torch.Tensor
    L_sd: torch.Tensor
    L_rd: dict
    L_td: torch.Tensor
    L_ae_verb: torch.Tensor
    L_ae_noun: torch.Tensor
    total: torch.Tensor = field(default=None)

    def as_dict(self):
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            key = f.name
            if isinstance(value, dict):
                out[key] = {str(n): float(torch.as_tensor(v).detach()) for n, v in sorted(value.items())}
            elif value is not None:
                out[key] = float(torch.as_tensor(value).detach())
        return out


def total_loss(parts, weights):
    """Weighted sum of the loss components; fills and returns ``parts.total``.

    Raises :class:`TrainingAbort` naming the first non-finite component.
    """
    scalars = {
        "L_y_verb": parts.L_y_verb,
        "L_y_noun": parts.L_y_noun,
        "L_sd": parts.L_sd,
        "L_td": parts.L_td,
        "L_ae_verb": parts.L_ae_verb,
        "L_ae_noun": parts.L_ae_noun,
    }
    scalars.update({f"L_rd[{n}]": v for n, v in parts.L_rd.items()})
    for name, value in scalars.items():
        if not torch.isfinite(torch.as_tensor(value)).all():
            raise TrainingAbort(None, name)
    rd_mean = sum(parts.L_rd.values()) / len(parts.L_rd) if parts.L_rd else 0.0
    parts.total = (
        parts.L_y_verb
        + parts.L_y_noun
        + weights.sd * parts.L_sd
        + weights.rd * rd_mean
        + weights.td * parts.L_td
        + weights.ae * (parts.L_ae_verb + parts.L_ae_noun)
    )
    return parts.total


class AdaptationNetwork(nn.Module):
    """Shared embedding, relation module, the three discriminator levels and
    the verb/noun heads, wired together for one forward pass."""

    def __init__(self, fused_dim, num_segments, feat_dim, num_verbs, num_nouns, relation_hidden=256, max_tuples=3, seed=0):
        super().__init__()
        self.embed = SharedEmbed(fused_dim, feat_dim)
        self.relation = RelationModule(num_segments, feat_dim, max_tuples, relation_hidden, seed)
        self.frame_domain = DomainClassifier(feat_dim)
        self.relation_domain = nn.ModuleDict({str(n): DomainClassifier(feat_dim) for n in self.relation.scales})
        self.video_domain = DomainClassifier(feat_dim)
        self.heads = ActionHeads(feat_dim, num_verbs, num_nouns)

    def forward(self, e, domains=None, coeff=0.0):
        """Returns a dict with the prediction and every intermediate.

        ``domains`` (B,) is only needed for the domain losses; without it the
        losses are omitted.
        """
        z = self.embed(e)
        relations = self.relation(z)
        out = {"z": z, "relations": relations}
        if domains is not None:
            out["L_sd"], _ = frame_domain_loss(self.frame_domain, z, domains, coeff)
            out["L_rd"], rel_probs = relation_domain_losses(self.relation_domain, relations, domains, coeff)
        else:
            rel_probs = {n: self.relation_domain[str(n)](relations.features[n], coeff).softmax(-1) for n in relations.scales}
        attended, weights = domain_attention(relations, rel_probs)
        video = aggregate_video(attended, relations.scales)
        if domains is not None:
            out["L_td"], video_probs = video_domain_loss(self.video_domain, video, domains, coeff)
        else:
            video_probs = self.video_domain(video, coeff).softmax(-1)
        out.update(
            relation_probs=rel_probs,
            attention=weights,
            video=video,
            video_domain_probs=video_probs,
            pred=self.heads(video),
        )
        return out
