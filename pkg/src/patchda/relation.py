"""Shared-space embedding and the multi-scale temporal relation module."""

import itertools
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from patchda.errors import InvalidInputError

STANDARD_FEAT_DIMS = (512, 1024, 2048)


def enumerate_ordered_subsets(T, n, S, seed=0):
    """Strictly increasing index ``n``-tuples over ``range(T)``.

    All ``C(T, n)`` tuples in lexicographic order when there are at most ``S``
    of them, otherwise ``S`` distinct tuples drawn uniformly without
    replacement (deterministic in ``seed``) and returned in lexicographic order.
    """
    if not 2 <= n <= T:
        raise InvalidInputError(f"relation scale n={n} must satisfy 2 <= n <= T={T}")
    if S < 1:
        raise InvalidInputError(f"tuple cap S must be >= 1, got {S}")
    tuples = list(itertools.combinations(range(T), n))
    if len(tuples) <= S:
        return tuples
    rng = np.random.default_rng([seed, T, n])
    picked = np.sort(rng.choice(len(tuples), size=S, replace=False))
    return [tuples[i] for i in picked]


@dataclass
class RelationSet:
    """Per-scale relation features ``r^n`` (each ``B x FeatDim``)."""

    features: dict
    subset_counts: dict = field(default_factory=dict)

    @property
    def scales(self):
        return sorted(self.features)


class SharedEmbed(nn.Module):
    """Per-segment affine map + ReLU into the shared feature space."""

    def __init__(self, in_dim, feat_dim):
        super().__init__()
        self.in_dim = in_dim
        self.feat_dim = feat_dim
        self.fc = nn.Linear(in_dim, feat_dim)

    def forward(self, e):
        if e.shape[-1] != self.in_dim:
            raise InvalidInputError(f"fused feature has {e.shape[-1]} dims, embedding expects {self.in_dim}")
        return torch.relu(self.fc(e))


class RelationModule(nn.Module):
    """Multi-scale TRN-style relations over scales ``2..T``.

    For each scale ``n`` a fixed set of ordered frame tuples is chosen at
    construction; ``r^n`` is the mean of ``g_n`` over those tuples, with ``g_n``
    a two-layer perceptron from ``n * FeatDim`` to ``FeatDim``.
    """

    def __init__(self, num_segments, feat_dim, max_tuples=3, hidden=256, seed=0):
        super().__init__()
        if num_segments < 2:
            raise InvalidInputError("relation module needs at least 2 segments")
        self.num_segments = num_segments
        self.feat_dim = feat_dim
        self.scales = list(range(2, num_segments + 1))
        self.tuples = {n: enumerate_ordered_subsets(num_segments, n, max_tuples, seed) for n in self.scales}
        self.g = nn.ModuleDict(
            {
                str(n): nn.Sequential(
                    nn.Linear(n * feat_dim, hidden),
                    nn.ReLU(),
                    nn.Linear(hidden, feat_dim),
                    nn.ReLU(),
                )
                for n in self.scales
            }
        )

    def forward(self, z):
        if z.dim() != 3 or z.shape[1] != self.num_segments or z.shape[2] != self.feat_dim:
            raise InvalidInputError(
                f"expected B x {self.num_segments} x {self.feat_dim} shared sequence, got {tuple(z.shape)}"
            )
        features = {}
        for n in self.scales:
            idx = torch.tensor(self.tuples[n], dtype=torch.long)
            # B x K x n x F -> B x K x (n F)
            stacked = z[:, idx, :].reshape(z.shape[0], len(idx), n * self.feat_dim)
            features[n] = self.g[str(n)](stacked).mean(dim=1)
        return RelationSet(features, {n: len(self.tuples[n]) for n in self.scales})


def aggregate_video(attended, scales=None):
    """Element-wise sum of the (attended) per-scale relation features."""
    if not attended:
        raise InvalidInputError("no relation scales to aggregate")
    if scales is not None and set(attended) != set(scales):
        raise InvalidInputError(f"scale mismatch: got {sorted(attended)}, expected {sorted(scales)}")
    # fixed summation order keeps the result independent of dict ordering
    keys = sorted(attended)
    out = attended[keys[0]]
    for n in keys[1:]:
        out = out + attended[n]
    return out

