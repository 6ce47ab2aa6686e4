"""The full video model: extractor, phase-1 auxiliary head, adaptation stack."""

import torch
from torch import nn

from patchda.adaptation import ActionPrediction, AdaptationNetwork
from patchda.streams import STREAMS, Extractor


class AuxHead(nn.Module):
    """Phase-1 verb/noun head over segment-averaged fused features."""

    def __init__(self, fused_dim, num_verbs, num_nouns, dropout=0.5):
        super().__init__()
        self.drop = nn.Dropout(dropout)
        self.verb = nn.Linear(fused_dim, num_verbs)
        self.noun = nn.Linear(fused_dim, num_nouns)

    def forward(self, e):
        pooled = self.drop(e.mean(dim=1))
        return ActionPrediction(self.verb(pooled), self.noun(pooled))


class LocalAuxHeads(nn.Module):
    """Per-stream glance and focus classifiers used only during phase 1.

    The focus heads see nothing but the cropped patches, so their loss falls
    only when the policy puts the patch on the informative region.
    """

    def __init__(self, glance_dim, local_dim, num_verbs, num_nouns):
        super().__init__()
        self.heads = nn.ModuleDict()
        for stream in STREAMS:
            self.heads[f"{stream}_glance"] = AuxHead(glance_dim, num_verbs, num_nouns, dropout=0.0)
            self.heads[f"{stream}_focus"] = AuxHead(local_dim, num_verbs, num_nouns, dropout=0.0)

    def forward(self, fused):
        preds = {}
        for stream in STREAMS:
            coarse = fused.coarse[stream]
            # B x T_g x C x h x w -> B x T_g x C by spatial max
            preds[f"{stream}_glance"] = self.heads[f"{stream}_glance"](coarse.amax(dim=(3, 4)))
            preds[f"{stream}_focus"] = self.heads[f"{stream}_focus"](fused.block(f"{stream}_local"))
        return preds


class VideoModel(nn.Module):
    def __init__(self, cfg, phase="local"):
        super().__init__()
        m = cfg.model
        self.phase = phase
        torch.manual_seed(cfg.train.seed)
        self.extractor = Extractor(m)
        if phase == "local":
            self.aux = AuxHead(m.fused_dim, m.num_verbs, m.num_nouns)
            if m.use_local:
                self.local_aux = LocalAuxHeads(m.glancer_widths[-1], m.local_dim, m.num_verbs, m.num_nouns)
        else:
            self.adapter = AdaptationNetwork(
                m.fused_dim,
                m.num_segments,
                m.feat_dim,
                m.num_verbs,
                m.num_nouns,
                relation_hidden=m.relation_hidden,
                max_tuples=m.max_tuples,
                seed=cfg.train.seed,
            )

    def classify_features(self, e):
        """Action prediction from fused features ``e`` (B x T x D_e)."""
        if self.phase == "local":
            return self.aux(e)
        return self.adapter(e)["pred"]

    def extractor_state(self):
        return {k: v for k, v in self.state_dict().items() if k.startswith("extractor.")}
