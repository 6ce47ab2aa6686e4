"""Two-phase training driver and evaluation.

Phase 1 (:func:`train_local`) fits the extractor (glancers, policies,
focusers, global encoders) on labelled source clips through an auxiliary
verb/noun head.  Phase 2 (:func:`train_adapt`) freezes the extractor and
trains the relation/adaptation stack on source labels plus the adversarial
and attentive-entropy losses computed on both domains.
"""

import json
import logging
import math
import os

import numpy as np
import torch
import torch.nn.functional as F

from patchda.adaptation import (
    SOURCE,
    TARGET,
    LossBreakdown,
    attentive_entropy,
    classification_loss,
    grl_coefficient,
    total_loss,
)
from patchda.data import load_clip
from patchda.errors import CheckpointError, DataError, InvalidInputError, TrainingAbort
from patchda.harness.checkpoint import Checkpoint, load_checkpoint, save_checkpoint, state_hash
from patchda.harness.metrics import accuracy_report
from patchda.model import VideoModel

log = logging.getLogger(__name__)

LOG_NAME = "train_log.jsonl"


def load_batch(manifest, clip_ids, labels="source"):
    """Stack clips into tensors.

    ``labels`` is ``"source"`` (labels read through the training accessor, so
    any target clip raises), ``"eval"`` (evaluation accessor) or ``None``.
    """
    clips = [load_clip(manifest, cid) for cid in clip_ids]
    batch = {
        "clip_ids": list(clip_ids),
        "rgb": torch.from_numpy(np.stack([c.rgb for c in clips])),
        "flow": torch.from_numpy(np.stack([c.flow for c in clips])),
        "audio": torch.from_numpy(np.stack([c.audio for c in clips])),
        "domain": torch.tensor([SOURCE if c.domain == "source" else TARGET for c in clips]),
    }
    if labels == "source":
        batch["verb"] = torch.tensor([c.verb for c in clips])
        batch["noun"] = torch.tensor([c.noun for c in clips])
    elif labels == "eval":
        pairs = [c.eval_labels() for c in clips]
        batch["verb"] = torch.tensor([p[0] for p in pairs])
        batch["noun"] = torch.tensor([p[1] for p in pairs])
    return batch


def _split_ids(manifest, split):
    """``"target/val"`` style split name -> clip ids."""
    try:
        domain, part = split.split("/")
    except ValueError:
        raise InvalidInputError(f"split must look like 'target/val', got {split!r}") from None
    ids = manifest.ids(domain, part)
    if not ids:
        raise DataError(f"split {split!r} is empty")
    return ids


def _append_log(path, record):
    if path is None:
        return
    with open(path, "a") as fh:
        fh.write(json.dumps(record, sort_keys=True) + "\n")


def _check_finite(epoch, named):
    for name, value in named.items():
        if not math.isfinite(float(torch.as_tensor(value).detach())):
            raise TrainingAbort(epoch, name)


def _check_params(epoch, opt):
    # a diverged step shows up here before it can poison the next forward pass
    for group in opt.param_groups:
        if not all(torch.isfinite(p).all() for p in group["params"]):
            raise TrainingAbort(epoch, group.get("name", "parameters"), "non-finite parameters after update")


def _param_groups(model, tc):
    groups = {"glancer": [], "policy": [], "focuser": [], "global": [], "aux": []}
    for name, p in model.named_parameters():
        if ".glancer." in name:
            groups["glancer"].append(p)
        elif ".policy." in name:
            groups["policy"].append(p)
        elif ".focuser." in name:
            groups["focuser"].append(p)
        elif ".global_encoder." in name:
            groups["global"].append(p)
        else:
            groups["aux"].append(p)
    rates = {
        "glancer": tc.lr_glancer,
        "policy": tc.lr_policy,
        "focuser": tc.lr_focuser,
        "global": tc.lr_global,
        "aux": tc.lr_aux,
    }
    return [{"params": ps, "lr": rates[k], "name": k} for k, ps in groups.items() if ps]


def train_local(manifest, cfg, out=None, clip_ids=None):
    """Phase 1 on source training clips; returns a :class:`Checkpoint`.

    When ``out`` is given the checkpoint and ``train_log.jsonl`` are written
    there.
    """
    tc = cfg.train
    ids = clip_ids if clip_ids is not None else manifest.ids("source", "train")
    if not ids:
        raise DataError("no source training clips")
    data = load_batch(manifest, ids, labels="source")
    model = VideoModel(cfg, phase="local")
    opt = torch.optim.SGD(_param_groups(model, tc), momentum=tc.momentum, weight_decay=tc.weight_decay)
    gen = torch.Generator().manual_seed(tc.seed)
    log_path = None
    if out is not None:
        os.makedirs(out, exist_ok=True)
        log_path = os.path.join(out, LOG_NAME)
        open(log_path, "w").close()

    n = len(ids)
    for epoch in range(1, tc.epochs_local + 1):
        model.train()
        order = torch.randperm(n, generator=gen)
        sums = {"L_y_verb": 0.0, "L_y_noun": 0.0}
        for start in range(0, n, tc.batch_size):
            idx = order[start:start + tc.batch_size]
            fused = model.extractor(data["rgb"][idx], data["flow"][idx], data["audio"][idx], [ids[i] for i in idx])
            pred = model.aux(fused.e)
            verb, noun = data["verb"][idx], data["noun"][idx]
            terms = {
                "L_y_verb": F.cross_entropy(pred.verb_logits, verb),
                "L_y_noun": F.cross_entropy(pred.noun_logits, noun),
            }
            if model.extractor.cfg.use_local:
                for name, p in model.local_aux(fused).items():
                    terms[f"L_{name}"] = F.cross_entropy(p.verb_logits, verb) + F.cross_entropy(p.noun_logits, noun)
            _check_finite(epoch, terms)
            loss = terms["L_y_verb"] + terms["L_y_noun"]
            loss = loss + tc.aux_local_weight * sum(v for k, v in terms.items() if not k.startswith("L_y"))
            opt.zero_grad()
            loss.backward()
            opt.step()
            _check_params(epoch, opt)
            for k, v in terms.items():
                sums[k] = sums.get(k, 0.0) + float(v.detach()) * len(idx)
        record = {k: v / n for k, v in sums.items()}
        record.update(phase="local", epoch=epoch)
        record["total"] = record["L_y_verb"] + record["L_y_noun"] + tc.aux_local_weight * sum(
            v for k, v in record.items() if k.startswith("L_") and not k.startswith("L_y")
        )
        record["lr"] = {g["name"]: g["lr"] for g in opt.param_groups}
        _append_log(log_path, record)
        log.info("local epoch %d: %s", epoch, record)

    model.eval()
    ckpt = Checkpoint(model, cfg, "local", tc.epochs_local)
    if out is not None:
        save_checkpoint(ckpt, out)
    return ckpt


@torch.no_grad()
def extract_features(model, manifest, clip_ids, chunk=32):
    """Fused per-segment features for ``clip_ids`` with the extractor in eval mode."""
    model.extractor.eval()
    parts = []
    for start in range(0, len(clip_ids), chunk):
        b = load_batch(manifest, clip_ids[start:start + chunk], labels=None)
        parts.append(model.extractor(b["rgb"], b["flow"], b["audio"], b["clip_ids"]).e)
    return torch.cat(parts)


def _check_compatible(init, cfg):
    saved = init.config.to_dict()["model"]
    wanted = cfg.to_dict()["model"]
    extractor_keys = [
        k for k in saved if k not in ("feat_dim", "relation_hidden", "max_tuples", "ingest_dir")
    ]
    diffs = [k for k in extractor_keys if saved[k] != wanted[k]]
    if diffs:
        raise CheckpointError(f"phase-1 checkpoint incompatible with config: {', '.join(sorted(diffs))}")
    if init.phase != "local":
        raise CheckpointError(f"expected a phase-1 checkpoint, got phase {init.phase!r}")


def adapt_step(adapter, e_src, verb, noun, e_tgt, weights, coeff):
    """Forward + losses for one source/target mini-batch pair."""
    e = torch.cat([e_src, e_tgt])
    domains = torch.cat([torch.full((len(e_src),), SOURCE), torch.full((len(e_tgt),), TARGET)])
    out = adapter(e, domains, coeff)
    pred = out["pred"]
    src = slice(0, len(e_src))
    src_pred = type(pred)(pred.verb_logits[src], pred.noun_logits[src])
    ly_v, ly_n = classification_loss(src_pred, verb, noun, domains[src])
    ae_v, ae_n = attentive_entropy(pred, out["video_domain_probs"])
    parts = LossBreakdown(ly_v, ly_n, out["L_sd"], out["L_rd"], out["L_td"], ae_v, ae_n)
    total_loss(parts, weights)
    return parts


def train_adapt(manifest, init, cfg, out=None):
    """Phase 2: frozen extractor, adversarial adaptation stack.

    ``init`` is a phase-1 :class:`Checkpoint` or a path to one.
    """
    if isinstance(init, str):
        init = load_checkpoint(init)
    _check_compatible(init, cfg)
    tc = cfg.train
    model = VideoModel(cfg, phase="adapt")
    model.extractor.load_state_dict(init.model.extractor.state_dict())
    for p in model.extractor.parameters():
        p.requires_grad_(False)
    frozen_hash = state_hash(model.extractor_state())

    src_ids = manifest.ids("source", "train")
    tgt_ids = manifest.ids("target", "train")
    if not src_ids or not tgt_ids:
        raise DataError("phase 2 needs source and target training clips")
    src_clips = [load_clip(manifest, c) for c in src_ids]
    verbs = torch.tensor([c.verb for c in src_clips])
    nouns = torch.tensor([c.noun for c in src_clips])
    del src_clips
    e_src = extract_features(model, manifest, src_ids)
    e_tgt = extract_features(model, manifest, tgt_ids)

    params = [p for p in model.adapter.parameters()]
    opt = torch.optim.SGD(params, lr=tc.lr_adapt, momentum=tc.momentum, weight_decay=tc.weight_decay)
    weights = tc.loss_weights()
    gen = torch.Generator().manual_seed(tc.seed + 1)
    log_path = None
    if out is not None:
        os.makedirs(out, exist_ok=True)
        log_path = os.path.join(out, LOG_NAME)
        open(log_path, "w").close()

    n_src, n_tgt, bs = len(src_ids), len(tgt_ids), tc.adapt_batch_size
    steps_per_epoch = math.ceil(n_src / bs)
    total_steps = max(steps_per_epoch * tc.epochs_adapt, 1)
    step = 0
    for epoch in range(1, tc.epochs_adapt + 1):
        lr = tc.adapt_lr(epoch)
        for g in opt.param_groups:
            g["lr"] = lr
        model.adapter.train()
        src_order = torch.randperm(n_src, generator=gen)
        tgt_order = torch.randperm(n_tgt, generator=gen)
        sums, count = {}, 0
        for k, start in enumerate(range(0, n_src, bs)):
            si = src_order[start:start + bs]
            ti = tgt_order[torch.arange(k * bs, k * bs + len(si)) % n_tgt]
            coeff = grl_coefficient(step / total_steps) if tc.grl_warmup else 1.0
            parts = adapt_step(model.adapter, e_src[si], verbs[si], nouns[si], e_tgt[ti], weights, coeff)
            opt.zero_grad()
            parts.total.backward()
            opt.step()
            _check_params(epoch, opt)
            step += 1
            count += 1
            for key, value in parts.as_dict().items():
                if isinstance(value, dict):
                    acc = sums.setdefault(key, {})
                    for n_, v in value.items():
                        acc[n_] = acc.get(n_, 0.0) + v
                else:
                    sums[key] = sums.get(key, 0.0) + value
        record = {}
        for key, value in sums.items():
            record[key] = {n_: v / count for n_, v in value.items()} if isinstance(value, dict) else value / count
        _check_finite(epoch, {k: v for k, v in record.items() if not isinstance(v, dict)})
        record.update(phase="adapt", epoch=epoch, lr=lr, grl_coeff=coeff)
        _append_log(log_path, record)
        log.info("adapt epoch %d: %s", epoch, record)

    if state_hash(model.extractor_state()) != frozen_hash:
        raise TrainingAbort(tc.epochs_adapt, "extractor", "extractor parameters changed during phase 2")
    model.eval()
    ckpt = Checkpoint(model, cfg, "adapt", tc.epochs_adapt, {"extractor_sha256": frozen_hash})
    if out is not None:
        save_checkpoint(ckpt, out)
    return ckpt


@torch.no_grad()
def predict(ckpt, manifest, clip_ids, chunk=32):
    """Verb and noun logits for ``clip_ids``."""
    model = ckpt.model
    model.eval()
    e = extract_features(model, manifest, clip_ids, chunk)
    pred = model.classify_features(e)
    return pred.verb_logits, pred.noun_logits


def evaluate(ckpt, manifest, split="target/val"):
    """Top-1/top-5 verb, noun and action accuracy on ``split``."""
    if isinstance(ckpt, str):
        ckpt = load_checkpoint(ckpt)
    ids = _split_ids(manifest, split)
    pairs = [load_clip(manifest, c).eval_labels() for c in ids]
    verb_logits, noun_logits = predict(ckpt, manifest, ids)
    return accuracy_report(
        verb_logits.numpy(),
        noun_logits.numpy(),
        [p[0] for p in pairs],
        [p[1] for p in pairs],
        counts={split: len(ids)},
    )
