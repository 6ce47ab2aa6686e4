"""Two-stream glance / select / focus feature extraction and feature fusion.

The spatial stream sees RGB frames, the temporal stream sees 2-channel flow
frames.  Each stream has a glancer (cheap conv net giving a coarse map), a
policy (coarse map -> patch centre in [0, 1]^2), a focuser (patch -> local
vector) and a global encoder (whole frame -> global vector).  Global features
can instead be ingested from precomputed ``.feat`` files.
"""

import os
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from patchda.container import read_header
from patchda.errors import DataError, IngestionError, InvalidConfigError, InvalidInputError
from patchda.sampler import PatchSpec, crop_patches

STREAMS = ("spatial", "temporal")
STREAM_CHANNELS = {"spatial": 3, "temporal": 2}
STREAM_MODALITY = {"spatial": "rgb", "temporal": "flow"}

FUSION_ORDER = ("spatial_global", "spatial_local", "temporal_global", "temporal_local", "audio")
GLOBAL_ONLY_ORDER = ("spatial_global", "temporal_global", "audio")


@dataclass
class ModelConfig:
    """Architecture knobs for the extractor and the adaptation stack."""

    frame_size: int = 64
    patch_size: int = 24
    num_segments: int = 6
    glance_frames: int = 6
    use_local: bool = True
    glancer_widths: tuple = (8, 16, 16)
    focuser_widths: tuple = (16, 16, 32, 32)
    global_widths: tuple = (16, 32, 32, 64)
    global_downsample: int = 2
    pooling: str = "max"
    policy_temperature: float = 0.05
    policy_stop_grad: bool = True
    global_source: str = "encode"
    ingest_dir: str = ""
    global_dim: int = 64
    audio_dim: int = 16
    flow_scale: float = 3.0
    feat_dim: int = 512
    relation_hidden: int = 256
    max_tuples: int = 3
    num_verbs: int = 4
    num_nouns: int = 4

    def __post_init__(self):
        for key in ("glancer_widths", "focuser_widths", "global_widths"):
            setattr(self, key, tuple(int(w) for w in getattr(self, key)))
        self.validate()

    def validate(self):
        if not 1 <= self.patch_size <= self.frame_size:
            raise InvalidConfigError("patch_size must fit inside the frame")
        if self.num_segments < 2:
            raise InvalidConfigError("num_segments must be >= 2")
        if not 1 <= self.glance_frames <= self.num_segments:
            raise InvalidConfigError("glance_frames must be in 1..num_segments")
        if not self.policy_temperature > 0:
            raise InvalidConfigError("policy_temperature must be positive")
        if self.pooling not in ("max", "avg"):
            raise InvalidConfigError("pooling must be 'max' or 'avg'")
        if self.global_source not in ("encode", "ingest"):
            raise InvalidConfigError("global_source must be 'encode' or 'ingest'")
        if self.global_source == "ingest" and not self.ingest_dir:
            raise InvalidConfigError("global_source='ingest' needs ingest_dir")
        if len(self.glancer_widths) != 3:
            raise InvalidConfigError("glancer has exactly 3 conv blocks")
        if len(self.focuser_widths) != 4 or len(self.global_widths) != 4:
            raise InvalidConfigError("focuser and global encoder have exactly 4 conv blocks")
        if self.frame_size % 8:
            raise InvalidConfigError("frame_size must be divisible by 8")
        if self.global_source == "encode" and self.global_dim != self.global_widths[-1]:
            raise InvalidConfigError("global_dim must equal the last global encoder width")
        if self.feat_dim < 4:
            raise InvalidConfigError("feat_dim must be >= 4")

    @property
    def local_dim(self):
        return self.focuser_widths[-1]

    @property
    def coarse_size(self):
        return self.frame_size // 8

    def block_dims(self):
        dims = {
            "spatial_global": self.global_dim,
            "spatial_local": self.local_dim,
            "temporal_global": self.global_dim,
            "temporal_local": self.local_dim,
            "audio": self.audio_dim,
        }
        return {k: dims[k] for k in self.fusion_order()}

    def fusion_order(self):
        return FUSION_ORDER if self.use_local else GLOBAL_ONLY_ORDER

    @property
    def fused_dim(self):
        return sum(self.block_dims().values())


def spatial_pool(x, mode):
    return x.amax(dim=(2, 3)) if mode == "max" else x.mean(dim=(2, 3))


def conv_block(cin, cout, stride):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class Glancer(nn.Module):
    """Three stride-2 conv blocks: ``C x H x W`` frame -> ``C_g x H/8 x W/8`` map."""

    def __init__(self, in_ch, widths):
        super().__init__()
        chans = (in_ch,) + tuple(widths)
        self.body = nn.Sequential(*[conv_block(a, b, 2) for a, b in zip(chans[:-1], chans[1:])])

    def forward(self, x):
        return self.body(x)


class Policy(nn.Module):
    """Coarse map -> patch centre via a spatial soft-argmax.

    A 1x1 conv scores every coarse cell; the centre is the softmax-weighted
    mean of cell centres, which lies in ``[0, 1]^2`` by construction.
    """

    def __init__(self, in_ch, temperature=1.0):
        super().__init__()
        self.score = nn.Conv2d(in_ch, 1, 1)
        self.temperature = temperature
        # start from the mean channel response: strongly activated cells win
        nn.init.constant_(self.score.weight, 1.0 / in_ch)
        nn.init.zeros_(self.score.bias)

    def forward(self, coarse):
        n, _, h, w = coarse.shape
        scores = self.score(coarse).reshape(n, h * w) / self.temperature
        weights = scores.softmax(-1).reshape(n, h, w)
        xs = (torch.arange(w, dtype=coarse.dtype) + 0.5) / w
        ys = (torch.arange(h, dtype=coarse.dtype) + 0.5) / h
        cx = (weights.sum(1) * xs).sum(-1)
        cy = (weights.sum(2) * ys).sum(-1)
        return cx, cy


class Focuser(nn.Module):
    """Four conv blocks over a ``P x P`` patch, spatially pooled."""

    def __init__(self, in_ch, widths, patch_size, pooling="max"):
        super().__init__()
        self.pooling = pooling
        self.in_ch = in_ch
        self.patch_size = patch_size
        chans = (in_ch,) + tuple(widths)
        strides = (1, 2, 2, 2)
        self.body = nn.Sequential(*[conv_block(a, b, s) for a, b, s in zip(chans[:-1], chans[1:], strides)])

    def forward(self, patches):
        if patches.shape[1:] != (self.in_ch, self.patch_size, self.patch_size):
            raise InvalidInputError(
                f"focuser expects {self.in_ch}x{self.patch_size}x{self.patch_size} patches, got {tuple(patches.shape[1:])}"
            )
        return spatial_pool(self.body(patches), self.pooling)


class GlobalEncoder(nn.Module):
    """Downsampled whole-frame encoder: four stride-2 conv blocks, spatially pooled."""

    def __init__(self, in_ch, widths, downsample, pooling="max"):
        super().__init__()
        self.pooling = pooling
        self.downsample = downsample
        chans = (in_ch,) + tuple(widths)
        self.body = nn.Sequential(*[conv_block(a, b, 2) for a, b in zip(chans[:-1], chans[1:])])

    def forward(self, frames):
        if self.downsample > 1:
            frames = F.avg_pool2d(frames, self.downsample)
        return spatial_pool(self.body(frames), self.pooling)


class StreamNetworks(nn.Module):
    def __init__(self, in_ch, cfg):
        super().__init__()
        self.in_ch = in_ch
        if cfg.use_local:
            self.glancer = Glancer(in_ch, cfg.glancer_widths)
            self.policy = Policy(cfg.glancer_widths[-1], cfg.policy_temperature)
            self.focuser = Focuser(in_ch, cfg.focuser_widths, cfg.patch_size, cfg.pooling)
        if cfg.global_source == "encode":
            self.global_encoder = GlobalEncoder(in_ch, cfg.global_widths, cfg.global_downsample, cfg.pooling)


def segment_indices(total, count):
    """``count`` uniformly spaced frame indices out of ``total``."""
    if count > total:
        raise InvalidInputError(f"cannot sample {count} segments from {total} frames")
    return [int((k + 0.5) * total / count) for k in range(count)]


def nearest_glance_map(num_segments, glance_frames):
    """For every focuser segment, the index of the temporally nearest glanced one."""
    glanced = segment_indices(num_segments, glance_frames)
    return [int(np.argmin([abs(s - g) for g in glanced])) for s in range(num_segments)], glanced


@dataclass
class SegmentFeatures:
    """Fused per-segment features with the offsets of each block."""

    e: torch.Tensor
    offsets: dict
    patches: dict = field(default_factory=dict)
    coarse: dict = field(default_factory=dict)

    def block(self, name):
        start, stop = self.offsets[name]
        return self.e[..., start:stop]


def fuse(blocks, order=FUSION_ORDER):
    """Concatenate feature blocks per segment in a fixed order.

    Each block is ``B x T x D_k``; a ``B x D_k`` block (the clip-level audio
    vector) is broadcast to every segment.  Missing or unexpected blocks are
    rejected rather than zero-filled.
    """
    missing = [k for k in order if blocks.get(k) is None]
    if missing:
        raise InvalidInputError(f"missing feature blocks: {missing}")
    extra = sorted(set(blocks) - set(order))
    if extra:
        raise InvalidInputError(f"unexpected feature blocks: {extra}")
    t = max(blocks[k].shape[1] for k in order if blocks[k].dim() == 3)
    parts, offsets, start = [], {}, 0
    for k in order:
        block = blocks[k]
        if block.dim() == 2:
            block = block.unsqueeze(1).expand(-1, t, -1)
        if block.shape[1] != t:
            raise InvalidInputError(f"block {k} has {block.shape[1]} segments, expected {t}")
        parts.append(block)
        offsets[k] = (start, start + block.shape[-1])
        start += block.shape[-1]
    return SegmentFeatures(torch.cat(parts, dim=-1), offsets)


def read_features(path, clip_id):
    """Read a precomputed-feature file; returns a ``T x D`` float32 array."""
    try:
        header, payload = read_header(path)
    except DataError as exc:
        raise IngestionError(clip_id, str(exc)) from exc
    try:
        t, d = int(header["T"]), int(header["D"])
    except (KeyError, TypeError, ValueError):
        raise IngestionError(clip_id, f"header lacks integer T/D: {header!r}") from None
    if header.get("clip_id") != clip_id:
        raise IngestionError(clip_id, f"header names clip {header.get('clip_id')!r}")
    if len(payload) != t * d * 4:
        raise IngestionError(clip_id, f"payload holds {len(payload) // 4} values, header declares {t}x{d}")
    arr = np.frombuffer(payload, dtype="<f4").reshape(t, d).astype(np.float32)
    if not np.isfinite(arr).all():
        raise IngestionError(clip_id, "non-finite feature values")
    return arr


class FeatureStore:
    """Precomputed per-clip features: ``<dir>/<clip_id>.<modality>.feat``."""

    def __init__(self, directory):
        if not os.path.isdir(directory):
            raise DataError(f"feature directory {directory} does not exist")
        self.directory = directory

    def path(self, clip_id, modality):
        return os.path.join(self.directory, f"{clip_id}.{modality}.feat")

    def load_precomputed(self, clip_id, modality, num_segments=None, dim=None):
        path = self.path(clip_id, modality)
        if not os.path.exists(path):
            raise IngestionError(clip_id, f"missing feature file {os.path.basename(path)}")
        arr = read_features(path, clip_id)
        if num_segments is not None and arr.shape[0] != num_segments:
            raise IngestionError(clip_id, f"{modality}: T={arr.shape[0]}, config expects {num_segments}")
        if dim is not None and arr.shape[1] != dim:
            raise IngestionError(clip_id, f"{modality}: D={arr.shape[1]}, config expects {dim}")
        return arr


class Extractor(nn.Module):
    """Both streams plus the fusion step; produces :class:`SegmentFeatures`."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.streams = nn.ModuleDict({s: StreamNetworks(STREAM_CHANNELS[s], cfg) for s in STREAMS})
        self.focus_to_glance, self.glance_idx = nearest_glance_map(cfg.num_segments, cfg.glance_frames)
        self._store = FeatureStore(cfg.ingest_dir) if cfg.global_source == "ingest" else None

    def _nets(self, stream):
        if stream not in self.streams:
            raise InvalidInputError(f"unknown stream {stream!r}")
        return self.streams[stream]

    def _check_frames(self, frames, stream):
        if frames.dim() != 4 or frames.shape[1] != STREAM_CHANNELS[stream]:
            raise InvalidInputError(
                f"{stream} stream expects N x {STREAM_CHANNELS[stream]} x H x W frames, got {tuple(frames.shape)}"
            )
        return frames / self.cfg.flow_scale if stream == "temporal" else frames

    def glance(self, frames, stream):
        """Coarse maps (N x C_g x H/8 x W/8) for N frames."""
        return self._nets(stream).glancer(self._check_frames(frames, stream))

    def select_patch(self, coarse, stream):
        cx, cy = self._nets(stream).policy(coarse)
        return PatchSpec(cx, cy, self.cfg.patch_size)

    def focus(self, patches, stream):
        if stream == "temporal":
            patches = patches / self.cfg.flow_scale
        return self._nets(stream).focuser(patches)

    def encode_global(self, frames, stream):
        return self._nets(stream).global_encoder(self._check_frames(frames, stream))

    def load_global(self, clip_ids, modality, dim):
        rows = [self._store.load_precomputed(c, modality, self.cfg.num_segments, dim) for c in clip_ids]
        return torch.from_numpy(np.stack(rows))

    def local_branch(self, frames, stream):
        """Glance at a subset of segments, crop, focus at all segments.

        ``frames`` is B x T x C x H x W; returns ``(local, spec, coarse)`` with
        local features B x T x D_L, ``spec`` holding B x T centres and the
        coarse maps B x T_g x C_g x h x w.
        """
        b, t = frames.shape[:2]
        glanced = frames[:, self.glance_idx].flatten(0, 1)
        coarse = self.glance(glanced, stream)
        # the glancer learns from its own classifier; the policy reads its map
        spec = self.select_patch(coarse.detach() if self.cfg.policy_stop_grad else coarse, stream)
        tg = len(self.glance_idx)
        to_focus = torch.tensor(self.focus_to_glance)
        cx = spec.cx.reshape(b, tg)[:, to_focus]
        cy = spec.cy.reshape(b, tg)[:, to_focus]
        patches = crop_patches(frames.flatten(0, 1), cx.reshape(-1), cy.reshape(-1), self.cfg.patch_size)
        local = self.focus(patches, stream).reshape(b, t, -1)
        return local, PatchSpec(cx, cy, self.cfg.patch_size), coarse.reshape(b, tg, *coarse.shape[1:])

    def forward(self, rgb, flow, audio, clip_ids=None):
        """Fused features for a batch: ``rgb`` B x T x 3 x H x W, ``flow`` B x T x 2 x H x W."""
        seg = segment_indices(rgb.shape[1], self.cfg.num_segments)
        inputs = {"spatial": rgb[:, seg], "temporal": flow[:, seg]}
        blocks, patches, coarse = {"audio": audio}, {}, {}
        for stream in STREAMS:
            frames = inputs[stream]
            b, t = frames.shape[:2]
            if self.cfg.global_source == "encode":
                blocks[f"{stream}_global"] = self.encode_global(frames.flatten(0, 1), stream).reshape(b, t, -1)
            else:
                if clip_ids is None:
                    raise InvalidInputError("ingested global features need clip ids")
                blocks[f"{stream}_global"] = self.load_global(clip_ids, STREAM_MODALITY[stream], self.cfg.global_dim)
            if self.cfg.use_local:
                blocks[f"{stream}_local"], patches[stream], coarse[stream] = self.local_branch(frames, stream)
        fused = fuse(blocks, self.cfg.fusion_order())
        fused.patches = patches
        fused.coarse = coarse
        return fused
