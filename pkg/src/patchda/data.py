"""Synthetic two-domain "moving sprites" videos and the on-disk dataset layout.

Every clip shows one sprite whose *shape* is the noun and whose *motion
direction* is the verb, moving over a domain-styled background that also holds
distractor objects drawn from shapes outside the noun vocabulary.  Domains
differ only in background palette/texture, brightness, distractor count,
noise and the audio mean offset; sprite semantics are shared.

Layout::

    root/manifest.json
    root/{source,target}/{train,val}/<clip_id>.{rgb,flow}.bin
    root/audio/<clip_id>.audio.bin
"""

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from patchda.container import read_array, write_array
from patchda.errors import DataError, InvalidConfigError, LabelAccessError

DOMAINS = ("source", "target")
SPLITS = ("train", "val")

VERB_NAMES = ("left", "right", "up", "down")
NOUN_NAMES = ("square", "disk", "triangle", "plus")
DISTRACTOR_NAMES = ("ring", "frame", "hbar", "vbar")
_VERB_DIRECTIONS = ((-1, 0), (1, 0), (0, -1), (0, 1))

# (base, accent) background colours per palette id
PALETTES = (
    ((0.20, 0.35, 0.25), (0.30, 0.45, 0.30)),
    ((0.45, 0.30, 0.35), (0.55, 0.40, 0.25)),
    ((0.25, 0.25, 0.45), (0.35, 0.30, 0.55)),
    ((0.40, 0.40, 0.35), (0.50, 0.48, 0.40)),
)
TEXTURES = ("stripes", "checker", "blobs", "flat")


@dataclass
class DomainStyle:
    palette: int = 0
    texture: str = "stripes"
    brightness: float = 0.0
    distractors: int = 2
    pixel_noise: float = 0.02
    flow_noise: float = 0.05


def _default_target_style():
    return DomainStyle(palette=1, texture="checker", brightness=0.15, distractors=3, pixel_noise=0.05, flow_noise=0.1)


@dataclass
class DatasetConfig:
    num_verbs: int = 4
    num_nouns: int = 4
    train_clips: int = 200
    val_clips: int = 100
    num_frames: int = 6
    frame_size: int = 64
    sprite_size: int = 16
    speed: int = 3
    audio_dim: int = 16
    audio_class_sep: float = 1.0
    audio_noise_std: float = 2.0
    audio_domain_shift: float = 3.0
    source: DomainStyle = field(default_factory=DomainStyle)
    target: DomainStyle = field(default_factory=_default_target_style)
    seed: int = 7

    def __post_init__(self):
        for key in ("source", "target"):
            value = getattr(self, key)
            if isinstance(value, dict):
                setattr(self, key, style_from_dict(value))
        self.validate()

    def validate(self):
        if not 1 <= self.num_verbs <= len(VERB_NAMES):
            raise InvalidConfigError(f"num_verbs must be in 1..{len(VERB_NAMES)}")
        if not 1 <= self.num_nouns <= len(NOUN_NAMES):
            raise InvalidConfigError(f"num_nouns must be in 1..{len(NOUN_NAMES)}")
        for name in ("train_clips", "val_clips", "audio_dim", "sprite_size"):
            if getattr(self, name) < 1:
                raise InvalidConfigError(f"{name} must be >= 1")
        if self.num_frames < 2:
            raise InvalidConfigError("num_frames must be >= 2")
        if self.speed < 0:
            raise InvalidConfigError("speed must be >= 0")
        travel = self.sprite_size + self.speed * (self.num_frames - 1)
        if travel > self.frame_size:
            raise InvalidConfigError("sprite cannot stay inside the frame for the whole clip")
        if 2 * self.audio_class_sep > self.audio_noise_std + 1e-12:
            raise InvalidConfigError("audio_noise_std must be at least twice audio_class_sep")
        for style in (self.source, self.target):
            if style.texture not in TEXTURES:
                raise InvalidConfigError(f"unknown texture {style.texture!r}")
            if not 0 <= style.palette < len(PALETTES):
                raise InvalidConfigError(f"unknown palette {style.palette}")
            if style.distractors < 0:
                raise InvalidConfigError("distractors must be >= 0")

    def to_dict(self):
        return asdict(self)


def style_from_dict(d):
    known = {f.name for f in fields(DomainStyle)}
    unknown = set(d) - known
    if unknown:
        raise InvalidConfigError(f"unknown domain style keys: {sorted(unknown)}")
    return DomainStyle(**d)


def config_from_dict(d):
    known = {f.name for f in fields(DatasetConfig)}
    unknown = set(d) - known
    if unknown:
        raise InvalidConfigError(f"unknown dataset config keys: {sorted(unknown)}")
    return DatasetConfig(**d)


def shape_mask(name, size):
    """Boolean ``size x size`` silhouette for a sprite or distractor shape."""
    c = (size - 1) / 2.0
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    r = size / 2.0
    t = max(size // 4, 1)
    if name == "square":
        m = np.zeros((size, size), bool)
        m[1:-1, 1:-1] = True
        return m if size > 2 else np.ones((size, size), bool)
    if name == "disk":
        return (xx - c) ** 2 + (yy - c) ** 2 <= (r - 0.5) ** 2
    if name == "triangle":
        # apex at the top, base along the bottom row
        half = (yy + 1) / size * r
        return np.abs(xx - c) <= half
    if name == "plus":
        return (np.abs(xx - c) < t / 2 + 0.5) | (np.abs(yy - c) < t / 2 + 0.5)
    if name == "ring":
        d = (xx - c) ** 2 + (yy - c) ** 2
        return (d <= (r - 0.5) ** 2) & (d >= (r - 0.5 - t) ** 2)
    if name == "frame":
        m = np.ones((size, size), bool)
        m[t:-t, t:-t] = False
        return m
    if name == "hbar":
        return np.abs(yy - c) < t / 2 + 0.5
    if name == "vbar":
        return np.abs(xx - c) < t / 2 + 0.5
    raise ValueError(f"unknown shape {name!r}")


def _background(style, size, rng):
    base, accent = (np.array(c, dtype=np.float64) for c in PALETTES[style.palette])
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    phase = rng.uniform(0, 8)
    if style.texture == "stripes":
        mix = (((xx + yy + phase) // 4) % 2).astype(np.float64)
    elif style.texture == "checker":
        mix = (((xx + phase) // 8 + (yy + phase) // 8) % 2).astype(np.float64)
    elif style.texture == "blobs":
        mix = np.zeros((size, size))
        for _ in range(4):
            cx, cy, s = rng.uniform(0, size), rng.uniform(0, size), rng.uniform(4, 10)
            mix += np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * s * s))
        mix = np.clip(mix, 0, 1)
    else:
        mix = np.zeros((size, size))
    img = base[:, None, None] * (1 - mix) + accent[:, None, None] * mix
    return img + style.brightness


def _sprite_color(rng):
    # saturated colours, shared by both domains
    hue = rng.uniform(0, 1)
    k = (np.array([5.0, 3.0, 1.0]) + hue * 6) % 6
    rgb = 1 - np.clip(np.minimum(k, 4 - k), 0, 1)
    return 0.35 + 0.65 * rgb


def _audio_means(cfg):
    d = cfg.audio_dim
    verb_means = np.zeros((cfg.num_verbs, d))
    noun_means = np.zeros((cfg.num_nouns, d))
    scale = cfg.audio_class_sep / np.sqrt(2.0)
    for v in range(cfg.num_verbs):
        verb_means[v, v % d] = scale
    for n in range(cfg.num_nouns):
        noun_means[n, (cfg.num_verbs + n) % d] = scale
    direction = np.random.default_rng([cfg.seed, 999]).normal(size=d)
    shift = cfg.audio_domain_shift * direction / np.linalg.norm(direction)
    return verb_means, noun_means, shift


def render_clip(cfg, domain, verb, noun, rng):
    """Render one clip; returns ``(rgb, flow, audio, sprite_boxes)``.

    ``rgb`` is T x 3 x H x W in [0, 1], ``flow`` T x 2 x H x W holding the
    forward displacement (dx, dy) in pixels, ``sprite_boxes`` a list of
    ``[x, y, w, h]`` per frame.
    """
    style = cfg.source if domain == "source" else cfg.target
    T, H, S = cfg.num_frames, cfg.frame_size, cfg.sprite_size
    bg = _background(style, H, rng)

    objects = []
    for _ in range(style.distractors):
        shape = DISTRACTOR_NAMES[rng.integers(len(DISTRACTOR_NAMES))]
        vel = rng.integers(-1, 2, size=2) * int(rng.integers(0, 3))
        lo = np.maximum(0, -vel * (T - 1))
        hi = np.minimum(H - S, H - S - vel * (T - 1))
        if (hi < lo).any():
            vel = np.zeros(2, dtype=np.int64)
            lo, hi = np.zeros(2), np.full(2, H - S)
        pos = np.array([rng.integers(lo[0], hi[0] + 1), rng.integers(lo[1], hi[1] + 1)])
        # palette accent rescaled to a common peak level so distractors are
        # equally conspicuous in every domain
        accent = np.array(PALETTES[style.palette][1])
        color = np.clip(accent / accent.max() * rng.uniform(0.75, 0.95) + style.brightness, 0, 1)
        objects.append((shape_mask(shape, S), color, pos, vel))

    direction = np.array(_VERB_DIRECTIONS[verb]) * cfg.speed
    lo = np.maximum(0, -direction * (T - 1))
    hi = np.minimum(H - S, H - S - direction * (T - 1))
    sprite_pos = np.array([rng.integers(lo[0], hi[0] + 1), rng.integers(lo[1], hi[1] + 1)])
    objects.append((shape_mask(NOUN_NAMES[noun], S), _sprite_color(rng), sprite_pos, direction))

    rgb = np.empty((T, 3, H, H))
    flow = np.zeros((T, 2, H, H))
    boxes = []
    for t in range(T):
        frame = bg.copy()
        for mask, color, pos, vel in objects:
            x, y = pos + vel * t
            region = (slice(None), slice(y, y + S), slice(x, x + S))
            frame[region] = np.where(mask, color[:, None, None], frame[region])
            flow[t][region] = np.where(mask, vel[:, None, None].astype(np.float64), flow[t][region])
        rgb[t] = frame
        x, y = sprite_pos + direction * t
        boxes.append([int(x), int(y), S, S])
    if style.pixel_noise > 0:
        rgb += rng.normal(0, style.pixel_noise, size=rgb.shape)
    if style.flow_noise > 0:
        flow += rng.normal(0, style.flow_noise, size=flow.shape)
    rgb = np.clip(rgb, 0, 1)

    verb_means, noun_means, shift = _audio_means(cfg)
    audio = verb_means[verb] + noun_means[noun] + rng.normal(0, cfg.audio_noise_std, size=cfg.audio_dim)
    if domain == "target":
        audio = audio + shift
    return rgb.astype(np.float32), flow.astype(np.float32), audio.astype(np.float32), boxes


def clip_id_for(domain, split, index):
    return f"{domain}-{split}-{index:05d}"


def generate(cfg, root):
    """Write the dataset under ``root`` and return its :class:`DatasetManifest`."""
    try:
        os.makedirs(os.path.join(root, "audio"), exist_ok=True)
        for d in DOMAINS:
            for s in SPLITS:
                os.makedirs(os.path.join(root, d, s), exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create dataset directory {root}: {exc}") from exc

    records = []
    for di, domain in enumerate(DOMAINS):
        for si, split in enumerate(SPLITS):
            count = cfg.train_clips if split == "train" else cfg.val_clips
            for i in range(count):
                rng = np.random.default_rng([cfg.seed, di, si, i])
                verb = int(rng.integers(cfg.num_verbs))
                noun = int(rng.integers(cfg.num_nouns))
                rgb, flow, audio, boxes = render_clip(cfg, domain, verb, noun, rng)
                cid = clip_id_for(domain, split, i)
                files = {
                    "rgb": f"{domain}/{split}/{cid}.rgb.bin",
                    "flow": f"{domain}/{split}/{cid}.flow.bin",
                    "audio": f"audio/{cid}.audio.bin",
                }
                write_array(os.path.join(root, files["rgb"]), rgb, cid)
                write_array(os.path.join(root, files["flow"]), flow, cid)
                write_array(os.path.join(root, files["audio"]), audio, cid)
                records.append(
                    {
                        "clip_id": cid,
                        "domain": domain,
                        "split": split,
                        "verb": verb,
                        "noun": noun,
                        "files": files,
                        "sprite_boxes": boxes,
                    }
                )
    manifest = DatasetManifest(root, cfg, records)
    manifest.save()
    return manifest


@dataclass
class Clip:
    """One loaded clip.  Target-domain labels sit behind :meth:`eval_labels`."""

    clip_id: str
    domain: str
    split: str
    rgb: np.ndarray
    flow: np.ndarray
    audio: np.ndarray
    sprite_boxes: list
    _verb: int = field(repr=False, default=-1)
    _noun: int = field(repr=False, default=-1)

    @property
    def verb(self):
        if self.domain != "source":
            raise LabelAccessError(f"{self.clip_id}: target labels are evaluation-only")
        return self._verb

    @property
    def noun(self):
        if self.domain != "source":
            raise LabelAccessError(f"{self.clip_id}: target labels are evaluation-only")
        return self._noun

    def eval_labels(self):
        """``(verb, noun)`` for evaluation; never call from a training loop."""
        return self._verb, self._noun


class DatasetManifest:
    def __init__(self, root, config, records):
        self.root = root
        self.config = config
        self.records = list(records)
        self._by_id = {}
        for rec in self.records:
            if rec["clip_id"] in self._by_id:
                raise DataError(f"duplicate clip id {rec['clip_id']}")
            self._by_id[rec["clip_id"]] = rec

    def save(self):
        path = os.path.join(self.root, "manifest.json")
        with open(path, "w") as fh:
            json.dump({"config": self.config.to_dict(), "clips": self.records}, fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, root):
        path = os.path.join(root, "manifest.json")
        try:
            with open(path) as fh:
                blob = json.load(fh)
        except FileNotFoundError as exc:
            raise DataError(f"no manifest at {path}") from exc
        except json.JSONDecodeError as exc:
            raise DataError(f"corrupt manifest {path}: {exc}") from exc
        return cls(root, config_from_dict(blob["config"]), blob["clips"])

    def record(self, clip_id):
        try:
            return self._by_id[clip_id]
        except KeyError:
            raise DataError(f"unknown clip id {clip_id!r}") from None

    def ids(self, domain, split):
        return [r["clip_id"] for r in self.records if r["domain"] == domain and r["split"] == split]


def load_clip(manifest, clip_id):
    """Load and validate one clip's arrays."""
    rec = manifest.record(clip_id)
    cfg = manifest.config
    T, H = cfg.num_frames, cfg.frame_size
    expected = {"rgb": (T, 3, H, H), "flow": (T, 2, H, H), "audio": (cfg.audio_dim,)}
    arrays = {}
    for key, shape in expected.items():
        path = os.path.join(manifest.root, rec["files"][key])
        try:
            header, arr = read_array(path)
        except DataError as exc:
            raise DataError(f"{clip_id}: {exc}") from exc
        if header.get("clip_id") != clip_id:
            raise DataError(f"{clip_id}: {key} file belongs to {header.get('clip_id')!r}")
        if arr.shape != shape:
            raise DataError(f"{clip_id}: {key} has shape {arr.shape}, expected {shape}")
        if not np.isfinite(arr).all():
            raise DataError(f"{clip_id}: {key} contains non-finite values")
        arrays[key] = arr
    return Clip(
        clip_id=clip_id,
        domain=rec["domain"],
        split=rec["split"],
        rgb=arrays["rgb"],
        flow=arrays["flow"],
        audio=arrays["audio"],
        sprite_boxes=rec["sprite_boxes"],
        _verb=rec["verb"],
        _noun=rec["noun"],
    )


def dataset_hash(root):
    """SHA-256 over every file in the dataset, in sorted path order."""
    h = hashlib.sha256()
    for dirpath, _, filenames in sorted(os.walk(root)):
        for name in sorted(filenames):
            path = os.path.join(dirpath, name)
            h.update(os.path.relpath(path, root).encode())
            with open(path, "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()


def ingest_features(directory):
    """Open a directory of ``<clip_id>.<modality>.feat`` files for global features.

    Validation (header vs payload, dims, finiteness) happens per read in
    :meth:`patchda.streams.FeatureStore.load_precomputed`.
    """
    from patchda.streams import FeatureStore

    return FeatureStore(directory)
