"""Patch visualisation and patch-vs-sprite localisation scores."""

import os

import numpy as np
import torch

from patchda.errors import DataError
from patchda.harness.metrics import box_iou
from patchda.harness.train import load_batch
from patchda.sampler import PatchSpec, crop_patches, window_origin
from patchda.streams import segment_indices


@torch.no_grad()
def selected_windows(ckpt, manifest, clip_ids, stream="spatial", chunk=32):
    """Clamped patch windows chosen by the policy.

    Returns ``{clip_id: [(frame_index, x0, y0, P), ...]}`` in pixel
    coordinates, one entry per segment.
    """
    model = ckpt.model
    model.eval()
    mcfg = model.extractor.cfg
    h = w = mcfg.frame_size
    modality = "rgb" if stream == "spatial" else "flow"
    out = {}
    for start in range(0, len(clip_ids), chunk):
        b = load_batch(manifest, clip_ids[start:start + chunk], labels=None)
        seg = segment_indices(b[modality].shape[1], mcfg.num_segments)
        _, spec, _ = model.extractor.local_branch(b[modality][:, seg], stream)
        x0, y0 = window_origin(spec, h, w)
        for k, cid in enumerate(b["clip_ids"]):
            out[cid] = [
                (seg[t], float(x0[k, t]), float(y0[k, t]), mcfg.patch_size) for t in range(len(seg))
            ]
    return out


def localisation_iou(ckpt, manifest, clip_ids, stream="spatial"):
    """Mean IoU between selected patches and the ground-truth sprite boxes."""
    windows = selected_windows(ckpt, manifest, clip_ids, stream)
    scores = []
    for cid, rows in windows.items():
        boxes = manifest.record(cid)["sprite_boxes"]
        scores.extend(box_iou((x0, y0, p, p), boxes[f]) for f, x0, y0, p in rows)
    return float(np.mean(scores))


def random_center_iou(manifest, clip_ids, patch_size, num_segments, draws=32, seed=0):
    """Mean IoU of uniformly random (then clamped) centres: the chance baseline."""
    rng = np.random.default_rng(seed)
    h = w = manifest.config.frame_size
    scores = []
    for cid in clip_ids:
        boxes = manifest.record(cid)["sprite_boxes"]
        for f in segment_indices(len(boxes), num_segments):
            for _ in range(draws):
                x0, y0 = window_origin(PatchSpec(rng.uniform(), rng.uniform(), patch_size), h, w)
                scores.append(box_iou((float(x0), float(y0), patch_size, patch_size), boxes[f]))
    return float(np.mean(scores))


def write_ppm(path, image):
    """Write a ``3 x H x W`` float image in [0, 1] as binary PPM."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0, 1)
    arr = (arr.transpose(1, 2, 0) * 255 + 0.5).astype(np.uint8)
    h, w = arr.shape[:2]
    try:
        with open(path, "wb") as fh:
            fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
            fh.write(arr.tobytes())
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def read_ppm(path):
    """Inverse of :func:`write_ppm`; returns ``3 x H x W`` floats."""
    with open(path, "rb") as fh:
        blob = fh.read()
    magic, dims, maxval, rest = blob.split(b"\n", 3)
    w, h = (int(v) for v in dims.split())
    arr = np.frombuffer(rest, dtype=np.uint8).reshape(h, w, 3)
    return arr.transpose(2, 0, 1).astype(np.float64) / int(maxval)


def draw_rectangle(image, x0, y0, size, color=(1.0, 0.0, 0.0)):
    """Outline the pixels covered by a ``size`` window starting at ``(x0, y0)``."""
    img = np.array(image, dtype=np.float64, copy=True)
    _, h, w = img.shape
    left, top = int(round(x0)), int(round(y0))
    right, bottom = min(left + size - 1, w - 1), min(top + size - 1, h - 1)
    col = np.asarray(color)[:, None]
    img[:, top, left:right + 1] = col
    img[:, bottom, left:right + 1] = col
    img[:, top:bottom + 1, left] = col
    img[:, top:bottom + 1, right] = col
    return img


def visualize_patches(ckpt, manifest, clip_ids, out_dir):
    """Write ``<clip_id>_f<n>.ppm`` overlays and ``<clip_id>_f<n>_crop.ppm`` patches.

    Returns one record per written overlay with the rectangle geometry.
    """
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {out_dir}: {exc}") from exc
    windows = selected_windows(ckpt, manifest, clip_ids)
    records = []
    for cid in clip_ids:
        b = load_batch(manifest, [cid], labels=None)
        rgb = b["rgb"][0]
        for f, x0, y0, p in windows[cid]:
            frame = rgb[f].double()
            overlay = draw_rectangle(frame.numpy(), x0, y0, p)
            # recover the normalised centre from the clamped origin
            h, w = frame.shape[1:]
            cx = torch.tensor([(x0 + p / 2) / w], dtype=torch.float64)
            cy = torch.tensor([(y0 + p / 2) / h], dtype=torch.float64)
            crop = crop_patches(frame.unsqueeze(0), cx, cy, p)[0].numpy()
            overlay_path = os.path.join(out_dir, f"{cid}_f{f}.ppm")
            crop_path = os.path.join(out_dir, f"{cid}_f{f}_crop.ppm")
            write_ppm(overlay_path, overlay)
            write_ppm(crop_path, crop)
            records.append({"clip_id": cid, "frame": f, "x0": x0, "y0": y0, "size": p,
                            "overlay": overlay_path, "crop": crop_path})
    return records
