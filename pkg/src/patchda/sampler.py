"""Differentiable bilinear sampling and continuous-centre patch cropping.

Images are ``C x H x W`` tensors (a leading batch axis is accepted by the
batched variants).  Points are ``(x, y)`` in pixel-index coordinates, i.e.
pixel ``(i, j)`` sits at ``x = j, y = i``.  Everything is written with plain
tensor ops so autograd gives gradients with respect to both pixel values and
sample coordinates.
"""

from dataclasses import dataclass

import torch

from patchda.errors import InvalidConfigError, InvalidInputError


@dataclass(frozen=True)
class PatchSpec:
    """Normalised patch centre plus a fixed side length in pixels.

    ``cx`` and ``cy`` may be Python floats or tensors (scalar, or shape ``(N,)``
    for a batch); tensors keep the autograd graph back to the policy.
    """

    cx: object
    cy: object
    size_px: int


def check_image(image, batched=False):
    ndim = 4 if batched else 3
    if not torch.is_tensor(image) or image.dim() != ndim:
        raise InvalidInputError(f"expected a {ndim}-d image tensor, got {getattr(image, 'shape', type(image))}")
    if image.shape[-1] < 2 or image.shape[-2] < 2:
        raise InvalidInputError(f"image must be at least 2x2, got {tuple(image.shape[-2:])}")
    return image


def bilinear_sample_batch(images, points):
    """Sample ``images`` (N,C,H,W) at ``points`` (N,K,2); returns (N,K,C).

    Coordinates are clamped to the frame before lookup.
    """
    check_image(images, batched=True)
    if points.dim() != 3 or points.shape[-1] != 2 or points.shape[0] != images.shape[0]:
        raise InvalidInputError(f"points must be N x K x 2, got {tuple(points.shape)}")
    if not torch.isfinite(points).all():
        raise InvalidInputError("sample coordinates must be finite")
    n, c, h, w = images.shape
    points = points.to(images.dtype)
    x = points[..., 0].clamp(0, w - 1)
    y = points[..., 1].clamp(0, h - 1)

    # floor is detached; the fractional weights carry the coordinate gradient
    x0 = torch.floor(x.detach()).clamp(0, w - 2)
    y0 = torch.floor(y.detach()).clamp(0, h - 2)
    wx = (x - x0).unsqueeze(1)
    wy = (y - y0).unsqueeze(1)
    x0 = x0.long()
    y0 = y0.long()

    flat = images.reshape(n, c, h * w)

    def gather(yi, xi):
        idx = (yi * w + xi).unsqueeze(1).expand(n, c, -1)
        return torch.gather(flat, 2, idx)

    v00 = gather(y0, x0)
    v01 = gather(y0, x0 + 1)
    v10 = gather(y0 + 1, x0)
    v11 = gather(y0 + 1, x0 + 1)
    top = v00 + (v01 - v00) * wx
    bottom = v10 + (v11 - v10) * wx
    out = top + (bottom - top) * wy
    return out.transpose(1, 2)


def bilinear_sample(image, points):
    """Sample a single ``C x H x W`` image at ``K`` points; returns ``K x C``."""
    check_image(image)
    points = torch.as_tensor(points, dtype=image.dtype)
    if points.dim() == 1:
        points = points.unsqueeze(0)
    return bilinear_sample_batch(image.unsqueeze(0), points.unsqueeze(0))[0]


def _check_size(size_px, h, w):
    if not 1 <= int(size_px) <= min(h, w):
        raise InvalidConfigError(f"patch size {size_px} does not fit a {h}x{w} frame")


def clamp_center(spec, h, w):
    """Clip the centre so the ``P x P`` window lies inside an ``H x W`` frame.

    The normalised centre maps to pixel-edge space as ``u = cx * W``; the window
    ``[u - P/2, u + P/2]`` must stay within ``[0, W]``.  Idempotent.
    """
    p = spec.size_px
    _check_size(p, h, w)
    ux = torch.as_tensor(spec.cx, dtype=torch.float64) if not torch.is_tensor(spec.cx) else spec.cx
    uy = torch.as_tensor(spec.cy, dtype=torch.float64) if not torch.is_tensor(spec.cy) else spec.cy
    ux = (ux * w).clamp(p / 2, w - p / 2)
    uy = (uy * h).clamp(p / 2, h - p / 2)
    cx, cy = ux / w, uy / h
    if not torch.is_tensor(spec.cx):
        cx, cy = float(cx), float(cy)
    return PatchSpec(cx, cy, p)


def window_origin(spec, h, w):
    """Top-left sample coordinate ``(x0, y0)`` of the clamped window."""
    s = clamp_center(spec, h, w)
    p = s.size_px
    return s.cx * w - p / 2, s.cy * h - p / 2


def patch_grid(x0, y0, size_px):
    """Sample coordinates for windows starting at ``(x0, y0)`` (shape ``(N,)``).

    Returns ``N x P*P x 2`` in row-major patch order.
    """
    offs = torch.arange(size_px, dtype=x0.dtype, device=x0.device)
    gy, gx = torch.meshgrid(offs, offs, indexing="ij")
    xs = x0[:, None] + gx.reshape(1, -1)
    ys = y0[:, None] + gy.reshape(1, -1)
    return torch.stack([xs, ys], dim=-1)


def crop_patches(images, cx, cy, size_px):
    """Batched crop: ``images`` (N,C,H,W), centres ``cx, cy`` of shape ``(N,)``.

    Returns ``N x C x P x P``; gradients flow to the images and the centres.
    """
    check_image(images, batched=True)
    n, c, h, w = images.shape
    _check_size(size_px, h, w)
    cx = torch.as_tensor(cx, dtype=images.dtype).reshape(n)
    cy = torch.as_tensor(cy, dtype=images.dtype).reshape(n)
    if not (torch.isfinite(cx).all() and torch.isfinite(cy).all()):
        raise InvalidInputError("patch centres must be finite")
    x0, y0 = window_origin(PatchSpec(cx, cy, size_px), h, w)
    values = bilinear_sample_batch(images, patch_grid(x0, y0, size_px))
    return values.transpose(1, 2).reshape(n, c, size_px, size_px)


def crop_patch(image, spec):
    """Crop a ``C x P x P`` patch from a single image."""
    check_image(image)
    cx = torch.as_tensor(spec.cx, dtype=image.dtype).reshape(1)
    cy = torch.as_tensor(spec.cy, dtype=image.dtype).reshape(1)
    return crop_patches(image.unsqueeze(0), cx, cy, spec.size_px)[0]
