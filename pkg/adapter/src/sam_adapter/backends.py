"""Segmentation backends behind one small interface.

``ThresholdBackend`` is the built-in, dependency-light implementation:
automatic mask generation by intensity thresholding plus connected
components, run once on the full image (coarse level) and once per 2x2
crop (fine level), mirroring the multi-scale scheme of promptable
segmenters. The ``sam``/``sam2`` loaders wire in the real models when
their packages and checkpoints are present; they are never imported
otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .formats import AdapterError


@dataclass
class GeneratedMask:
    bitmap: np.ndarray  # bool (H, W)
    score: float
    granularity: str  # "coarse" | "fine"


class MaskBackend:
    """Automatic generation plus prompted per-frame segmentation."""

    def generate(self, rgb: np.ndarray) -> list[GeneratedMask]:
        raise NotImplementedError

    def segment_prompted(self, rgb: np.ndarray,
                         prompt_bitmap: np.ndarray) -> np.ndarray | None:
        """Mask for the prompted object in this frame; None if lost."""
        raise NotImplementedError


class ThresholdBackend(MaskBackend):
    def __init__(self, threshold: int = 96, min_area: int = 20):
        self.threshold = threshold
        self.min_area = min_area

    def _components(self, gray: np.ndarray) -> list[np.ndarray]:
        binary = gray > self.threshold
        labels, count = ndimage.label(binary)
        out = []
        for i in range(1, count + 1):
            bitmap = labels == i
            if bitmap.sum() >= self.min_area:
                out.append(bitmap)
        return out

    @staticmethod
    def _solidity(bitmap: np.ndarray) -> float:
        ys, xs = np.nonzero(bitmap)
        box = (ys.max() - ys.min() + 1) * (xs.max() - xs.min() + 1)
        return float(bitmap.sum() / box)

    def generate(self, rgb):
        gray = np.asarray(rgb).mean(axis=2)
        h, w = gray.shape
        masks = [GeneratedMask(b, self._solidity(b), "coarse")
                 for b in self._components(gray)]
        # 2x2 crop sweep emulates the finer scale levels
        for y0, y1 in ((0, h // 2), (h // 2, h)):
            for x0, x1 in ((0, w // 2), (w // 2, w)):
                for local in self._components(gray[y0:y1, x0:x1]):
                    bitmap = np.zeros((h, w), dtype=bool)
                    bitmap[y0:y1, x0:x1] = local
                    masks.append(GeneratedMask(bitmap,
                                               0.9 * self._solidity(bitmap),
                                               "fine"))
        return masks

    def segment_prompted(self, rgb, prompt_bitmap):
        gray = np.asarray(rgb).mean(axis=2)
        best, best_inter = None, 0
        for bitmap in self._components(gray):
            inter = int(np.logical_and(bitmap, prompt_bitmap).sum())
            if inter > best_inter:
                best, best_inter = bitmap, inter
        return best


def load_backend(name: str, checkpoint: str | None = None,
                 device: str = "cpu") -> MaskBackend:
    if name == "threshold":
        return ThresholdBackend()
    if name == "sam":
        return _load_sam(checkpoint, device)
    if name == "sam2":
        return _load_sam2(checkpoint, device)
    raise AdapterError(f"unknown backend {name!r}")


def _load_sam(checkpoint, device):
    if checkpoint is None:
        raise AdapterError("the sam backend requires --checkpoint")
    try:
        from segment_anything import (SamAutomaticMaskGenerator,
                                      SamPredictor, sam_model_registry)
    except ImportError as exc:
        raise AdapterError(
            "segment-anything is not installed; use --backend threshold "
            "or install the model package") from exc

    class SamBackend(MaskBackend):
        def __init__(self):
            model = sam_model_registry["vit_h"](checkpoint=checkpoint)
            model.to(device)
            self.generator = SamAutomaticMaskGenerator(model)
            self.predictor = SamPredictor(model)

        def generate(self, rgb):
            out = []
            for ann in self.generator.generate(np.asarray(rgb)):
                # crop_box spanning the full image marks the coarse level
                full = list(ann.get("crop_box", [])) == \
                    [0, 0, rgb.shape[1], rgb.shape[0]]
                out.append(GeneratedMask(ann["segmentation"].astype(bool),
                                         float(ann["predicted_iou"]),
                                         "coarse" if full else "fine"))
            return out

        def segment_prompted(self, rgb, prompt_bitmap):
            ys, xs = np.nonzero(prompt_bitmap)
            if not len(ys):
                return None
            self.predictor.set_image(np.asarray(rgb))
            box = np.array([xs.min(), ys.min(), xs.max(), ys.max()])
            masks, scores, _ = self.predictor.predict(box=box)
            return masks[int(np.argmax(scores))].astype(bool)

    return SamBackend()


def _load_sam2(checkpoint, device):
    if checkpoint is None:
        raise AdapterError("the sam2 backend requires --checkpoint")
    try:
        from sam2.build_sam import build_sam2_video_predictor  # noqa: F401
    except ImportError as exc:
        raise AdapterError(
            "sam2 is not installed; use --backend threshold or install "
            "the model package") from exc
    raise AdapterError(
        "sam2 video propagation requires frame directories prepared by the "
        "model package; wire build_sam2_video_predictor here with a local "
        "checkpoint")
