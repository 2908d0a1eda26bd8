"""Image and mask loading plus mask-to-feature-grid alignment."""

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, ShapeError

# ImageNet preprocessing used by every supported backbone's published recipe
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


def load_image(path, image_size=None) -> np.ndarray:
    """Decode to a normalized float32 CxHxW array in RGB channel order."""
    try:
        with Image.open(path) as im:
            im = im.convert("RGB")
            if image_size is not None:
                im = im.resize((image_size, image_size), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DecodeError(f"{path}: cannot decode image ({exc})") from None
    mean = np.asarray(IMAGENET_MEAN, dtype=np.float32)
    std = np.asarray(IMAGENET_STD, dtype=np.float32)
    return np.transpose((arr - mean) / std, (2, 0, 1))


def load_mask(path) -> np.ndarray:
    """Decode a mask image to HxW uint8 {0, 1}; any nonzero pixel is
    foreground."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"))
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise DecodeError(f"{path}: cannot decode mask ({exc})") from None
    return (arr != 0).astype(np.uint8)


def check_pair(image_path, image_hw, mask_path, mask_hw) -> None:
    if image_hw != mask_hw:
        raise ShapeError(f"{mask_path}: mask is {mask_hw} but {image_path} "
                         f"is {image_hw}")


def downsample_mask(mask: np.ndarray, out_hw) -> np.ndarray:
    """Nearest-neighbor resample to the feature grid, sampling each output
    cell at its center so binaryness is preserved exactly."""
    h, w = mask.shape
    oh, ow = out_hw
    rows = np.minimum((np.arange(oh) + 0.5) * (h / oh), h - 1).astype(np.int64)
    cols = np.minimum((np.arange(ow) + 0.5) * (w / ow), w - 1).astype(np.int64)
    return mask[rows[:, None], cols[None, :]]
