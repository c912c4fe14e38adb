"""Deterministic synthetic 10-class glyph images for pipeline tests.

Ten geometric glyphs (bars, bands, a ring, a disk, corner blobs, a cross) on
a 28x28 canvas with per-sample translation, intensity, and speckle jitter.
The classes are well separated spatially and have similar ink budgets, so a
working trainer should reach high accuracy quickly; a broken one cannot hide
behind dataset difficulty.
"""

import numpy as np

from symstdp.encoding import PURPOSE_SYNTH, RngStream

SIDE = 28


def _glyph(label: int) -> np.ndarray:
    img = np.zeros((SIDE, SIDE))
    r, c = np.mgrid[0:SIDE, 0:SIDE]
    if label == 0:
        img[12:16, 2:26] = 255.0
    elif label == 1:
        img[2:26, 12:16] = 255.0
    elif label == 2:
        img[np.abs(r - c) <= 2] = 255.0
    elif label == 3:
        img[np.abs(r + c - (SIDE - 1)) <= 2] = 255.0
    elif label == 4:
        ring = ((r >= 6) & (r <= 21) & (c >= 6) & (c <= 21)) & ~(
            (r >= 10) & (r <= 17) & (c >= 10) & (c <= 17)
        )
        img[ring] = 255.0
    elif label == 5:
        img[(r - 13.5) ** 2 + (c - 13.5) ** 2 <= 42.0] = 255.0
    elif label == 6:
        for rr, cc in ((5, 5), (5, 22), (22, 5), (22, 22)):
            img[(r - rr) ** 2 + (c - cc) ** 2 <= 12.0] = 255.0
    elif label == 7:
        img[3:7, 4:24] = 255.0
        img[21:25, 4:24] = 255.0
    elif label == 8:
        img[4:24, 3:7] = 255.0
        img[4:24, 21:25] = 255.0
    elif label == 9:
        img[11:17, 6:22] = 255.0
        img[6:22, 11:17] = 255.0
    else:
        raise ValueError(f"no glyph for label {label}")
    return img


def make_split(n: int, seed: int, salt: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Images (n, 28, 28) float64 in [0, 255] and labels (n,) int64."""
    gen = RngStream(seed, PURPOSE_SYNTH, sample_id=salt, extra=0).generator()
    labels = np.arange(n) % 10
    gen.shuffle(labels)
    images = np.empty((n, SIDE, SIDE))
    for k, label in enumerate(labels):
        img = _glyph(int(label))
        dr, dc = gen.integers(-2, 3, size=2)
        img = np.roll(np.roll(img, dr, axis=0), dc, axis=1)
        img = img * gen.uniform(0.75, 1.0)
        speckle = gen.random((SIDE, SIDE)) < 0.02
        img = img + speckle * gen.uniform(0.0, 60.0, size=(SIDE, SIDE))
        images[k] = np.clip(img, 0.0, 255.0)
    return images, labels.astype(np.int64)


def write_idx_files(directory, n_train: int, n_test: int, seed: int) -> dict:
    """Write the four canonical IDX files into ``directory``."""
    from symstdp.dataio import dump_idx

    train_images, train_labels = make_split(n_train, seed, salt=0)
    test_images, test_labels = make_split(n_test, seed, salt=1)
    out = {}
    for name, arr in (
        ("train-images-idx3-ubyte", np.round(train_images).astype(np.uint8)),
        ("train-labels-idx1-ubyte", train_labels.astype(np.uint8)),
        ("t10k-images-idx3-ubyte", np.round(test_images).astype(np.uint8)),
        ("t10k-labels-idx1-ubyte", test_labels.astype(np.uint8)),
    ):
        path = directory / name
        path.write_bytes(dump_idx(arr))
        out[name] = path
    return out
