from __future__ import annotations

import numpy as np

from roma.numerics import no_tape


def extract_features(network, images: np.ndarray, batch_size: int = 16) -> np.ndarray:
    """Token-averaged encoder output, one ``d``-vector per image.

    Runs without a tape, so parameters and gradients are left untouched.
    A single ``(H, W, C)`` image yields a ``(d,)`` vector.
    """
    images = np.asarray(images, dtype=np.float64)
    single = images.ndim == 3
    if single:
        images = images[None]
    out = np.empty((len(images), network.config.width))
    with no_tape():
        for start in range(0, len(images), batch_size):
            feats = network.encode(images[start:start + batch_size])
            out[start:start + batch_size] = feats.data.mean(axis=1)
    return out[0] if single else out
