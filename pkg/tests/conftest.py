import numpy as np
import pytest

from ffcnn.dataio import ImageSet


def make_blob_images(n, seed, size=32, channels=1, n_classes=10, noise=0.12):
    """Synthetic classifiable images: one blob position per class."""
    r = np.random.default_rng(seed)
    labels = r.integers(0, n_classes, size=n)
    images = r.normal(0.3, noise, size=(n, size, size, channels)).astype(np.float32)
    yy, xx = np.mgrid[0:size, 0:size]
    for i, c in enumerate(labels):
        cy = size // 4 + (size // 10) * (c % 5)
        cx = size // 4 + (size // 6) * (c // 5)
        blob = np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2) / 10.0)).astype(np.float32)
        images[i] += 0.55 * blob[..., None]
    tag = "rgb" if channels == 3 else "gray"
    return ImageSet(np.clip(images, 0, 1), labels, tag, num_classes=n_classes)


@pytest.fixture(scope="session")
def blob_train():
    return make_blob_images(300, seed=11)


@pytest.fixture(scope="session")
def blob_test():
    return make_blob_images(120, seed=12)
