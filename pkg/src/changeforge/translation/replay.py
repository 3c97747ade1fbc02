"""History pool of generated images shown to the discriminators."""

from __future__ import annotations

import numpy as np


class ReplayBuffer:
    """Holds up to ``capacity`` generated images.

    Until full, every query stores and returns the new image. Once full, each
    image is, with probability 1/2, swapped for a random stored one (which is
    returned instead). ``capacity == 0`` disables the pool.
    """

    def __init__(self, capacity: int = 50, rng: np.random.Generator | None = None):
        if capacity < 0:
            raise ValueError("capacity must be non-negative")
        self.capacity = capacity
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.images: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self.images)

    def query(self, batch: np.ndarray) -> np.ndarray:
        if self.capacity == 0:
            return batch
        out = []
        for img in batch:
            img = np.array(img, copy=True)
            if len(self.images) < self.capacity:
                self.images.append(img)
                out.append(img)
            elif self.rng.random() < 0.5:
                idx = int(self.rng.integers(self.capacity))
                out.append(self.images[idx])
                self.images[idx] = img
            else:
                out.append(img)
        return np.stack(out)
