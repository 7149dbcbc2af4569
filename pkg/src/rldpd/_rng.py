"""Seeded sub-streams so every random draw is addressed by (seed, purpose, index)."""
import numpy as np

# purpose tags keep streams of different consumers disjoint
CHANNEL_NOISE = 1
PERTURBATION = 2
PAYLOAD = 3
EVAL_PAYLOAD = 4
EVAL_NOISE = 5


def substream(seed: int, purpose: int, index: int = 0) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(purpose), int(index)])
