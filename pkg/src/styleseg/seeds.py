"""Deterministic seed derivation.

All randomness in a run flows from one root seed; every stage derives its
own child seed from the root and a stage name so stages can be re-run (or
skipped on resume) without disturbing each other.
"""

import hashlib

import numpy as np
import torch


def child_seed(root_seed: int, *names) -> int:
    """Derive a stable 63-bit child seed from a root seed and name parts.

    Uses sha256 so the mapping is identical across platforms and Python
    hash-randomization settings.
    """
    key = ":".join([str(int(root_seed))] + [str(n) for n in names])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def numpy_rng(root_seed: int, *names) -> np.random.Generator:
    return np.random.default_rng(child_seed(root_seed, *names))


def torch_generator(root_seed: int, *names) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(child_seed(root_seed, *names))
    return gen


def seed_torch(root_seed: int, *names) -> None:
    """Seed torch's global RNG (layer init uses it) from a named child."""
    torch.manual_seed(child_seed(root_seed, *names))
