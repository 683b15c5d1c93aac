import numpy as np


def derive_seed(master: int, *keys: int) -> int:
    """Child seed for ``keys`` (tree index, rep index, grid index...) under ``master``.

    Derivation only depends on the integers involved, so results never depend
    on scheduling or worker count.
    """
    ss = np.random.SeedSequence(entropy=int(master) % 2**64, spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def rng_for(master: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *keys))
