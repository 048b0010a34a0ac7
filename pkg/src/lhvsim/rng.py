"""Counter-based random streams.

Every trial owns an independent substream addressed by ``(seed, trial_index)``.
The generator is Philox4x32-10: a keyed bijection of a 128-bit counter, so any
trial can be regenerated on its own, in any order, by any worker.
"""

from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_SHIFT32 = np.uint64(32)

ROUNDS = 10
MAX_SEED = 2**64 - 1


def philox4x32(counter: np.ndarray, key: tuple[int, int], rounds: int = ROUNDS) -> np.ndarray:
    """Apply Philox4x32 to a batch of counters.

    ``counter`` has shape (n, 4) with 32-bit words; returns the (n, 4) output
    words as uint64 arrays holding 32-bit values.
    """
    ctr = np.asarray(counter, dtype=np.uint64)
    if ctr.ndim != 2 or ctr.shape[1] != 4:
        raise ValueError("counter must have shape (n, 4)")
    c0, c1, c2, c3 = (ctr[:, i] & _MASK32 for i in range(4))
    k0 = np.uint64(key[0] & 0xFFFFFFFF)
    k1 = np.uint64(key[1] & 0xFFFFFFFF)
    for r in range(rounds):
        if r:
            k0 = (k0 + _W0) & _MASK32
            k1 = (k1 + _W1) & _MASK32
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> _SHIFT32) ^ c1 ^ k0,
            p1 & _MASK32,
            (p0 >> _SHIFT32) ^ c3 ^ k1,
            p0 & _MASK32,
        )
    return np.stack([c0, c1, c2, c3], axis=1)


def seed_key(seed: int) -> tuple[int, int]:
    seed = int(seed)
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed & 0xFFFFFFFF, seed >> 32


def trial_uniforms(seed: int, indices: np.ndarray, count: int) -> np.ndarray:
    """Uniform doubles in [0, 1) for each trial index.

    Returns an array of shape (len(indices), count). Column j of a trial is the
    same whatever ``count`` is requested, so a wrapper model asking for extra
    uniforms leaves the inner model's draws untouched.
    """
    idx = np.asarray(indices, dtype=np.uint64).reshape(-1)
    if count < 1:
        return np.empty((idx.size, 0))
    blocks = (count + 1) // 2
    n = idx.size
    ctr = np.empty((n * blocks, 4), dtype=np.uint64)
    ctr[:, 0] = np.tile(np.arange(blocks, dtype=np.uint64), n)
    rep = np.repeat(idx, blocks)
    ctr[:, 1] = rep & _MASK32
    ctr[:, 2] = rep >> _SHIFT32
    ctr[:, 3] = 0
    words = philox4x32(ctr, seed_key(seed))
    hi = (words[:, 0::2] >> np.uint64(5)).astype(np.float64)
    lo = (words[:, 1::2] >> np.uint64(6)).astype(np.float64)
    u = (hi * 67108864.0 + lo) * (1.0 / 9007199254740992.0)
    return u.reshape(n, blocks * 2)[:, :count]


def derive_seed(seed: int, *path: int) -> int:
    """Child seed for a labelled sub-experiment, e.g. one CHSH setting pair."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
