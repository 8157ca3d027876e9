"""Counter-based SplitMix64 stream shared by both simulation backends.

Draw number ``c`` of a run keyed by ``seed`` is ``mix(key + (c + 1) * GOLDEN)``
with ``key = mix(seed)``. Any draw can be computed without the ones before
it, so the compiled and pure-Python kernels skip unused draws freely and
still agree bit for bit.

Per-slot layout (stride ``1 + 3N``), slot ``t`` starting at ``t * stride``:
    +0          slot availability
    +1 + 3i     attempt of user i
    +2 + 3i     environment move of user i
    +3 + 3i     arrival of user i
Row ``t = 0`` holds the initial environment draws at ``+2 + 3i``.
"""

MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
M1 = 0xBF58476D1CE4E5B9
M2 = 0x94D049BB133111EB
INV_2_53 = 1.0 / 9007199254740992.0


def mix64(z: int) -> int:
    z &= MASK
    z = ((z ^ (z >> 30)) * M1) & MASK
    z = ((z ^ (z >> 27)) * M2) & MASK
    return z ^ (z >> 31)


def stream_key(seed: int) -> int:
    return mix64(seed & MASK)


def uniform(key: int, counter: int) -> float:
    return (mix64(key + (counter + 1) * GOLDEN) >> 11) * INV_2_53


def stride(n_users: int) -> int:
    return 1 + 3 * n_users
