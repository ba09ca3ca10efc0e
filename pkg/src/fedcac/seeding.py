"""Deterministic seed splitting.

Every random stream in a simulation is derived from one root seed and a
tuple ``(purpose, client_id, round)``. The tuple is fed to
:class:`numpy.random.SeedSequence`, so streams for different purposes,
clients or rounds are statistically independent and never depend on the
order in which other streams were consumed.
"""

import numpy as np

# Purpose tags. Their numeric values are part of the reproducibility
# contract; do not renumber.
INIT = 1
DATA = 2
PARTITION = 3
SHUFFLE = 4
SELECT = 5


def derive_seed(root, purpose, client_id=0, round_index=0):
    """Return a 64-bit integer seed for one stream."""
    seq = np.random.SeedSequence([int(root) & 0xFFFFFFFFFFFFFFFF, purpose, client_id, round_index])
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def make_rng(root, purpose, client_id=0, round_index=0):
    return np.random.default_rng(derive_seed(root, purpose, client_id, round_index))
