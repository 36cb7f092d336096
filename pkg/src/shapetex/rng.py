"""Deterministic random-stream management.

All randomness in the package flows through PCG64 generators derived from a
single run seed via ``numpy.random.SeedSequence`` spawn keys.  Each component
owns a fixed stream index so that runs are reproducible draw-for-draw and a
reimplementation can match streams by following the same table.
"""

import numpy as np

# Fixed stream indices.  Never renumber; append only.
STREAMS = {
    "dataset": 0,
    "codec_init": 1,
    "codec_train": 2,
    "model_init": 3,
    "batch_order": 4,
    "pairing": 5,
    "augment": 6,
    "probe": 7,
    "corruption": 8,
    "stylized_eval": 9,
    "head_init": 10,
    "grad_check": 11,
}


def component_rng(seed, component, extra=()):
    """Generator for one named component of a run.

    ``extra`` appends further spawn-key words (e.g. an epoch index) so a
    component can own a family of independent streams.
    """
    key = (STREAMS[component],) + tuple(int(v) for v in extra)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=key)))
