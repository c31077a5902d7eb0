"""Deterministic synthetic event datasets for tests and benchmarks."""

from __future__ import annotations

import numpy as np

from .codec import ColumnStore
from .queries import DATASET_PREFIX


def generate(
    n_events: int,
    seed: int,
    mean_muons: float = 2.0,
    max_muons: int = 12,
    prefix: str = DATASET_PREFIX,
    instrumented: bool = False,
) -> ColumnStore:
    """Events with a muon list each; fixed seed gives bit-identical stores.

    Multiplicity is Poisson(mean) truncated at max_muons, so zero-muon
    events occur. pt is exponential (mean 30, strictly positive), eta
    uniform in [-5, 5], phi uniform in [-pi, pi].
    """
    if n_events < 0:
        raise ValueError("n_events must be nonnegative")
    rng = np.random.default_rng(seed)
    counts = np.minimum(rng.poisson(mean_muons, n_events), max_muons).astype(np.int64)
    total = int(counts.sum())
    pt = rng.exponential(30.0, total)
    pt = np.maximum(pt, np.finfo(np.float64).tiny)
    eta = rng.uniform(-5.0, 5.0, total)
    phi = rng.uniform(-np.pi, np.pi, total)
    offsets = np.zeros(n_events + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    muons = f"{prefix}-Ld-R_muons"
    arrays = {
        f"{prefix}-Lo": np.array([0, n_events], dtype=np.int64),
        f"{muons}-Lo": offsets,
        f"{muons}-Ld-R_pt": pt,
        f"{muons}-Ld-R_eta": eta,
        f"{muons}-Ld-R_phi": phi,
    }
    return ColumnStore.from_arrays(arrays, instrumented=instrumented)
