# src/evolve/gates.py
import hashlib
import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np
import scipy.linalg

from src.model.superoperators import superop_to_site_major, trace_vector
from src.tensor.tensor_core import as_dense
from src.utils.errors import NumericalAbort

logger = logging.getLogger(__name__)

GATE_CHECK_TOLERANCE = 1e-10
TRACE_CHECK_TOLERANCE = 1e-10

# Interior bonds of a uniform chain share one generator, so exponentials
# are cached by generator content and substep length.
_cache: Dict[Tuple[str, float], np.ndarray] = {}
_CACHE_LIMIT = 64
_cache_lock = threading.Lock()


def _cache_key(generator: np.ndarray, tau: float) -> Tuple[str, float]:
    digest = hashlib.sha1(np.ascontiguousarray(generator).tobytes()).hexdigest()
    return digest, float(tau)


def _get_cache(key):
    with _cache_lock:
        return _cache.get(key)


def _set_cache(key, val: np.ndarray):
    with _cache_lock:
        while len(_cache) >= _CACHE_LIMIT:
            _cache.pop(next(iter(_cache)), None)
        _cache[key] = val


def clear_gate_cache():
    with _cache_lock:
        _cache.clear()


@dataclass
class GateSet:
    """
    Propagators of one Trotter step in site-major superket ordering.

    order 1: even layer exp(G dt), odd layer exp(G dt).
    order 2: even half layer exp(G dt/2), odd layer exp(G dt), even half layer.
    """

    dt: float
    order: int
    even_gates: Dict[int, np.ndarray] = field(default_factory=dict)
    odd_gates: Dict[int, np.ndarray] = field(default_factory=dict)
    local_dim: int = 0

    @property
    def even_fraction(self) -> float:
        return 0.5 if self.order == 2 else 1.0

    def layers(self) -> List[Dict[int, np.ndarray]]:
        if self.order == 2:
            return [self.even_gates, self.odd_gates, self.even_gates]
        return [self.even_gates, self.odd_gates]


def reference_expm(a: np.ndarray, terms: int = 24) -> np.ndarray:
    """Taylor series with scaling and squaring, an independent check on expm."""
    norm = np.linalg.norm(a, 1)
    s = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    x = a / 2 ** s
    out = np.eye(a.shape[0], dtype=a.dtype)
    term = np.eye(a.shape[0], dtype=a.dtype)
    for k in range(1, terms + 1):
        term = term @ x / k
        out = out + term
    for _ in range(s):
        out = out @ out
    return out


def exponentiate(generator: np.ndarray, tau: float) -> np.ndarray:
    key = _cache_key(generator, tau)
    cached = _get_cache(key)
    if cached is not None:
        return cached
    gate = scipy.linalg.expm(generator * tau)
    if not np.all(np.isfinite(gate)):
        raise NumericalAbort(f"non-finite gate exponential at tau={tau}")
    gate = as_dense(gate)
    _set_cache(key, gate)
    return gate


def _verify(generator: np.ndarray, tau: float, gate: np.ndarray, d: int):
    ref = reference_expm(generator * tau)
    scale = max(1.0, float(np.max(np.abs(ref))))
    err = float(np.max(np.abs(gate - ref))) / scale
    if err > GATE_CHECK_TOLERANCE:
        raise NumericalAbort(f"gate exponential disagrees with reference by {err:.2e}",
                             {"tau": tau, "error": err})
    t = trace_vector(d)
    tt = np.kron(t, t)
    drift = float(np.max(np.abs(tt @ gate - tt)))
    if drift > TRACE_CHECK_TOLERANCE:
        raise NumericalAbort(f"gate does not preserve the trace functional ({drift:.2e})",
                             {"tau": tau, "drift": drift})


def build_gates(bonds: List[np.ndarray], dt: float, order: int, local_dim: int) -> GateSet:
    """
    Exponentials of the row-major bond generators at the substeps the
    Trotter order needs, re-indexed for site-major superkets.
    """
    if dt <= 0:
        raise ValueError("dt must be > 0")
    if order not in (1, 2):
        raise ValueError("Trotter order must be 1 or 2")

    gates = GateSet(dt=dt, order=order, local_dim=local_dim)
    even_tau = dt * gates.even_fraction
    for b, gen in enumerate(bonds):
        g_site = superop_to_site_major(gen, 2, local_dim)
        tau = even_tau if b % 2 == 0 else dt
        gate = exponentiate(g_site, tau)
        if b == 0:
            _verify(g_site, tau, gate, local_dim)
        (gates.even_gates if b % 2 == 0 else gates.odd_gates)[b] = gate
    logger.debug("built %d bond gates, dt=%g, order=%d", len(bonds), dt, order)
    return gates
