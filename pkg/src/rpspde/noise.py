"""Two-sided Brownian increments addressed by absolute time index.

Every increment ``dW^k_i`` (mode ``k``, step ``i`` covering ``[i dt, (i+1) dt)``)
is a pure function of ``(seed, k, i)``: a Philox block cipher keyed by
``(seed, k)`` is evaluated at a counter derived from ``i`` and the two output
words are mapped to a Gaussian by Box-Muller.  Because nothing is generated
sequentially, any sub-range can be regenerated bit-for-bit and the
Wiener shift is a plain re-indexing.

Path objects share a tiny protocol: attributes ``dt`` and ``mode_count`` and a
method ``window(i_from, i_to)`` returning an array of shape
``(i_to - i_from, mode_count)``.
"""
from __future__ import annotations

import io
import math
from pathlib import Path

import numpy as np
from numpy.random import Philox

from .errors import InvalidRange

# keeps negative step indices inside Philox's unsigned counter space
_COUNTER_OFFSET = 1 << 62
_TWO_PI = 2.0 * math.pi
_U53 = 2.0**-53


def standard_normals(seed: int, mode: int, i_from: int, i_to: int) -> np.ndarray:
    """N(0,1) draws for indices ``i_from <= i < i_to`` of stream ``(seed, mode)``."""
    if not 0 <= seed < 2**64 or not 0 <= mode < 2**64:
        raise ValueError("seed and mode must be non-negative 64-bit integers")
    n = i_to - i_from
    if n <= 0:
        return np.empty(0)
    first = i_from + _COUNTER_OFFSET
    block0 = first // 2
    n_blocks = (first + n - 1) // 2 - block0 + 1
    raw = Philox(key=[seed, mode], counter=[block0, 0, 0, 0]).random_raw(4 * n_blocks)
    pairs = raw.reshape(-1, 2)[first - 2 * block0: first - 2 * block0 + n]
    u1 = ((pairs[:, 0] >> np.uint64(11)).astype(np.float64) + 1.0) * _U53  # (0, 1]
    u2 = (pairs[:, 1] >> np.uint64(11)).astype(np.float64) * _U53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)


def gaussian_increments(seed: int, mode_count: int, dt: float, i_from: int, i_to: int) -> np.ndarray:
    """Increments ``dW^k_i`` with variance ``dt``, shape ``(i_to - i_from, mode_count)``."""
    out = np.empty((max(i_to - i_from, 0), mode_count))
    scale = math.sqrt(dt)
    for k in range(mode_count):
        out[:, k] = scale * standard_normals(seed, k, i_from, i_to)
    return out


class _PathBase:
    dt: float
    mode_count: int

    def window(self, i_from: int, i_to: int) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError

    def shifted(self, n_steps: int):
        return ShiftedPath(self, n_steps) if n_steps else self

    def increment(self, k: int, i: int) -> float:
        return float(self.window(i, i + 1)[0, k])

    def __add__(self, other):
        return SumPath(self, other)


class NoisePath(_PathBase):
    """Counter-based two-sided Brownian increments for ``mode_count`` modes.

    Parameters
    ----------
    seed : int
    mode_count : int
    dt : float
    i_min, i_max : int
        Step range to materialize; anything outside is regenerated on demand.
    shift_steps : int
        Accumulated Wiener shift: step ``i`` of this path is step
        ``i + shift_steps`` of the underlying generator.
    """

    def __init__(self, seed: int, mode_count: int, dt: float, i_min: int = 0, i_max: int = 1,
                 shift_steps: int = 0, increments: np.ndarray | None = None):
        if not i_min < i_max:
            raise InvalidRange(f"need i_min < i_max, got [{i_min}, {i_max})")
        if not dt > 0:
            raise InvalidRange(f"dt must be positive, got {dt}")
        self.seed = int(seed)
        self.mode_count = int(mode_count)
        self.dt = float(dt)
        self.i_min, self.i_max = int(i_min), int(i_max)
        self.shift_steps = int(shift_steps)
        if increments is None:
            increments = self._generate(self.i_min, self.i_max)
        increments = np.array(increments, dtype=float)
        if increments.shape != (self.i_max - self.i_min, self.mode_count):
            raise ValueError("increments shape does not match range")
        increments.setflags(write=False)
        self.increments = increments

    def _generate(self, i_from, i_to):
        s = self.shift_steps
        return gaussian_increments(self.seed, self.mode_count, self.dt, i_from + s, i_to + s)

    def window(self, i_from: int, i_to: int) -> np.ndarray:
        if i_to < i_from:
            raise InvalidRange(f"need i_from <= i_to, got [{i_from}, {i_to})")
        if self.i_min <= i_from and i_to <= self.i_max:
            return self.increments[i_from - self.i_min: i_to - self.i_min]
        return self._generate(i_from, i_to)

    def shifted(self, n_steps: int) -> "NoisePath":
        return NoisePath(self.seed, self.mode_count, self.dt, self.i_min, self.i_max,
                         self.shift_steps + n_steps)

    def header(self) -> str:
        return path_header(self.seed, self.dt, self.mode_count, self.i_min, self.i_max,
                           self.shift_steps)

    def __repr__(self):
        return (f"NoisePath(seed={self.seed}, mode_count={self.mode_count}, dt={self.dt}, "
                f"range=[{self.i_min}, {self.i_max}), shift={self.shift_steps})")


class ZeroPath(_PathBase):
    """All increments zero."""

    def __init__(self, mode_count: int, dt: float):
        self.mode_count, self.dt = int(mode_count), float(dt)

    def window(self, i_from, i_to):
        if i_to < i_from:
            raise InvalidRange(f"need i_from <= i_to, got [{i_from}, {i_to})")
        return np.zeros((i_to - i_from, self.mode_count))

    def shifted(self, n_steps):
        return self


class ShiftedPath(_PathBase):
    def __init__(self, base, n_steps: int):
        self.base, self.n_steps = base, int(n_steps)
        self.dt, self.mode_count = base.dt, base.mode_count

    def window(self, i_from, i_to):
        return self.base.window(i_from + self.n_steps, i_to + self.n_steps)

    def shifted(self, n_steps):
        return self.base.shifted(self.n_steps + n_steps)


class SumPath(_PathBase):
    """Increment-wise sum of two paths on the same grid."""

    def __init__(self, a, b):
        if a.dt != b.dt or a.mode_count != b.mode_count:
            raise ValueError("paths must share dt and mode_count")
        self.a, self.b = a, b
        self.dt, self.mode_count = a.dt, a.mode_count

    def window(self, i_from, i_to):
        return self.a.window(i_from, i_to) + self.b.window(i_from, i_to)

    def shifted(self, n_steps):
        return SumPath(self.a.shifted(n_steps), self.b.shifted(n_steps))


class DriftPath(_PathBase):
    """Deterministic increments ``eps * dt * h_i`` on ``[i_from, i_to)``, zero elsewhere.

    Added to a Brownian path this is the discrete Cameron-Martin shift along
    an indicator bump.  ``weights`` selects which modes are bumped.
    """

    def __init__(self, mode_count: int, dt: float, i_from: int, i_to: int, eps: float,
                 weights=None):
        if i_to < i_from:
            raise InvalidRange("bump range is empty or reversed")
        self.mode_count, self.dt = int(mode_count), float(dt)
        self.i_from, self.i_to, self.eps = int(i_from), int(i_to), float(eps)
        self.weights = np.ones(mode_count) if weights is None else np.asarray(weights, float)

    def window(self, i_from, i_to):
        out = np.zeros((i_to - i_from, self.mode_count))
        lo, hi = max(i_from, self.i_from), min(i_to, self.i_to)
        if lo < hi:
            out[lo - i_from: hi - i_from] = self.eps * self.dt * self.weights
        return out

    def shifted(self, n_steps):
        return DriftPath(self.mode_count, self.dt, self.i_from - n_steps, self.i_to - n_steps,
                         self.eps, self.weights)


class CoarsenedPath(_PathBase):
    """Sums of ``factor`` consecutive increments of a finer path.

    Coarse and fine paths then describe the same Brownian motion, which is
    what strong-error refinement studies need.
    """

    def __init__(self, fine, factor: int):
        if factor < 1:
            raise ValueError("factor must be >= 1")
        self.fine, self.factor = fine, int(factor)
        self.dt = fine.dt * factor
        self.mode_count = fine.mode_count

    def window(self, i_from, i_to):
        f = self.factor
        w = self.fine.window(i_from * f, i_to * f)
        return w.reshape(i_to - i_from, f, self.mode_count).sum(axis=1)

    def shifted(self, n_steps):
        return CoarsenedPath(self.fine.shifted(n_steps * self.factor), self.factor)


def path_header(seed, dt, mode_count, i_min, i_max, shift_steps=0) -> str:
    """``seed,dt,mode_count,i_min,i_max[,shift]``: enough to regenerate a path."""
    fields = [str(seed), repr(float(dt)), str(mode_count), str(i_min), str(i_max)]
    if shift_steps:
        fields.append(str(shift_steps))
    return ",".join(fields)


def generate_path(seed: int, mode_count: int, dt: float, i_min: int, i_max: int) -> NoisePath:
    return NoisePath(seed, mode_count, dt, i_min, i_max)


def shift(path, n_steps: int):
    """The Wiener shift by ``n_steps * dt``: step ``i`` of the result is step ``i + n_steps``."""
    return path.shifted(n_steps)


def bridge_sum(path, mode: int, i_from: int, i_to: int) -> float:
    """``W^k(i_to dt) - W^k(i_from dt)`` as a sum of increments."""
    if i_to < i_from:
        raise InvalidRange(f"need i_from <= i_to, got [{i_from}, {i_to})")
    if i_to == i_from:
        return 0.0
    return float(np.sum(path.window(i_from, i_to)[:, mode]))


def save_path(path: NoisePath, target) -> None:
    """Write header plus one comma-separated row of increments per step."""
    buf = io.StringIO()
    buf.write(path.header() + "\n")
    np.savetxt(buf, path.increments, fmt="%.17g", delimiter=",")
    Path(target).write_text(buf.getvalue())


def load_path(source, regenerate: bool = False) -> NoisePath:
    """Read a path written by :func:`save_path`.

    With ``regenerate=True`` only the header is used and the increments are
    recomputed from the seed.
    """
    text = Path(source).read_text()
    header, _, body = text.partition("\n")
    fields = header.strip().split(",")
    if len(fields) not in (5, 6):
        raise ValueError(f"bad noise header: {header!r}")
    seed, dt, mode_count, i_min, i_max = (int(fields[0]), float(fields[1]), int(fields[2]),
                                          int(fields[3]), int(fields[4]))
    shift_steps = int(fields[5]) if len(fields) == 6 else 0
    if regenerate:
        return NoisePath(seed, mode_count, dt, i_min, i_max, shift_steps)
    data = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
    return NoisePath(seed, mode_count, dt, i_min, i_max, shift_steps,
                     increments=data.reshape(i_max - i_min, mode_count))
