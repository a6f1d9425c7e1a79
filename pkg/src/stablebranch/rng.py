"""Counter-based random streams.

Every draw is a pure function of ``(key, counter)``: the key is derived from
``(master_seed, stream_index)`` and the counter is the number of draws already
taken. The generator is SplitMix64 (Steele, Lea & Flood 2014), whose output at
position ``i`` is ``mix64(key + (i + 1) * GOLDEN)``.

The jitted helpers operate on a length-2 ``uint64`` state array
``[key, counter]`` so they can be threaded through numba kernels.
"""
import numpy as np
from numba import njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_STREAM_SALT = np.uint64(0xD1B54A32D192ED03)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53


@njit(cache=True, nogil=True)
def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True)
def stream_key(master_seed, index):
    a = mix64(np.uint64(master_seed) + GOLDEN)
    b = mix64(np.uint64(index) * _STREAM_SALT + _ONE)
    return mix64(a ^ b)


@njit(cache=True, nogil=True)
def new_state(master_seed, index):
    st = np.empty(2, dtype=np.uint64)
    st[0] = stream_key(master_seed, index)
    st[1] = np.uint64(0)
    return st


@njit(cache=True, nogil=True)
def next_u64(st):
    st[1] += _ONE
    return mix64(st[0] + st[1] * GOLDEN)


@njit(cache=True, nogil=True)
def next_uniform(st):
    """Uniform on the open interval (0, 1); never returns 0 or 1."""
    return ((next_u64(st) >> _S11) + 0.5) * _INV53


@njit(cache=True, nogil=True)
def next_normal(st):
    # Box-Muller, one output per pair of uniforms keeps the counter arithmetic simple
    r = np.sqrt(-2.0 * np.log(next_uniform(st)))
    return r * np.cos(2.0 * np.pi * next_uniform(st))


@njit(cache=True, nogil=True)
def next_exponential(st, rate):
    return -np.log(next_uniform(st)) / rate


@njit(cache=True, nogil=True)
def _fill_uniform(st, out):
    for i in range(out.shape[0]):
        out[i] = next_uniform(st)


class Stream:
    """Python handle on one counter-based stream.

    >>> s = Stream(42, 0)
    >>> 0.0 < s.uniform() < 1.0
    True
    """

    def __init__(self, master_seed: int, index: int = 0):
        self.master_seed = int(master_seed) & 0xFFFFFFFFFFFFFFFF
        self.index = int(index)
        self.state = new_state(np.uint64(self.master_seed), np.uint64(self.index))

    @property
    def counter(self) -> int:
        return int(self.state[1])

    def uniform(self, size=None):
        if size is None:
            return float(next_uniform(self.state))
        out = np.empty(int(size))
        _fill_uniform(self.state, out)
        return out

    def normal(self) -> float:
        return float(next_normal(self.state))

    def exponential(self, rate: float) -> float:
        return float(next_exponential(self.state, rate))
