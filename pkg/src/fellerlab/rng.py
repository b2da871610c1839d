"""Counter-based random streams.

Every variate is a pure function of ``(master_seed, path_index, stream, draw)``,
so a path produces the same numbers no matter how the batch is split, ordered
or sized. The keyed hash is the splitmix64 finalizer applied in a short
cascade; it is vectorised over path indices with numpy ``uint64`` arithmetic
(wrap-around multiplication is intended).
"""
import numpy as np
from scipy.special import ndtri

# stream tags, one per kind of randomness a simulator consumes
JUMP = 1
BROWNIAN = 2
CESARO = 3
CHAIN = 4

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30, _S27, _S31 = np.uint64(30), np.uint64(27), np.uint64(31)
_S11 = np.uint64(11)
_TWO_M53 = 2.0 ** -53


def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def _as_u64(v):
    return np.asarray(v, dtype=np.uint64)


def stream_keys(master_seed, path_index, stream):
    """Per-path key words; reuse them across draws to avoid rehashing the seed."""
    with np.errstate(over="ignore"):
        h = _mix(_as_u64(master_seed) + _GOLDEN)
        return _mix(h ^ (_as_u64(path_index) * _GOLDEN + _as_u64(stream)))


def bits_from_keys(keys, draw):
    with np.errstate(over="ignore"):
        return _mix(keys + _as_u64(draw) * _M2 + _GOLDEN)


def uniform_from_keys(keys, draw):
    return ((bits_from_keys(keys, draw) >> _S11).astype(np.float64) + 0.5) * _TWO_M53


def random_bits(master_seed, path_index, stream, draw):
    """64 random bits for each entry of the broadcast key arrays."""
    return bits_from_keys(stream_keys(master_seed, path_index, stream), draw)


def uniform(master_seed, path_index, stream, draw):
    """Uniform variates on the open interval (0, 1)."""
    bits = random_bits(master_seed, path_index, stream, draw)
    return ((bits >> _S11).astype(np.float64) + 0.5) * _TWO_M53


def normal(master_seed, path_index, stream, draw):
    """Standard normal variates by inversion."""
    return ndtri(uniform(master_seed, path_index, stream, draw))


def exponential(master_seed, path_index, stream, draw):
    """Unit-rate exponential variates by inversion."""
    return -np.log(uniform(master_seed, path_index, stream, draw))


def derive_seed(master_seed, *labels):
    """Child seed for a labelled sub-experiment (e.g. a grid cell)."""
    h = random_bits(master_seed, 0, 0, 0)
    for lab in labels:
        with np.errstate(over="ignore"):
            h = _mix(h ^ (_as_u64(lab) + _GOLDEN))
    return int(h)
