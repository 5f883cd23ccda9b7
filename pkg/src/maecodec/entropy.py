"""Quantization, its uniform-noise training proxy, the learned factorized
density over latent channels, and fixed-point CDF tables for real coding.

The density models each channel with a monotone scalar cumulative built
from three width-3 stages of positive-weight affine maps with tanh
couplings, closed by a sigmoid.  Bin probabilities are differences of the
cumulative at half-integer edges, blended with a tiny uniform floor so
that no symbol ever costs infinite bits and the bin masses over the
support stay a sub-distribution.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .exceptions import ContractViolation, SupportRangeError

PROB_FLOOR = 2.0 ** -24
TOTAL_FREQ = 1 << 16
DEFAULT_SUPPORT = 255
_FILTERS = (3, 3, 3)
_INIT_SCALE = 10.0


def quantize(z):
    """Elementwise round to nearest integer, ties away from zero.

    Accepts a Tensor or ndarray; returns an int32 ndarray.  Not
    differentiable; training uses add_uniform_noise instead.
    """
    data = z.data if isinstance(z, T.Tensor) else np.asarray(z)
    return np.trunc(data + np.copysign(0.5, data)).astype(np.int32)


def add_uniform_noise(z, rng):
    """Training proxy for rounding: z + u with u ~ U[-1/2, 1/2) iid.

    The noise is held constant for gradients, so d(z_tilde)/dz = I.
    """
    noise = rng.uniform(-0.5, 0.5, size=z.shape).astype(z.dtype)
    return T.add(z, T.Tensor(noise))


class FactorizedDensity:
    """Learned per-channel density over (noisy) quantized latent values."""

    def __init__(self, matrices, biases, gates, support=DEFAULT_SUPPORT):
        self.matrices = list(matrices)
        self.biases = list(biases)
        self.gates = list(gates)
        self.support = int(support)
        self.channels = self.matrices[0].shape[0]

    def parameters(self):
        named = {}
        for i, m in enumerate(self.matrices):
            named[f"density.matrix{i}"] = m
        for i, b in enumerate(self.biases):
            named[f"density.bias{i}"] = b
        for i, g in enumerate(self.gates):
            named[f"density.gate{i}"] = g
        return named

    def cumulative(self, t):
        """Monotone cumulative c(t) for t of shape (C, 1, M), in (0, 1)."""
        if t.ndim != 3 or t.shape[0] != self.channels or t.shape[1] != 1:
            raise ContractViolation(
                f"cumulative expects ({self.channels}, 1, M), got {t.shape}"
            )
        h = t
        last = len(self.matrices) - 1
        for i, (m, b) in enumerate(zip(self.matrices, self.biases)):
            h = T.channel_bias(T.channel_matmul(T.softplus(m), h), b)
            if i < last:
                h = T.tanh_coupling(h, self.gates[i])
        return T.sigmoid(h)


def init_density(channels, dtype=np.float32, rng=None, support=DEFAULT_SUPPORT):
    """Density whose initial cumulative ramps over roughly [-10, 10]."""
    if rng is None:
        rng = np.random.default_rng(0)
    dims = (1,) + _FILTERS + (1,)
    scale = _INIT_SCALE ** (1.0 / (len(_FILTERS) + 1))
    matrices, biases, gates = [], [], []
    for i in range(len(dims) - 1):
        init = np.log(np.expm1(1.0 / scale / dims[i + 1]))
        matrices.append(T.Tensor(
            np.full((channels, dims[i + 1], dims[i]), init, dtype=dtype),
            requires_grad=True))
        biases.append(T.Tensor(
            rng.uniform(-0.5, 0.5, size=(channels, dims[i + 1], 1)).astype(dtype),
            requires_grad=True))
        if i < len(dims) - 2:
            gates.append(T.Tensor(
                np.zeros((channels, dims[i + 1], 1), dtype=dtype),
                requires_grad=True))
    return FactorizedDensity(matrices, biases, gates, support=support)


def _channel_major(values):
    # (N, C, H, W) -> (C, 1, N*H*W)
    n, c, h, w = values.shape
    flat = T.transpose(values, (1, 0, 2, 3))
    return T.reshape(flat, (c, 1, n * h * w))


def bin_probabilities(values, density):
    """P(bin containing each value): c(v + 1/2) - c(v - 1/2), floored.

    ``values`` is an NCHW Tensor of latent samples (integer or noisy).
    The raw difference is blended with a uniform floor sized to the
    support, so every probability is >= 2^-24 and the masses over
    [-L, L] sum to at most 1.  Returns a Tensor shaped like ``values``.
    """
    if values.ndim != 4:
        raise ContractViolation(f"bin_probabilities expects NCHW, got {values.shape}")
    if values.shape[1] != density.channels:
        raise ContractViolation(
            f"channel mismatch: values have {values.shape[1]}, density has {density.channels}"
        )
    cm = _channel_major(values)
    upper = density.cumulative(T.add(cm, 0.5))
    lower = density.cumulative(T.sub(cm, 0.5))
    raw = T.sub(upper, lower)
    bins = 2 * density.support + 1
    mix = float(bins) * PROB_FLOOR
    p = T.add(T.mul(raw, 1.0 - mix), PROB_FLOOR)
    n, c, h, w = values.shape
    return T.transpose(T.reshape(p, (c, n, h, w)), (1, 0, 2, 3))


def rate_bits(z_tilde, density):
    """Total information content in bits: sum of -log2 P over elements.

    Differentiable with respect to both the latent samples and the
    density parameters.
    """
    return T.reduce_sum(T.neg(T.log2(bin_probabilities(z_tilde, density))))


class BoxDensity:
    """Uniform density over [-half_width, half_width); test and demo helper.

    Exposes the same cumulative/support interface as FactorizedDensity so
    rate estimation and table building can run against a known-shape
    density (each interior integer bin gets mass 1 / (2 * half_width)).
    """

    def __init__(self, half_width=128, support=None):
        self.half_width = float(half_width)
        self.support = int(support if support is not None else half_width)
        self.channels = 1

    def cumulative(self, t):
        ramp = (t.data + self.half_width) / (2.0 * self.half_width)
        return T.Tensor(np.clip(ramp, 0.0, 1.0))


class CdfTable:
    """Fixed-point cumulative frequencies for one channel.

    ``cum`` has length symbols + 1, starts at 0, ends at 65536, strictly
    increasing (every symbol frequency >= 1).  Symbol index v maps a
    latent integer q = v - offset ... i.e. q in [-L, L] is coded as
    q + offset with offset = L.
    """

    __slots__ = ("cum", "offset")

    def __init__(self, cum, offset):
        self.cum = np.asarray(cum, dtype=np.int64)
        self.offset = int(offset)
        if self.cum[0] != 0 or self.cum[-1] != TOTAL_FREQ:
            raise ContractViolation("CdfTable must span exactly [0, 65536]")
        if np.any(np.diff(self.cum) < 1):
            raise ContractViolation("CdfTable frequencies must all be >= 1")

    @property
    def num_symbols(self):
        return len(self.cum) - 1

    def frequencies(self):
        return np.diff(self.cum)

    def bits_for(self, symbols):
        """Cross-entropy of a symbol sequence under this table, in bits."""
        freqs = self.frequencies()[symbols]
        return float(-np.log2(freqs / TOTAL_FREQ).sum())


def _quantize_pmf(pmf):
    """16-bit frequencies: floor-then-largest-residual, minimum 1 each."""
    scaled = pmf * TOTAL_FREQ
    base = np.floor(scaled).astype(np.int64)
    np.maximum(base, 1, out=base)
    deficit = TOTAL_FREQ - int(base.sum())
    if deficit > 0:
        residual = scaled - np.floor(scaled)
        # stable order: largest residual first, ties by lower index
        order = np.lexsort((np.arange(len(pmf)), -residual))
        base[order[:deficit]] += 1
    elif deficit < 0:
        take = -deficit
        while take > 0:
            order = np.lexsort((np.arange(len(pmf)), -base))
            for idx in order:
                if take == 0:
                    break
                if base[idx] > 1:
                    base[idx] -= 1
                    take -= 1
    cum = np.zeros(len(pmf) + 1, dtype=np.int64)
    np.cumsum(base, out=cum[1:])
    return cum


def _grid_pmfs(density, support):
    """Per-channel bin masses on the integer grid [-L, L], tails folded
    into the edge bins.  Returns (pmfs (C, 2L+1) float64, in-range mass)."""
    edges = np.arange(-support, support + 1, dtype=np.float64) + 0.5  # 2L+1 edges? no: -L+0.5 ... L+0.5
    edges = np.concatenate(([-support - 0.5], edges))
    c = density.channels
    grid = np.broadcast_to(edges, (c, 1, len(edges))).astype(np.float64)
    cdf = density.cumulative(T.Tensor(grid)).data.reshape(c, len(edges)).astype(np.float64)
    mass = cdf[:, -1] - cdf[:, 0]
    pmf = np.diff(cdf, axis=1)
    pmf[:, 0] += cdf[:, 0]          # fold lower tail
    pmf[:, -1] += 1.0 - cdf[:, -1]  # fold upper tail
    np.maximum(pmf, PROB_FLOOR, out=pmf)
    return pmf, mass


def build_cdf_tables(density, support=None):
    """Deterministic fixed-point CDF tables for every channel.

    Raises SupportRangeError if [-L, L] misses more than 1e-6 of any
    channel's probability mass.
    """
    support = density.support if support is None else int(support)
    pmfs, mass = _grid_pmfs(density, support)
    worst = float(mass.min())
    if worst < 1.0 - 1e-6:
        raise SupportRangeError(
            f"support [-{support}, {support}] captures only {worst:.8f} of the "
            f"probability mass; rebuild with a larger L"
        )
    return [CdfTable(_quantize_pmf(pmfs[ch]), support) for ch in range(density.channels)]


def choose_support(density, start=DEFAULT_SUPPORT, limit=1 << 14):
    """Smallest L from start, 2*start+1, ... that passes the mass check.

    Deterministic in the density parameters, so encoder and decoder agree.
    """
    support = int(start)
    while support <= limit:
        _, mass = _grid_pmfs(density, support)
        if float(mass.min()) >= 1.0 - 1e-6:
            return support
        support = support * 2 + 1
    raise SupportRangeError(f"no support up to {limit} captures the probability mass")
