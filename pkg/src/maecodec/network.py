"""The shared convolutional autoencoder, the tradeoff-conditioned
modulation networks, and the bottleneck-scaling baseline.

Encoder: three conv stages (9x9 stride 4, then two 5x5 stride 2), each
followed by GDN, for a total downsampling factor of 16.  Decoder mirrors
with transposed convs and IGDN; the final stage maps back to RGB.

In "mae" mode every encoder conv output is multiplied by a per-channel
vector produced from the normalized tradeoff by a small perceptron, and
the decoder demodulates the dequantized latent plus the two intermediate
transposed-conv outputs.  In "bottleneck" mode a plain autoencoder is
combined with learned per-tradeoff scaling vectors applied to the latent
before quantization and inverted after.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .entropy import FactorizedDensity, init_density
from .exceptions import ContractViolation
from .gdn import GdnParams, gdn_forward, igdn_forward, init_gdn

MODES = ("mae", "plain", "bottleneck")

# (kernel, stride, padding) per encoder stage; decoder mirrors in reverse
ENCODER_STAGES = ((9, 4, 4), (5, 2, 2), (5, 2, 2))
DOWNSAMPLE = 16
IMAGE_CHANNELS = 3


@dataclass(frozen=True)
class CodecConfig:
    """Architecture hyperparameters; everything else is fixed topology."""

    channels: int = 192
    mod_hidden: int = 50

    def __post_init__(self):
        if self.channels < 1 or self.mod_hidden < 1:
            raise ContractViolation("channels and mod_hidden must be positive")


@dataclass(frozen=True)
class TradeoffSet:
    """The discrete tradeoff grid, uniformly weighted, max-normalized."""

    lambdas: tuple = (64.0, 128.0, 256.0, 512.0, 1024.0, 2048.0, 4096.0)

    def __post_init__(self):
        lams = tuple(float(v) for v in self.lambdas)
        if not lams or any(v <= 0 for v in lams):
            raise ContractViolation("tradeoffs must be strictly positive")
        if any(b <= a for a, b in zip(lams, lams[1:])):
            raise ContractViolation("tradeoffs must be strictly increasing")
        if len(lams) > 256:
            raise ContractViolation("at most 256 tradeoffs (index is one byte)")
        object.__setattr__(self, "lambdas", lams)

    def __len__(self):
        return len(self.lambdas)

    def __iter__(self):
        return iter(self.lambdas)

    def normalized(self, lam):
        """lam / max(lambdas), in (0, 1] for members of the set."""
        lam = float(lam)
        if lam not in self.lambdas:
            raise ContractViolation(f"tradeoff {lam} is not in {self.lambdas}")
        return lam / self.lambdas[-1]

    def index_of(self, lam):
        return self.lambdas.index(float(lam))


class ModulationNet:
    """1 -> hidden -> C perceptron; exp output keeps every entry positive."""

    def __init__(self, w1, b1, w2, b2):
        self.w1, self.b1, self.w2, self.b2 = w1, b1, w2, b2

    @property
    def out_channels(self):
        return self.w2.shape[1]

    def __call__(self, lambda_hat):
        if not 0.0 < lambda_hat <= 1.0:
            raise ContractViolation(f"normalized tradeoff must be in (0, 1], got {lambda_hat}")
        x = T.Tensor(np.array([[lambda_hat]], dtype=self.w1.dtype))
        h = T.relu(T.affine(x, self.w1, self.b1))
        return T.reshape(T.exp(T.affine(h, self.w2, self.b2)), (self.out_channels,))


def _init_modulation_net(rng, hidden, out_channels, dtype):
    # small, nonzero second layer: starts close to exp(0) = 1 while keeping
    # ReLU units alive so gradients reach the first layer
    w1 = T.Tensor(rng.normal(0.0, 0.5, size=(1, hidden)).astype(dtype), requires_grad=True)
    b1 = T.Tensor(np.full(hidden, 0.1, dtype=dtype), requires_grad=True)
    w2 = T.Tensor(rng.normal(0.0, 0.01, size=(hidden, out_channels)).astype(dtype), requires_grad=True)
    b2 = T.Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True)
    return ModulationNet(w1, b1, w2, b2)


class ConvLayer:
    def __init__(self, kernel, bias, stride, padding):
        self.kernel, self.bias = kernel, bias
        self.stride, self.padding = stride, padding

    def __call__(self, x):
        return T.channel_shift(
            T.conv2d(x, self.kernel, self.stride, self.padding), self.bias)


class ConvTransposeLayer:
    def __init__(self, kernel, bias, stride, padding):
        self.kernel, self.bias = kernel, bias
        self.stride, self.padding = stride, padding

    def __call__(self, x):
        return T.channel_shift(
            T.conv2d_transpose(x, self.kernel, self.stride, self.padding), self.bias)


class CodecModel:
    """Parameter container plus the forward maps for one trained codec.

    ``mode`` selects the variant: "mae" carries modulation networks,
    "bottleneck" carries per-tradeoff scaling vectors, "plain" is the
    bare autoencoder used for independently trained operating points.
    """

    def __init__(self, config, tradeoffs, mode, dtype=np.float32, seed=0):
        if mode not in MODES:
            raise ContractViolation(f"mode must be one of {MODES}, got {mode!r}")
        self.config = config
        self.tradeoffs = tradeoffs
        self.mode = mode
        self.dtype = np.dtype(dtype).type
        rng = np.random.default_rng([int(seed), 0x6D6165])

        c = config.channels
        self.enc_convs = []
        in_ch = IMAGE_CHANNELS
        for k, stride, pad in ENCODER_STAGES:
            self.enc_convs.append(ConvLayer(
                self._conv_kernel(rng, c, in_ch, k), self._bias(c), stride, pad))
            in_ch = c
        self.enc_gdn = [init_gdn(c, self.dtype) for _ in ENCODER_STAGES]

        self.dec_convs = []
        stages = list(reversed(ENCODER_STAGES))
        for i, (k, stride, pad) in enumerate(stages):
            out_ch = IMAGE_CHANNELS if i == len(stages) - 1 else c
            self.dec_convs.append(ConvTransposeLayer(
                self._tconv_kernel(rng, c, out_ch, k, stride), self._bias(out_ch),
                stride, pad))
        self.dec_igdn = [init_gdn(c, self.dtype) for _ in range(len(stages) - 1)]

        self.density = init_density(c, dtype=self.dtype,
                                    rng=np.random.default_rng([int(seed), 0x64656E]))

        self.mod_nets = []
        self.demod_nets = []
        if mode == "mae":
            for _ in ENCODER_STAGES:
                self.mod_nets.append(_init_modulation_net(rng, config.mod_hidden, c, self.dtype))
            for _ in range(3):
                self.demod_nets.append(_init_modulation_net(rng, config.mod_hidden, c, self.dtype))

        self.scale_table = {}
        if mode == "bottleneck":
            for lam in tradeoffs:
                self.scale_table[lam] = T.Tensor(
                    np.ones(c, dtype=self.dtype), requires_grad=True)

    def _conv_kernel(self, rng, out_ch, in_ch, k):
        std = (1.0 / (in_ch * k * k)) ** 0.5
        return T.Tensor(rng.normal(0.0, std, size=(out_ch, in_ch, k, k)).astype(self.dtype),
                        requires_grad=True)

    def _tconv_kernel(self, rng, in_ch, out_ch, k, stride):
        std = (stride * stride / (in_ch * k * k)) ** 0.5
        return T.Tensor(rng.normal(0.0, std, size=(in_ch, out_ch, k, k)).astype(self.dtype),
                        requires_grad=True)

    def _bias(self, n):
        return T.Tensor(np.zeros(n, dtype=self.dtype), requires_grad=True)

    # -- parameter bookkeeping ------------------------------------------------

    def _slots(self):
        """(name, holder, attr_or_key) for every learnable block; the holder
        is an object with the attribute, or a (list/dict, index) pair."""
        slots = []
        for i, layer in enumerate(self.enc_convs):
            slots.append((f"encoder.conv{i}.kernel", layer, "kernel"))
            slots.append((f"encoder.conv{i}.bias", layer, "bias"))
        for i, p in enumerate(self.enc_gdn):
            slots.append((f"encoder.gdn{i}.beta", p, "beta"))
            slots.append((f"encoder.gdn{i}.gamma", p, "gamma"))
        for i, layer in enumerate(self.dec_convs):
            slots.append((f"decoder.tconv{i}.kernel", layer, "kernel"))
            slots.append((f"decoder.tconv{i}.bias", layer, "bias"))
        for i, p in enumerate(self.dec_igdn):
            slots.append((f"decoder.igdn{i}.beta", p, "beta"))
            slots.append((f"decoder.igdn{i}.gamma", p, "gamma"))
        for i, m in enumerate(self.density.matrices):
            slots.append((f"density.matrix{i}", self.density.matrices, i))
        for i, b in enumerate(self.density.biases):
            slots.append((f"density.bias{i}", self.density.biases, i))
        for i, g in enumerate(self.density.gates):
            slots.append((f"density.gate{i}", self.density.gates, i))
        for label, nets in (("modulate", self.mod_nets), ("demodulate", self.demod_nets)):
            for i, net in enumerate(nets):
                for part in ("w1", "b1", "w2", "b2"):
                    slots.append((f"{label}{i}.{part}", net, part))
        for lam in self.scale_table:
            slots.append((f"scale.{lam:g}", self.scale_table, lam))
        return slots

    @staticmethod
    def _get_slot(holder, key):
        if isinstance(holder, (list, dict)):
            return holder[key]
        return getattr(holder, key)

    @staticmethod
    def _set_slot(holder, key, tensor):
        if isinstance(holder, (list, dict)):
            holder[key] = tensor
        else:
            setattr(holder, key, tensor)

    def parameters(self):
        """Ordered name -> Tensor map covering every learnable block."""
        return {name: self._get_slot(holder, key) for name, holder, key in self._slots()}

    def adopt_parameters(self, named):
        """Rebind parameter slots to the given Tensor objects.

        Gradient checks and model surgery need the supplied tensors to be
        the actual graph inputs, not copies of their values.
        """
        slots = {name: (holder, key) for name, holder, key in self._slots()}
        unknown = set(named) - set(slots)
        if unknown:
            raise ContractViolation(f"unknown parameter names: {sorted(unknown)}")
        for name, tensor in named.items():
            holder, key = slots[name]
            current = self._get_slot(holder, key)
            if tuple(current.shape) != tuple(tensor.shape):
                raise ContractViolation(
                    f"parameter {name!r} has shape {tuple(current.shape)}, "
                    f"got {tuple(tensor.shape)}"
                )
            self._set_slot(holder, key, tensor)

    def gdn_blocks(self):
        return list(self.enc_gdn) + list(self.dec_igdn)

    # -- forward maps ----------------------------------------------------------

    def modulation_vectors(self, lambda_hat):
        """Encoder-side per-stage positive scaling vectors m_k(lambda)."""
        return [net(lambda_hat) for net in self.mod_nets]

    def demodulation_vectors(self, lambda_hat):
        """Decoder-side vectors; parameters are independent of the encoder's."""
        return [net(lambda_hat) for net in self.demod_nets]

    def encode(self, x, lambda_hat=None):
        """Image batch (N, 3, H, W) in [0, 1] -> latent (N, C, H/16, W/16).

        Spatial sides must be multiples of 16 (the caller pads).
        """
        if x.ndim != 4 or x.shape[1] != IMAGE_CHANNELS:
            raise ContractViolation(f"encode expects (N, 3, H, W), got {x.shape}")
        if x.shape[2] % DOWNSAMPLE or x.shape[3] % DOWNSAMPLE:
            raise ContractViolation(
                f"spatial sides must be multiples of {DOWNSAMPLE}, got {x.shape[2]}x{x.shape[3]}"
            )
        if self.mod_nets and lambda_hat is None:
            raise ContractViolation("modulated encoder needs a normalized tradeoff")
        mods = self.modulation_vectors(lambda_hat) if self.mod_nets else None
        h = x
        for i, (conv, gdn) in enumerate(zip(self.enc_convs, self.enc_gdn)):
            h = conv(h)
            if mods is not None:
                h = T.channel_scale(h, mods[i])
            h = gdn_forward(h, gdn)
        return h

    def decode(self, z, lambda_hat=None, clamp=False):
        """Latent (N, C, h, w) -> image batch (N, 3, 16h, 16w).

        ``clamp`` clips to [0, 1] for inference; the training path leaves
        the output unclamped so gradients flow.
        """
        if z.ndim != 4 or z.shape[1] != self.config.channels:
            raise ContractViolation(
                f"decode expects (N, {self.config.channels}, h, w), got {z.shape}"
            )
        if self.demod_nets and lambda_hat is None:
            raise ContractViolation("modulated decoder needs a normalized tradeoff")
        demods = self.demodulation_vectors(lambda_hat) if self.demod_nets else None
        h = z
        if demods is not None:
            h = T.channel_scale(h, demods[0])
        for i, conv in enumerate(self.dec_convs):
            h = conv(h)
            last = i == len(self.dec_convs) - 1
            if not last:
                if demods is not None:
                    h = T.channel_scale(h, demods[i + 1])
                h = igdn_forward(h, self.dec_igdn[i])
        if clamp:
            h = T.Tensor(np.clip(h.data, 0.0, 1.0))
        return h

    def scale_vector(self, lam):
        if self.mode != "bottleneck":
            raise ContractViolation("scaling vectors only exist in bottleneck mode")
        return self.scale_table[float(lam)]


def bottleneck_scale_apply(z, s_vec):
    """z * s per channel; finer effective quantization bins for larger s."""
    _check_scale(s_vec)
    return T.channel_scale(z, s_vec)


def bottleneck_scale_invert(z_hat, s_vec):
    """Undo the scaling with the elementwise reciprocal 1 / s."""
    _check_scale(s_vec)
    ones = T.Tensor(np.ones_like(s_vec.data))
    return T.channel_scale(z_hat, T.div(ones, s_vec))


def _check_scale(s_vec):
    if np.any(s_vec.data <= 0):
        idx = int(np.argwhere(s_vec.data <= 0)[0][0])
        raise ContractViolation(f"scaling vector must be strictly positive; entry {idx} is not")


def param_count(model_or_config, tradeoffs=None):
    """Exact per-component parameter counts.

    Accepts a CodecModel or a CodecConfig (the count is a pure function
    of the architecture).  Returns a dict with the shared autoencoder +
    entropy model, the modulation overhead, the scaling-table overhead,
    and derived totals.
    """
    if isinstance(model_or_config, CodecModel):
        named = model_or_config.parameters()
        shared = sum(t.size for n, t in named.items()
                     if not n.startswith(("modulate", "demodulate", "scale.")))
        modulation = sum(t.size for n, t in named.items()
                         if n.startswith(("modulate", "demodulate")))
        scaling = sum(t.size for n, t in named.items() if n.startswith("scale."))
        n_tradeoffs = len(model_or_config.tradeoffs)
    else:
        config = model_or_config
        tr = tradeoffs if tradeoffs is not None else TradeoffSet()
        c = config.channels
        shared = 0
        in_ch = IMAGE_CHANNELS
        for k, _, _ in ENCODER_STAGES:
            shared += c * in_ch * k * k + c        # conv kernel + bias
            shared += c + c * c                    # GDN beta + gamma
            in_ch = c
        stages = list(reversed(ENCODER_STAGES))
        for i, (k, _, _) in enumerate(stages):
            out_ch = IMAGE_CHANNELS if i == len(stages) - 1 else c
            shared += c * out_ch * k * k + out_ch  # tconv kernel + bias
            if i < len(stages) - 1:
                shared += c + c * c                # IGDN beta + gamma
        per_channel = (3 * 1 + 3 * 3 + 3 * 3 + 1 * 3) + (3 + 3 + 3 + 1) + (3 + 3 + 3)
        shared += per_channel * c                  # factorized density
        per_net = (1 * config.mod_hidden + config.mod_hidden) + (config.mod_hidden * c + c)
        modulation = 6 * per_net
        scaling = len(tr) * c
        n_tradeoffs = len(tr)

    mae_total = shared + modulation
    return {
        "shared": shared,
        "modulation": modulation,
        "scaling": scaling,
        "mae_total": mae_total,
        "bottleneck_total": shared + scaling,
        "independent_total": n_tradeoffs * shared,
    }
