"""Light-AE / Deep-AE encoders with single- or multi-head MLP decoders.

A model is an encoder (shared per-point MLP followed by a global max-pool)
and ``heads`` independent decoder MLPs that all read the same latent vector.
Each head emits ``output_points // heads`` points; the heads' outputs are
concatenated in head order to form the reconstruction.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigError, DimensionError, EmptyInputError
from .tensor import (
    DEFAULT_DTYPE,
    BatchNorm,
    Dense,
    MaxPoolPoints,
    PointwiseLinear,
    ReLU,
    Sequential,
    he_init,
    xavier_uniform_init,
)

LIGHT_AE = "LightAE"
DEEP_AE = "DeepAE"
PTV3 = "PTv3"
CUSTOM = "Custom"

# per-point encoder widths (input 3 channels first)
ENCODER_WIDTHS = {
    LIGHT_AE: (3, 64, 128, 128),
    DEEP_AE: (3, 64, 64, 64, 128, 1024),
}

# latent width and the hidden-layer widths used for decoders of depth 1..5;
# a depth-d decoder uses the first d-1 hidden widths followed by the output layer
DECODER_TABLE = {
    LIGHT_AE: (128, (256, 512, 1024, 1024)),
    DEEP_AE: (1024, (512, 1024, 1024, 1024)),
    PTV3: (512, (256, 512, 1024, 1024)),
}

# backbones whose decoder carries BatchNorm after each hidden layer
DECODER_BATCHNORM = {LIGHT_AE: False, DEEP_AE: True, PTV3: False}


def _canonical_kind(kind):
    lookup = {k.lower().replace("-", "").replace("_", ""): k
              for k in (LIGHT_AE, DEEP_AE, PTV3, CUSTOM)}
    key = str(kind).lower().replace("-", "").replace("_", "")
    if key not in lookup:
        raise ConfigError(f"unknown backbone {kind!r}")
    return lookup[key]


@dataclass
class EncoderSpec:
    kind: str = LIGHT_AE
    widths: tuple | None = None

    def __post_init__(self):
        self.kind = _canonical_kind(self.kind)
        if self.kind == PTV3:
            raise ConfigError("the PTv3 encoder is not available; only its decoder shapes are audited")
        if self.widths is None:
            if self.kind == CUSTOM:
                raise ConfigError("a Custom encoder needs explicit widths")
            self.widths = ENCODER_WIDTHS[self.kind]
        self.widths = tuple(int(w) for w in self.widths)
        if self.kind != CUSTOM and self.widths != ENCODER_WIDTHS[self.kind]:
            raise ConfigError(f"{self.kind} encoder widths are fixed at {ENCODER_WIDTHS[self.kind]}")
        if len(self.widths) < 2 or self.widths[0] != 3:
            raise ConfigError("encoder widths must start with 3 input channels")

    @property
    def latent_dim(self):
        return self.widths[-1]


@dataclass
class DecoderSpec:
    """Decoder shape. ``hidden_dims`` lists every layer's output width,
    including the final ``(K/M)*3`` layer, so ``len(hidden_dims) == depth``."""

    backbone: str = LIGHT_AE
    depth: int = 1
    heads: int = 1
    output_points: int = 2048
    hidden_dims: tuple | None = None
    use_batchnorm: bool | None = None
    latent_dim: int | None = None

    def __post_init__(self):
        self.backbone = _canonical_kind(self.backbone)
        self.depth = int(self.depth)
        self.heads = int(self.heads)
        self.output_points = int(self.output_points)
        if self.heads < 1:
            raise ConfigError("heads must be >= 1")
        if self.output_points < 1:
            raise ConfigError("output_points must be >= 1")
        if self.output_points % self.heads:
            raise ConfigError(
                f"output_points K={self.output_points} is not divisible by heads M={self.heads}"
            )
        out_width = self.points_per_head * 3
        if self.backbone == CUSTOM:
            if self.hidden_dims is None or self.latent_dim is None:
                raise ConfigError("a Custom decoder needs hidden_dims and latent_dim")
            hidden = tuple(int(h) for h in self.hidden_dims)
            if len(hidden) != self.depth or hidden[-1] != out_width:
                raise ConfigError("Custom hidden_dims must have depth entries ending in (K/M)*3")
            self.hidden_dims = hidden
            if self.use_batchnorm is None:
                self.use_batchnorm = False
            return
        if not 1 <= self.depth <= 5:
            raise ConfigError(f"decoder depth must be in 1..5, got {self.depth}")
        latent, widths = DECODER_TABLE[self.backbone]
        expected = tuple(widths[: self.depth - 1]) + (out_width,)
        if self.hidden_dims is not None and tuple(int(h) for h in self.hidden_dims) != expected:
            raise ConfigError(
                f"hidden_dims {tuple(self.hidden_dims)} disagree with the {self.backbone} "
                f"depth-{self.depth} table row {expected}"
            )
        if self.latent_dim is not None and int(self.latent_dim) != latent:
            raise ConfigError(f"{self.backbone} decoders read a {latent}-dim latent")
        self.hidden_dims = expected
        self.latent_dim = latent
        if self.use_batchnorm is None:
            self.use_batchnorm = DECODER_BATCHNORM[self.backbone]

    @property
    def points_per_head(self):
        return self.output_points // self.heads

    @property
    def layer_dims(self):
        return (self.latent_dim,) + tuple(self.hidden_dims)


def decoder_param_count(dec: DecoderSpec):
    """Trainable scalars in all heads of a decoder, from layer shapes alone."""
    dims = dec.layer_dims
    per_head = sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
    if dec.use_batchnorm:
        per_head += sum(2 * h for h in dims[1:-1])
    return per_head * dec.heads


def spec_to_dict(enc, dec):
    return {"encoder": asdict(enc), "decoder": asdict(dec)}


def spec_from_dict(d):
    e = dict(d["encoder"])
    if e.get("widths") is not None:
        e["widths"] = tuple(e["widths"])
    dd = dict(d["decoder"])
    if dd.get("hidden_dims") is not None:
        dd["hidden_dims"] = tuple(dd["hidden_dims"])
    return EncoderSpec(**e), DecoderSpec(**dd)


@dataclass
class Model:
    encoder_spec: EncoderSpec
    decoder_spec: DecoderSpec
    encoder: Sequential
    heads: list
    seed: int = 0
    dtype: type = DEFAULT_DTYPE

    @property
    def n_heads(self):
        return len(self.heads)

    @property
    def latent_dim(self):
        return self.encoder_spec.latent_dim

    @property
    def output_points(self):
        return self.decoder_spec.output_points

    def encode(self, clouds, train=False):
        """``[B, 3, N]`` point batch to ``[B, latent_dim]`` latent codes."""
        clouds = np.asarray(clouds)
        if clouds.ndim != 3 or clouds.shape[1] != 3:
            raise DimensionError(f"expected clouds shaped [B, 3, N], got {list(clouds.shape)}")
        if clouds.shape[2] == 0:
            raise EmptyInputError("cannot encode an empty cloud")
        return self.encoder.forward(clouds.astype(self.dtype, copy=False), train=train)

    def decode(self, latent, train=False):
        """Latent ``[B, latent_dim]`` to a list of ``M`` clouds ``[B, K/M, 3]``."""
        latent = np.asarray(latent)
        if latent.ndim != 2 or latent.shape[1] != self.latent_dim:
            raise DimensionError(
                f"expected latent shaped [B, {self.latent_dim}], got {list(latent.shape)}"
            )
        kh = self.decoder_spec.points_per_head
        return [head.forward(latent, train=train).reshape(latent.shape[0], kh, 3)
                for head in self.heads]

    def forward(self, clouds, train=True):
        return self.decode(self.encode(clouds, train=train), train=train)

    def reconstruct(self, clouds, train=False):
        """Encode, decode and concatenate heads in index order: ``[B, K, 3]``."""
        return np.concatenate(self.forward(clouds, train=train), axis=1)

    def backward(self, head_grads):
        """Chain per-head point gradients ``[B, K/M, 3]`` back to the input.

        Parameter gradients accumulate in every layer; call :meth:`zero_grad`
        between steps. Returns the gradient with respect to the input clouds.
        """
        if len(head_grads) != self.n_heads:
            raise DimensionError(f"expected {self.n_heads} head gradients, got {len(head_grads)}")
        latent_grad = None
        for head, g in zip(self.heads, head_grads):
            g = np.asarray(g, dtype=self.dtype).reshape(g.shape[0], -1)
            gl = head.backward(g)
            latent_grad = gl if latent_grad is None else latent_grad + gl
        return self.encoder.backward(latent_grad)

    def zero_grad(self):
        self.encoder.zero_grad()
        for head in self.heads:
            head.zero_grad()

    def networks(self):
        yield self.encoder
        yield from self.heads

    def named_params(self):
        """``(name, param, layer, key)`` in declaration order."""
        for net in self.networks():
            yield from net.named_params()

    def named_grads(self):
        for name, p, layer, key in self.named_params():
            yield name, p, layer.grads[key]

    def named_buffers(self):
        for net in self.networks():
            yield from net.named_buffers()

    def state_arrays(self):
        """All parameters then all buffers, keyed by name, in declaration order."""
        out = {name: p for name, p, _, _ in self.named_params()}
        out.update(dict(self.named_buffers()))
        return out

    def spec_dict(self):
        return spec_to_dict(self.encoder_spec, self.decoder_spec)


def _encoder_layers(enc, dtype):
    layers = []
    widths = enc.widths
    n = len(widths) - 1
    for i, (cin, cout) in enumerate(zip(widths[:-1], widths[1:])):
        layers.append(PointwiseLinear(cin, cout, dtype=dtype))
        layers.append(BatchNorm(cout, dtype=dtype))
        if i < n - 1:
            layers.append(ReLU())
    layers.append(MaxPoolPoints())
    return layers


def _head_layers(dec, dtype):
    layers = []
    dims = dec.layer_dims
    n = len(dims) - 1
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        layers.append(Dense(a, b, dtype=dtype))
        if i < n - 1:
            if dec.use_batchnorm:
                layers.append(BatchNorm(b, dtype=dtype))
            layers.append(ReLU())
    return layers


def _init(net, rng):
    """He init for linear layers feeding a ReLU, Xavier-uniform otherwise."""
    layers = net.layers
    for i, layer in enumerate(layers):
        if not isinstance(layer, (PointwiseLinear, Dense)):
            continue
        j = i + 1
        while j < len(layers) and isinstance(layers[j], BatchNorm):
            j += 1
        if j < len(layers) and isinstance(layers[j], ReLU):
            he_init(layer, rng)
        else:
            xavier_uniform_init(layer, rng)


def build_model(enc, dec, seed=0, dtype=DEFAULT_DTYPE):
    """Construct and initialise a model; identical seeds give identical weights."""
    if not isinstance(enc, EncoderSpec):
        enc = EncoderSpec(enc)
    if dec.backbone != CUSTOM and dec.backbone != enc.kind:
        raise ConfigError(f"decoder backbone {dec.backbone} does not match encoder {enc.kind}")
    if dec.latent_dim != enc.latent_dim:
        raise ConfigError(
            f"decoder expects a {dec.latent_dim}-dim latent, encoder gives {enc.latent_dim}"
        )
    rng = np.random.default_rng(seed)
    encoder = Sequential(_encoder_layers(enc, dtype), name="encoder")
    heads = [Sequential(_head_layers(dec, dtype), name=f"head{i}") for i in range(dec.heads)]
    _init(encoder, rng)
    for head in heads:
        _init(head, rng)
    return Model(enc, dec, encoder, heads, seed=int(seed), dtype=dtype)


def count_parameters(model, scope="decoder"):
    """Exact trainable-scalar count (weights, biases, BatchNorm scale/shift).

    ``scope`` is ``"decoder"`` (all heads; the convention of the published
    decoder tables), ``"encoder"`` or ``"all"``. Running statistics are not
    trainable and never counted.
    """
    enc = model.encoder.n_params()
    dec = sum(h.n_params() for h in model.heads)
    if scope == "decoder":
        return dec
    if scope == "encoder":
        return enc
    if scope == "all":
        return enc + dec
    raise ValueError(f"unknown scope {scope!r}")
