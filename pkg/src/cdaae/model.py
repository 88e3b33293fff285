"""Staged adversarial autoencoder with a configurable encoder-to-decoder skip.

The synthesizer is split into four stages around the skip junction: a
low-level encoder producing reusable features, a high-level encoder mapping
those features to a 100-d latent code, a difference decoder that turns the
latent code plus a target expression label into a bounded feature-space
offset, and an output decoder that renders the sum of low-level features and
offset back to a 32x32 RGB image. Two discriminators regularize the latent
distribution and sharpen the generated images.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import ops
from .tensor import DimensionError, Tensor

LATENT_DIM = 100
IMG_SIZE = 32
IMG_CHANNELS = 3
LABEL_DIMS = {"au": 12, "emotion": 8}

ENC_CHANNELS = (32, 64, 128, 256)
ENC_KERNEL, ENC_STRIDE, ENC_PAD = 5, 2, 2
DEC_KERNEL, DEC_STRIDE, DEC_PAD = 4, 2, 1
LEAKY_SLOPE = 0.2
DISC_OUTPUT_EPS = 1e-7
LATENT_DISC_WIDTHS = (64, 32)


class SkipPosition(str, Enum):
    """Where the encoder-to-decoder feedforward connection taps in.

    ``P1``/``P2``/``P3`` tap after encoder conv layer 1/2/3 (feature
    resolutions 16/8/4); ``NONE`` removes the connection entirely, leaving
    the plain conditional adversarial autoencoder as a control.
    """

    NONE = "none"
    P1 = "p1"
    P2 = "p2"
    P3 = "p3"

    @property
    def tap(self) -> int:
        return {"none": 0, "p1": 1, "p2": 2, "p3": 3}[self.value]


# leaky_relu(0.2) shrinks activation variance by (1 + slope^2) / 2 per layer;
# layers feeding it carry the matching gain so signal scale survives the
# depth instead of collapsing (and then being blown back up by training)
LEAKY_GAIN = math.sqrt(2.0 / (1.0 + LEAKY_SLOPE**2))


def _glorot(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype, gain: float = 1.0) -> Tensor:
    limit = gain * math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape).astype(dtype), requires_grad=True)


def _kaiming(rng: np.random.Generator, shape, fan_in: int, dtype, gain: float) -> Tensor:
    limit = gain * math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-limit, limit, size=shape).astype(dtype), requires_grad=True)


def _zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def _activate(t: Tensor, activation: str | None) -> Tensor:
    if activation is None:
        return t
    if activation == "leaky_relu":
        return ops.leaky_relu(t, LEAKY_SLOPE)
    if activation == "tanh":
        return ops.tanh(t)
    if activation == "sigmoid":
        return ops.sigmoid(t)
    raise ValueError(f"unknown activation {activation!r}")


class _Conv:
    def __init__(self, name, in_ch, out_ch, rng, dtype, activation,
                 kernel=ENC_KERNEL, stride=ENC_STRIDE, pad=ENC_PAD):
        fan = kernel * kernel
        self.name = name
        self.stride = stride
        self.pad = pad
        self.activation = activation
        if activation == "leaky_relu":
            self.kernel = _kaiming(rng, (out_ch, in_ch, kernel, kernel), in_ch * fan, dtype, LEAKY_GAIN)
        else:
            self.kernel = _glorot(rng, (out_ch, in_ch, kernel, kernel), in_ch * fan, out_ch * fan, dtype)
        self.bias = _zeros((out_ch,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return _activate(ops.conv2d(x, self.kernel, self.bias, self.stride, self.pad), self.activation)

    def params(self):
        return [(f"{self.name}.kernel", self.kernel), (f"{self.name}.bias", self.bias)]


class _Deconv:
    def __init__(self, name, in_ch, out_ch, rng, dtype, activation,
                 kernel=DEC_KERNEL, stride=DEC_STRIDE, pad=DEC_PAD):
        fan = kernel * kernel
        self.name = name
        self.stride = stride
        self.pad = pad
        self.activation = activation
        if activation == "leaky_relu":
            self.kernel = _kaiming(rng, (in_ch, out_ch, kernel, kernel), in_ch * fan, dtype, LEAKY_GAIN)
        else:
            self.kernel = _glorot(rng, (in_ch, out_ch, kernel, kernel), in_ch * fan, out_ch * fan, dtype)
        self.bias = _zeros((out_ch,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return _activate(
            ops.conv2d_transpose(x, self.kernel, self.bias, self.stride, self.pad), self.activation
        )

    def params(self):
        return [(f"{self.name}.kernel", self.kernel), (f"{self.name}.bias", self.bias)]


class _Dense:
    def __init__(self, name, in_dim, out_dim, rng, dtype, activation, init_scale=1.0):
        self.name = name
        self.activation = activation
        if activation == "leaky_relu":
            self.weight = _kaiming(rng, (in_dim, out_dim), in_dim, dtype, LEAKY_GAIN * init_scale)
        else:
            self.weight = _glorot(rng, (in_dim, out_dim), in_dim, out_dim, dtype, init_scale)
        self.bias = _zeros((out_dim,), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return _activate(ops.dense(x, self.weight, self.bias), self.activation)

    def params(self):
        return [(f"{self.name}.weight", self.weight), (f"{self.name}.bias", self.bias)]


class CdaaeModel:
    """All parameters and forward paths of the conditional difference model.

    The instance is single-threaded while training (tensors mutate during
    optimizer steps); once training stops the parameters are plain read-only
    arrays and the forward methods are safe to call concurrently.
    """

    def __init__(
        self,
        skip: SkipPosition | str = SkipPosition.P2,
        label_mode: str = "au",
        seed: int = 0,
        dtype=np.float32,
        channels: tuple[int, int, int, int] = ENC_CHANNELS,
    ) -> None:
        if label_mode not in LABEL_DIMS:
            raise ValueError(f"unknown label_mode {label_mode!r}")
        self.skip = SkipPosition(skip)
        self.label_mode = label_mode
        self.label_dim = LABEL_DIMS[label_mode]
        self.dtype = np.dtype(dtype)
        self.channels = tuple(channels)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0DE]))
        tap = self.skip.tap
        c = self.channels
        bottom = IMG_SIZE // 2 ** len(c)  # spatial size after the conv stack

        enc_io = [(IMG_CHANNELS, c[0]), (c[0], c[1]), (c[1], c[2]), (c[2], c[3])]
        self.enc_convs = [
            _Conv(f"enc{i + 1}", ic, oc, rng, self.dtype,
                  "tanh" if i + 1 == tap else "leaky_relu")
            for i, (ic, oc) in enumerate(enc_io)
        ]
        self.enc_fc = _Dense("enc_fc", c[3] * bottom * bottom, LATENT_DIM, rng, self.dtype, None)

        self._bottom = bottom
        self.dec_fc = _Dense(
            "dec_fc", LATENT_DIM + self.label_dim, c[3] * bottom * bottom, rng, self.dtype,
            "tanh" if tap == 0 else "leaky_relu",
        )
        dec_io = [(c[3], c[2]), (c[2], c[1]), (c[1], c[0]), (c[0], IMG_CHANNELS)]
        self._g1_deconvs = 4 - tap if tap else 0
        self.dec_deconvs = [
            _Deconv(f"dec{j + 1}", ic, oc, rng, self.dtype,
                    "tanh" if (j + 1 == self._g1_deconvs or j == 3) else "leaky_relu")
            for j, (ic, oc) in enumerate(dec_io)
        ]

        # output heads start at a tenth of the usual scale so fresh
        # discriminators score everything near 0.5
        d1, d2 = LATENT_DISC_WIDTHS
        # the latent discriminator also sees mean(z^2): an MLP alone is
        # asymptotically linear, which leaves outward escape directions the
        # encoder can exploit; the energy feature makes far-out codes
        # classifiable as fake in every direction
        self.dlat = [
            _Dense("dlat1", LATENT_DIM + 1, d1, rng, self.dtype, "leaky_relu"),
            _Dense("dlat2", d1, d2, rng, self.dtype, "leaky_relu"),
            _Dense("dlat3", d2, 1, rng, self.dtype, "sigmoid", init_scale=0.1),
        ]
        self._energy_weight = Tensor(
            np.full((LATENT_DIM, 1), 1.0 / LATENT_DIM, dtype=self.dtype), requires_grad=False
        )
        self._energy_bias = Tensor(np.zeros(1, dtype=self.dtype), requires_grad=False)
        dimg_io = [(IMG_CHANNELS, c[0]), (c[0], c[1]), (c[1], c[2])]
        self.dimg_convs = [
            _Conv(f"dimg{i + 1}", ic, oc, rng, self.dtype, "leaky_relu") for i, (ic, oc) in enumerate(dimg_io)
        ]
        dimg_spatial = IMG_SIZE // 2 ** len(dimg_io)
        self.dimg_fc = _Dense(
            "dimg_fc", c[2] * dimg_spatial * dimg_spatial, 1, rng, self.dtype, "sigmoid", init_scale=0.1
        )
        self._dimg_flat = c[2] * dimg_spatial * dimg_spatial

    # -- forward stages -----------------------------------------------------

    def _check_image(self, x: Tensor, who: str) -> None:
        if x.ndim != 4 or x.shape[1:] != (IMG_CHANNELS, IMG_SIZE, IMG_SIZE):
            raise DimensionError(
                f"{who}: expected (N,{IMG_CHANNELS},{IMG_SIZE},{IMG_SIZE}) images, got {x.shape}"
            )

    def _check_labels(self, labels: Tensor, n: int) -> None:
        if labels.ndim != 2 or labels.shape != (n, self.label_dim):
            raise DimensionError(
                f"labels: expected ({n},{self.label_dim}) for {self.label_mode} mode, got {labels.shape}"
            )

    def encode_stage1(self, x: Tensor) -> Tensor:
        """Low-level features reused at the skip junction; identity when the skip is off."""
        self._check_image(x, "encode_stage1")
        f = x
        for layer in self.enc_convs[: self.skip.tap]:
            f = layer(f)
        return f

    def encode_stage2(self, f: Tensor) -> Tensor:
        """Map stage-1 features to the unbounded 100-d latent code."""
        h = f
        for layer in self.enc_convs[self.skip.tap :]:
            h = layer(h)
        n = h.shape[0]
        h = ops.reshape(h, (n, self.channels[3] * self._bottom * self._bottom))
        return self.enc_fc(h)

    def decode_difference(self, z: Tensor, labels: Tensor) -> Tensor:
        """Decode latent code + target label into a tanh-bounded feature offset."""
        if z.ndim != 2 or z.shape[1] != LATENT_DIM:
            raise DimensionError(f"decode_difference: expected (N,{LATENT_DIM}) latent, got {z.shape}")
        self._check_labels(labels, z.shape[0])
        h = ops.concat(z, labels, axis=1)
        h = self.dec_fc(h)
        h = ops.reshape(h, (z.shape[0], self.channels[3], self._bottom, self._bottom))
        for layer in self.dec_deconvs[: self._g1_deconvs]:
            h = layer(h)
        return h

    def decode_output(self, h: Tensor) -> Tensor:
        """Render junction features to images in [-1, 1]."""
        out = h
        for layer in self.dec_deconvs[self._g1_deconvs :]:
            out = layer(out)
        return out

    def synthesize(self, x: Tensor, labels: Tensor) -> Tensor:
        """Same-identity image wearing the target expression."""
        f = self.encode_stage1(x)
        z = self.encode_stage2(f)
        d = self.decode_difference(z, labels)
        h = d if self.skip.tap == 0 else ops.add(f, d)
        return self.decode_output(h)

    def discriminate_latent(self, z: Tensor) -> Tensor:
        """Probability that a latent vector came from the Gaussian prior."""
        if z.ndim != 2 or z.shape[1] != LATENT_DIM:
            raise DimensionError(f"discriminate_latent: expected (N,{LATENT_DIM}), got {z.shape}")
        energy = ops.dense(ops.mul(z, z), self._energy_weight, self._energy_bias)
        h = ops.concat(z, energy, axis=1)
        for layer in self.dlat:
            h = layer(h)
        return ops.clamp(h, DISC_OUTPUT_EPS, 1.0 - DISC_OUTPUT_EPS)

    def discriminate_image(self, x: Tensor) -> Tensor:
        """Probability that an image is a real photograph."""
        self._check_image(x, "discriminate_image")
        h = x
        for layer in self.dimg_convs:
            h = layer(h)
        h = ops.reshape(h, (x.shape[0], self._dimg_flat))
        h = self.dimg_fc(h)
        return ops.clamp(h, DISC_OUTPUT_EPS, 1.0 - DISC_OUTPUT_EPS)

    # -- parameter access ---------------------------------------------------

    @property
    def g1_input_dim(self) -> int:
        return LATENT_DIM + self.label_dim

    def ae_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for layer in [*self.enc_convs, self.enc_fc, self.dec_fc, *self.dec_deconvs]:
            out.extend(layer.params())
        return out

    def disc_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for layer in [*self.dlat, *self.dimg_convs, self.dimg_fc]:
            out.extend(layer.params())
        return out

    def parameters(self) -> list[tuple[str, Tensor]]:
        return self.ae_parameters() + self.disc_parameters()

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.parameters()}

    def load_state(self, tensors: dict[str, np.ndarray]) -> None:
        for name, p in self.parameters():
            if name not in tensors:
                raise KeyError(f"checkpoint missing parameter {name}")
            arr = np.asarray(tensors[name], dtype=self.dtype)
            if arr.shape != p.data.shape:
                raise DimensionError(f"parameter {name}: shape {arr.shape} != {p.data.shape}")
            p.data = arr.copy()


@dataclass
class LossBundle:
    """All scalar loss terms of a training step, still attached to the graph."""

    l_r: Tensor
    l_e_d: Tensor
    l_e_g: Tensor
    l_g_d: Tensor
    l_g_g: Tensor
    total_ae: Tensor

    def scalars(self) -> dict[str, float]:
        return {
            "l_r": self.l_r.item(),
            "l_e_d": self.l_e_d.item(),
            "l_e_g": self.l_e_g.item(),
            "l_g_d": self.l_g_d.item(),
            "l_g_g": self.l_g_g.item(),
            "total_ae": self.total_ae.item(),
        }


def disc_phase_losses(
    model: CdaaeModel, x_s: Tensor, labels: Tensor, z_prior: Tensor
) -> tuple[Tensor, Tensor]:
    """Discriminator-side losses only: score prior samples / real images as 1
    against detached encoder and generator outputs as 0, so gradients touch
    only discriminator parameters."""
    n = x_s.shape[0]
    if z_prior.shape != (n, LATENT_DIM):
        raise DimensionError(f"z_prior: expected ({n},{LATENT_DIM}), got {z_prior.shape}")
    z, x_hat = _forward_generator(model, x_s, labels)
    ones = Tensor(np.ones((n, 1), dtype=model.dtype))
    zeros = Tensor(np.zeros((n, 1), dtype=model.dtype))
    l_e_d = ops.add(
        ops.bce_loss(model.discriminate_latent(z_prior), ones),
        ops.bce_loss(model.discriminate_latent(z.detach()), zeros),
    )
    l_g_d = ops.add(
        ops.bce_loss(model.discriminate_image(x_s), ones),
        ops.bce_loss(model.discriminate_image(x_hat.detach()), zeros),
    )
    l_e_d.check_finite("l_e_d")
    l_g_d.check_finite("l_g_d")
    return l_e_d, l_g_d


def _forward_generator(model: CdaaeModel, x_s: Tensor, labels: Tensor) -> tuple[Tensor, Tensor]:
    f = model.encode_stage1(x_s)
    z = model.encode_stage2(f)
    d = model.decode_difference(z, labels)
    h = d if model.skip.tap == 0 else ops.add(f, d)
    return z, model.decode_output(h)


def compute_losses(
    model: CdaaeModel,
    x_s: Tensor,
    x_t: Tensor,
    labels: Tensor,
    z_prior: Tensor,
    alpha: float = 1.0,
    beta1: float = 1e-2,
    beta2: float = 1e-3,
) -> LossBundle:
    """Reconstruction plus both adversarial losses for one batch.

    Discriminator-side terms score prior samples / real images against
    detached encoder and generator outputs, so their gradients touch only
    discriminator parameters. Generator-side terms use the non-saturating
    form (push D towards "real" on generated data) and flow through the
    frozen discriminators back into the autoencoder.
    """
    n = x_s.shape[0]
    if z_prior.shape != (n, LATENT_DIM):
        raise DimensionError(f"z_prior: expected ({n},{LATENT_DIM}), got {z_prior.shape}")

    z, x_hat = _forward_generator(model, x_s, labels)
    ones = Tensor(np.ones((n, 1), dtype=model.dtype))
    zeros = Tensor(np.zeros((n, 1), dtype=model.dtype))

    l_r = ops.mse_loss(x_t, x_hat)
    l_e_d = ops.add(
        ops.bce_loss(model.discriminate_latent(z_prior), ones),
        ops.bce_loss(model.discriminate_latent(z.detach()), zeros),
    )
    l_g_d = ops.add(
        ops.bce_loss(model.discriminate_image(x_s), ones),
        ops.bce_loss(model.discriminate_image(x_hat.detach()), zeros),
    )
    l_e_g = ops.bce_loss(model.discriminate_latent(z), ones)
    l_g_g = ops.bce_loss(model.discriminate_image(x_hat), ones)
    total = ops.add(ops.scale(l_r, alpha), ops.add(ops.scale(l_e_g, beta1), ops.scale(l_g_g, beta2)))
    for term, name in ((l_r, "l_r"), (l_e_d, "l_e_d"), (l_g_d, "l_g_d"), (total, "total_ae")):
        term.check_finite(name)
    return LossBundle(l_r=l_r, l_e_d=l_e_d, l_e_g=l_e_g, l_g_d=l_g_d, l_g_g=l_g_g, total_ae=total)


def ae_phase_losses(
    model: CdaaeModel,
    x_s: Tensor,
    x_t: Tensor,
    labels: Tensor,
    alpha: float,
    beta1: float,
    beta2: float,
) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Autoencoder-side losses only: (l_r, l_e_g, l_g_g, total_ae)."""
    n = x_s.shape[0]
    z, x_hat = _forward_generator(model, x_s, labels)
    ones = Tensor(np.ones((n, 1), dtype=model.dtype))
    l_r = ops.mse_loss(x_t, x_hat)
    l_e_g = ops.bce_loss(model.discriminate_latent(z), ones)
    l_g_g = ops.bce_loss(model.discriminate_image(x_hat), ones)
    total = ops.add(ops.scale(l_r, alpha), ops.add(ops.scale(l_e_g, beta1), ops.scale(l_g_g, beta2)))
    l_r.check_finite("l_r")
    total.check_finite("total_ae")
    return l_r, l_e_g, l_g_g, total
