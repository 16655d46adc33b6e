"""Separable convolutional network with exact hand-written backpropagation.

Tensors are numpy arrays with layout (batch, height, width, channels).

A block applies a depthwise spatial convolution, then a pointwise (1x1)
channel mix, then batch normalization and ReLU; the final block of a model
stops after the pointwise step (no normalization, no activation).

Depthwise convolution uses true convolution orientation (kernel flipped):

    y[h, w, m*N + j] = sum_{k1, k2} kern[k1, k2, j] * x[h + P - k1, w + P - k2, m]

with odd kernel size K, P = (K - 1) // 2, zero padding outside the image, so
spatial extent is preserved. The N kernels are shared by every input channel;
input channel m and kernel j produce output channel m*N + j. The pointwise
step is a per-pixel affine map

    y[h, w, l] = sum_c W[l, c] * x[h, w, c] + b[l]

Forward passes record per-layer caches on a tape; the backward pass walks the
tape in reverse and returns exact gradients. All reductions are plain numpy
sums over arrays in a fixed order, so results are reproducible run to run.
"""

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import CorruptionError, FormatError, ShapeError, ValidationError
from .rng import Rng

_MODEL_MAGIC = b"HSM1"
_MODEL_VERSION = 1
_BLOCK_HEADER = struct.Struct("<IIIIB")


# ---------------------------------------------------------------------------
# layers


@dataclass
class DepthwiseLayer:
    """Spatial convolution; kernels (K, K, N) shared across input channels."""

    kernels: np.ndarray

    def __post_init__(self):
        k = self.kernels
        if k.ndim != 3 or k.shape[0] != k.shape[1]:
            raise ValidationError(f"depthwise kernels must be (K, K, N), got {k.shape}")
        if k.shape[0] % 2 == 0:
            raise ValidationError(f"kernel size must be odd, got {k.shape[0]}")
        if k.shape[2] < 1:
            raise ValidationError("depthwise needs at least one kernel")

    @property
    def kernel_size(self) -> int:
        return self.kernels.shape[0]

    @property
    def multiplier(self) -> int:
        return self.kernels.shape[2]


@dataclass
class PointwiseLayer:
    """Per-pixel channel mix: weights (out_channels, in_channels), bias (out_channels,)."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        if self.weights.ndim != 2:
            raise ValidationError(f"pointwise weights must be 2-d, got shape {self.weights.shape}")
        if self.bias.shape != (self.weights.shape[0],):
            raise ValidationError(
                f"bias shape {self.bias.shape} does not match {self.weights.shape[0]} outputs"
            )

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]


@dataclass
class BatchNormLayer:
    """Per-channel batch normalization with learned scale and shift.

    Train mode normalizes with biased batch statistics over (batch, h, w) and
    updates the running estimates as run = (1 - momentum) * run + momentum * batch.
    Infer mode normalizes with the running estimates.
    """

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1

    def __post_init__(self):
        c = self.gamma.shape
        if self.gamma.ndim != 1 or self.beta.shape != c or self.running_mean.shape != c \
                or self.running_var.shape != c:
            raise ValidationError("batchnorm parameter vectors must share one (channels,) shape")
        if self.eps <= 0:
            raise ValidationError(f"batchnorm eps must be positive, got {self.eps}")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


def _check_input(x: np.ndarray, what: str) -> None:
    if x.ndim != 4:
        raise ShapeError(f"{what} expects (batch, h, w, channels), got shape {x.shape}")


def depthwise_forward(x: np.ndarray, layer: DepthwiseLayer):
    """Returns (y, cache); y has M*N channels for an M-channel input."""
    _check_input(x, "depthwise_forward")
    kern = layer.kernels
    k = layer.kernel_size
    p = (k - 1) // 2
    n, h, w, m = x.shape
    xpad = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    mult = layer.multiplier
    if mult == 1:
        y = np.zeros((n, h, w, m), dtype=x.dtype)
        for k1 in range(k):
            for k2 in range(k):
                y += kern[k1, k2, 0] * xpad[:, 2 * p - k1:2 * p - k1 + h, 2 * p - k2:2 * p - k2 + w, :]
    else:
        y5 = np.zeros((n, h, w, m, mult), dtype=x.dtype)
        for k1 in range(k):
            for k2 in range(k):
                win = xpad[:, 2 * p - k1:2 * p - k1 + h, 2 * p - k2:2 * p - k2 + w, :]
                y5 += win[..., None] * kern[k1, k2, :]
        y = y5.reshape(n, h, w, m * mult)
    return y, ("dw", x, layer)


def depthwise_backward(grad_out: np.ndarray, cache):
    """Returns (grad_input, grad_kernels)."""
    tag, x, layer = cache
    kern = layer.kernels
    k = layer.kernel_size
    p = (k - 1) // 2
    n, h, w, m = x.shape
    mult = layer.multiplier
    if grad_out.shape != (n, h, w, m * mult):
        raise ShapeError(
            f"depthwise_backward gradient shape {grad_out.shape} does not match output "
            f"{(n, h, w, m * mult)}"
        )
    xpad = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    grad_kern = np.zeros_like(kern)
    grad_x = np.zeros_like(x)
    if mult == 1:
        gpad = np.pad(grad_out, ((0, 0), (p, p), (p, p), (0, 0)))
        for k1 in range(k):
            for k2 in range(k):
                win = xpad[:, 2 * p - k1:2 * p - k1 + h, 2 * p - k2:2 * p - k2 + w, :]
                grad_kern[k1, k2, 0] = np.einsum("nhwm,nhwm->", grad_out, win)
                grad_x += kern[k1, k2, 0] * gpad[:, k1:k1 + h, k2:k2 + w, :]
    else:
        g5 = grad_out.reshape(n, h, w, m, mult)
        gpad5 = np.pad(g5, ((0, 0), (p, p), (p, p), (0, 0), (0, 0)))
        for k1 in range(k):
            for k2 in range(k):
                win = xpad[:, 2 * p - k1:2 * p - k1 + h, 2 * p - k2:2 * p - k2 + w, :]
                grad_kern[k1, k2, :] = np.einsum("nhwmj,nhwm->j", g5, win)
                grad_x += gpad5[:, k1:k1 + h, k2:k2 + w, :, :] @ kern[k1, k2, :]
    return grad_x, grad_kern


def pointwise_forward(x: np.ndarray, layer: PointwiseLayer):
    """Returns (y, cache)."""
    _check_input(x, "pointwise_forward")
    if x.shape[3] != layer.in_channels:
        raise ShapeError(
            f"pointwise_forward expects {layer.in_channels} channels, got {x.shape[3]}"
        )
    n, h, w, _ = x.shape
    flat = x.reshape(-1, layer.in_channels)
    y = (flat @ layer.weights.T).reshape(n, h, w, layer.out_channels) + layer.bias
    return y, ("pw", x, layer)


def pointwise_backward(grad_out: np.ndarray, cache):
    """Returns (grad_input, grad_weights, grad_bias)."""
    tag, x, layer = cache
    n, h, w, _ = x.shape
    if grad_out.shape != (n, h, w, layer.out_channels):
        raise ShapeError(
            f"pointwise_backward gradient shape {grad_out.shape} does not match output "
            f"{(n, h, w, layer.out_channels)}"
        )
    gflat = grad_out.reshape(-1, layer.out_channels)
    xflat = x.reshape(-1, layer.in_channels)
    grad_w = gflat.T @ xflat
    grad_b = gflat.sum(axis=0)
    grad_x = (gflat @ layer.weights).reshape(x.shape)
    return grad_x, grad_w, grad_b


def batchnorm_forward(x: np.ndarray, layer: BatchNormLayer, mode: str):
    """Returns (y, cache). Train mode also updates the running statistics."""
    _check_input(x, "batchnorm_forward")
    if mode not in ("train", "infer"):
        raise ValidationError(f"mode must be 'train' or 'infer', got {mode!r}")
    if x.shape[3] != layer.channels:
        raise ShapeError(f"batchnorm expects {layer.channels} channels, got {x.shape[3]}")
    if mode == "train":
        count = x.shape[0] * x.shape[1] * x.shape[2]
        if count < 2:
            raise ValidationError(
                f"train-mode batchnorm needs at least 2 values per channel, got {count}"
            )
        mu = x.mean(axis=(0, 1, 2), dtype=np.float64).astype(x.dtype)
        centered = x - mu
        var = np.mean(centered * centered, axis=(0, 1, 2), dtype=np.float64)
        ivar = (1.0 / np.sqrt(var + layer.eps)).astype(x.dtype)
        xhat = centered * ivar
        mom = layer.momentum
        layer.running_mean[...] = (1.0 - mom) * layer.running_mean + mom * mu
        layer.running_var[...] = (1.0 - mom) * layer.running_var + mom * var.astype(x.dtype)
    else:
        ivar = (1.0 / np.sqrt(layer.running_var.astype(np.float64) + layer.eps)).astype(x.dtype)
        xhat = (x - layer.running_mean) * ivar
    y = layer.gamma * xhat + layer.beta
    return y, ("bn", mode, xhat, ivar, layer)


def batchnorm_backward(grad_out: np.ndarray, cache):
    """Returns (grad_input, grad_gamma, grad_beta)."""
    tag, mode, xhat, ivar, layer = cache
    if grad_out.shape != xhat.shape:
        raise ShapeError(
            f"batchnorm_backward gradient shape {grad_out.shape} does not match {xhat.shape}"
        )
    grad_gamma = np.einsum("nhwc,nhwc->c", grad_out, xhat)
    grad_beta = grad_out.sum(axis=(0, 1, 2))
    dxhat = grad_out * layer.gamma
    if mode == "train":
        count = xhat.shape[0] * xhat.shape[1] * xhat.shape[2]
        sum_dxhat = dxhat.sum(axis=(0, 1, 2))
        sum_dxhat_xhat = np.einsum("nhwc,nhwc->c", dxhat, xhat)
        grad_x = (ivar / count) * (count * dxhat - sum_dxhat - xhat * sum_dxhat_xhat)
    else:
        grad_x = dxhat * ivar
    return grad_x, grad_gamma, grad_beta


def relu_forward(x: np.ndarray):
    mask = x > 0
    return x * mask, ("relu", mask)


def relu_backward(grad_out: np.ndarray, cache):
    tag, mask = cache
    if grad_out.shape != mask.shape:
        raise ShapeError(
            f"relu_backward gradient shape {grad_out.shape} does not match {mask.shape}"
        )
    return grad_out * mask


# ---------------------------------------------------------------------------
# model


@dataclass
class Block:
    depthwise: DepthwiseLayer
    pointwise: PointwiseLayer
    batchnorm: BatchNormLayer
    relu: bool

    def __post_init__(self):
        mult = self.depthwise.multiplier
        if self.pointwise.in_channels % mult != 0:
            raise ValidationError(
                f"pointwise input width {self.pointwise.in_channels} is not a multiple of the "
                f"depthwise multiplier {mult}"
            )
        if self.batchnorm.channels != self.pointwise.out_channels:
            raise ValidationError(
                f"batchnorm width {self.batchnorm.channels} does not match pointwise output "
                f"{self.pointwise.out_channels}"
            )

    @property
    def in_channels(self) -> int:
        return self.pointwise.in_channels // self.depthwise.multiplier

    @property
    def out_channels(self) -> int:
        return self.pointwise.out_channels


@dataclass
class GradTape:
    """Per-layer caches recorded by model_forward, consumed by model_backward."""

    mode: str
    entries: list
    out_shape: tuple


@dataclass
class SeparableCnn:
    """A chain of separable blocks; the final block has no batchnorm or ReLU.

    Every block owns batchnorm parameters so checkpoints have a uniform
    per-block layout, but the final block's are never applied or trained.
    """

    blocks: list

    def __post_init__(self):
        if not self.blocks:
            raise ValidationError("model needs at least one block")
        if self.blocks[-1].relu:
            raise ValidationError("the final block must not apply ReLU")
        for i in range(1, len(self.blocks)):
            need = self.blocks[i - 1].out_channels
            got = self.blocks[i].in_channels
            if need != got:
                raise ValidationError(
                    f"block {i} expects {got} input channels but block {i - 1} emits {need}"
                )

    @property
    def input_bands(self) -> int:
        return self.blocks[0].in_channels

    @property
    def output_bands(self) -> int:
        return self.blocks[-1].out_channels

    @property
    def dtype(self):
        return self.blocks[0].pointwise.weights.dtype

    def parameters(self) -> list:
        """Trainable arrays in a fixed order; final-block batchnorm excluded."""
        params = []
        last = len(self.blocks) - 1
        for i, blk in enumerate(self.blocks):
            params.append(blk.depthwise.kernels)
            params.append(blk.pointwise.weights)
            params.append(blk.pointwise.bias)
            if i < last:
                params.append(blk.batchnorm.gamma)
                params.append(blk.batchnorm.beta)
        return params

    def parameter_names(self) -> list:
        names = []
        last = len(self.blocks) - 1
        for i in range(len(self.blocks)):
            names.append(f"block{i}.depthwise.kernels")
            names.append(f"block{i}.pointwise.weights")
            names.append(f"block{i}.pointwise.bias")
            if i < last:
                names.append(f"block{i}.batchnorm.gamma")
                names.append(f"block{i}.batchnorm.beta")
        return names


def model_forward(model: SeparableCnn, x: np.ndarray, mode: str = "train"):
    """Run the network; returns (output, tape)."""
    _check_input(x, "model_forward")
    if mode not in ("train", "infer"):
        raise ValidationError(f"mode must be 'train' or 'infer', got {mode!r}")
    if x.shape[3] != model.input_bands:
        raise ShapeError(
            f"model expects {model.input_bands} input channels, got {x.shape[3]}"
        )
    h = x.astype(model.dtype, copy=False)
    entries = []
    last = len(model.blocks) - 1
    for i, blk in enumerate(model.blocks):
        h, dw_cache = depthwise_forward(h, blk.depthwise)
        h, pw_cache = pointwise_forward(h, blk.pointwise)
        bn_cache = relu_cache = None
        if i < last:
            h, bn_cache = batchnorm_forward(h, blk.batchnorm, mode)
            if blk.relu:
                h, relu_cache = relu_forward(h)
        entries.append((dw_cache, pw_cache, bn_cache, relu_cache))
    return h, GradTape(mode=mode, entries=entries, out_shape=h.shape)


def model_backward(model: SeparableCnn, tape: GradTape, grad_out: np.ndarray):
    """Exact gradients for every trainable parameter.

    Returns (grads, grad_input) with grads aligned to model.parameters().
    """
    if grad_out.shape != tape.out_shape:
        raise ShapeError(
            f"gradient shape {grad_out.shape} does not match model output {tape.out_shape}"
        )
    g = grad_out.astype(model.dtype, copy=False)
    per_block = [None] * len(model.blocks)
    for i in range(len(model.blocks) - 1, -1, -1):
        dw_cache, pw_cache, bn_cache, relu_cache = tape.entries[i]
        grad_gamma = grad_beta = None
        if relu_cache is not None:
            g = relu_backward(g, relu_cache)
        if bn_cache is not None:
            g, grad_gamma, grad_beta = batchnorm_backward(g, bn_cache)
        g, grad_w, grad_b = pointwise_backward(g, pw_cache)
        g, grad_kern = depthwise_backward(g, dw_cache)
        per_block[i] = (grad_kern, grad_w, grad_b, grad_gamma, grad_beta)
    grads = []
    last = len(model.blocks) - 1
    for i, (gk, gw, gb, gg, gbeta) in enumerate(per_block):
        grads.extend([gk, gw, gb])
        if i < last:
            grads.extend([gg, gbeta])
    return grads, g


# ---------------------------------------------------------------------------
# construction


def build_model(bands: int, hidden: int = 400, blocks: int = 4, kernel_size: int = 3,
                multiplier: int = 1, rng: Rng = None, dtype=np.float32) -> SeparableCnn:
    """Fresh network: `blocks` separable blocks, band count in and out.

    Weights are zero-mean normal with std sqrt(2 / fan_in); biases start at
    zero and batchnorm at identity. Draw order is fixed (per block: depthwise
    kernels then pointwise weights) so a seed pins the init exactly.
    """
    if rng is None:
        raise ValidationError("build_model requires an Rng for weight initialization")
    if bands < 1 or hidden < 1 or blocks < 1 or multiplier < 1:
        raise ValidationError("bands, hidden, blocks, and multiplier must all be >= 1")
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ValidationError(f"kernel size must be odd and positive, got {kernel_size}")
    out = []
    for i in range(blocks):
        in_ch = bands if i == 0 else hidden
        out_ch = bands if i == blocks - 1 else hidden
        kern = rng.normals(kernel_size * kernel_size * multiplier)
        kern = (kern * np.sqrt(2.0 / (kernel_size * kernel_size)))
        kern = kern.reshape(kernel_size, kernel_size, multiplier).astype(dtype)
        fan_in = in_ch * multiplier
        w = rng.normals(out_ch * fan_in) * np.sqrt(2.0 / fan_in)
        w = w.reshape(out_ch, fan_in).astype(dtype)
        out.append(Block(
            depthwise=DepthwiseLayer(kern),
            pointwise=PointwiseLayer(w, np.zeros(out_ch, dtype=dtype)),
            batchnorm=BatchNormLayer(
                gamma=np.ones(out_ch, dtype=dtype),
                beta=np.zeros(out_ch, dtype=dtype),
                running_mean=np.zeros(out_ch, dtype=dtype),
                running_var=np.ones(out_ch, dtype=dtype),
            ),
            relu=i < blocks - 1,
        ))
    return SeparableCnn(out)


def identity_model(bands: int, kernel_size: int = 3, dtype=np.float32) -> SeparableCnn:
    """Single block that reproduces its input exactly (delta kernel, identity mix)."""
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ValidationError(f"kernel size must be odd and positive, got {kernel_size}")
    kern = np.zeros((kernel_size, kernel_size, 1), dtype=dtype)
    c = (kernel_size - 1) // 2
    kern[c, c, 0] = 1.0
    blk = Block(
        depthwise=DepthwiseLayer(kern),
        pointwise=PointwiseLayer(np.eye(bands, dtype=dtype), np.zeros(bands, dtype=dtype)),
        batchnorm=BatchNormLayer(
            gamma=np.ones(bands, dtype=dtype),
            beta=np.zeros(bands, dtype=dtype),
            running_mean=np.zeros(bands, dtype=dtype),
            running_var=np.ones(bands, dtype=dtype),
        ),
        relu=False,
    )
    return SeparableCnn([blk])


# ---------------------------------------------------------------------------
# checkpoints


def save_model(model: SeparableCnn, path: str) -> None:
    """Write a checkpoint: magic, version, block count, then per-block payload.

    Per block: kernel size, multiplier, input channels, output channels (u32
    each), a ReLU flag byte, then float32 arrays in order depthwise kernels,
    pointwise weights, bias, gamma, beta, running mean, running variance.
    """
    chunks = [_MODEL_MAGIC, struct.pack("<II", _MODEL_VERSION, len(model.blocks))]
    for blk in model.blocks:
        k = blk.depthwise.kernel_size
        chunks.append(_BLOCK_HEADER.pack(
            k, blk.depthwise.multiplier, blk.in_channels, blk.out_channels, int(blk.relu)
        ))
        for arr in (blk.depthwise.kernels, blk.pointwise.weights, blk.pointwise.bias,
                    blk.batchnorm.gamma, blk.batchnorm.beta,
                    blk.batchnorm.running_mean, blk.batchnorm.running_var):
            chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".hsm-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(b"".join(chunks))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_model(path: str, dtype=np.float32) -> SeparableCnn:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 12:
        raise CorruptionError(f"{path}: file shorter than the checkpoint header")
    if raw[:4] != _MODEL_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {_MODEL_MAGIC!r}")
    version, nblocks = struct.unpack_from("<II", raw, 4)
    if version != _MODEL_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    if nblocks < 1:
        raise CorruptionError(f"{path}: checkpoint declares zero blocks")
    offset = 12
    blocks = []

    def take(count):
        nonlocal offset
        nbytes = count * 4
        if offset + nbytes > len(raw):
            raise CorruptionError(f"{path}: checkpoint payload truncated")
        arr = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).astype(dtype)
        offset += nbytes
        return arr

    for _ in range(nblocks):
        if offset + _BLOCK_HEADER.size > len(raw):
            raise CorruptionError(f"{path}: checkpoint payload truncated")
        k, mult, in_ch, out_ch, relu = _BLOCK_HEADER.unpack_from(raw, offset)
        offset += _BLOCK_HEADER.size
        if k < 1 or k % 2 == 0 or mult < 1 or in_ch < 1 or out_ch < 1 or relu > 1:
            raise CorruptionError(
                f"{path}: invalid block header (k={k}, mult={mult}, in={in_ch}, out={out_ch})"
            )
        kern = take(k * k * mult).reshape(k, k, mult)
        weights = take(out_ch * in_ch * mult).reshape(out_ch, in_ch * mult)
        bias = take(out_ch)
        gamma = take(out_ch)
        beta = take(out_ch)
        rmean = take(out_ch)
        rvar = take(out_ch)
        blocks.append(Block(
            depthwise=DepthwiseLayer(kern),
            pointwise=PointwiseLayer(weights, bias),
            batchnorm=BatchNormLayer(gamma, beta, rmean, rvar),
            relu=bool(relu),
        ))
    if offset != len(raw):
        raise CorruptionError(f"{path}: {len(raw) - offset} trailing bytes after payload")
    return SeparableCnn(blocks)
