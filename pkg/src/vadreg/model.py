"""Per-dimension regression networks: a small 4-conv preset and a ResNet-18-style preset.

Each affect dimension (valence / arousal / dominance) gets its own network
mapping a 1x48x48 grayscale face to one real value. Both presets carry
residual blocks; the large preset adds per-channel batch normalization with
train/eval modes, the mini preset stays normalization-free so its gradients
check exactly against finite differences.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import EmptyInputError, ShapeError, Tensor
from .ortho import ConvKernel, orth_loss

CHECKPOINT_MAGIC = b"VADREG-CKPT\n"
CHECKPOINT_VERSION = 1


class Dimension(str, Enum):
    V = "v"
    A = "a"
    D = "d"


DIMENSION_ORDER = (Dimension.V, Dimension.A, Dimension.D)


@dataclass(frozen=True)
class NetworkConfig:
    preset: str = "mini"                      # "mini" (4 conv + 1 fc) or "resnet18" (17 conv + 1 fc)
    in_channels: int = 1
    input_hw: tuple[int, int] = (48, 48)
    ortho_layers: tuple[int, ...] | None = None   # conv-layer indices to regularize; None = all
    seed: int = 0

    def __post_init__(self):
        if self.preset not in ("mini", "resnet18"):
            raise ValueError(f"unknown preset {self.preset!r}")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 64
    lr0: float = 0.01
    lr_decay_factor: float = 10.0
    lr_decay_every: int = 10_000
    epochs: int = 120
    orth_weight: float = 0.1                  # weight of the orthogonality penalty in the total loss
    seed: int = 0
    max_iters: int | None = None              # stop early after this many SGD steps (desk-scale runs)

    def __post_init__(self):
        if self.orth_weight < 0:
            raise ValueError("orth_weight must be non-negative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


def lr_at(iteration: int, cfg: TrainConfig) -> float:
    """Step-decayed learning rate: lr0 / factor^(iteration // every)."""
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    return cfg.lr0 / cfg.lr_decay_factor ** (iteration // cfg.lr_decay_every)


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

class Conv:
    def __init__(self, rng: np.random.Generator, name: str, cin: int, cout: int,
                 k: int, stride: int, padding: int, bias: bool):
        fan_in = cin * k * k
        bound = 1.0 / np.sqrt(fan_in)
        self.name = name
        self.stride = stride
        self.padding = padding
        self.weights = Tensor(rng.uniform(-bound, bound, size=(cout, cin, k, k)),
                              requires_grad=True)
        # biases share the fan-in-scaled uniform init; zero biases would put
        # relu pre-activations exactly on the kink wherever a window of
        # already-rectified zeros comes through
        self.bias = (Tensor(rng.uniform(-bound, bound, size=cout), requires_grad=True)
                     if bias else None)

    def __call__(self, x: Tensor) -> Tensor:
        y = ad.conv2d(x, self.weights, stride=self.stride, padding=self.padding)
        if self.bias is not None:
            y = ad.channel_bias(y, self.bias)
        return y

    def kernel(self) -> ConvKernel:
        return ConvKernel(self.weights, stride=self.stride, padding=self.padding)

    def parameters(self):
        yield f"{self.name}.weight", self.weights
        if self.bias is not None:
            yield f"{self.name}.bias", self.bias


class BatchNorm:
    def __init__(self, name: str, channels: int):
        self.name = name
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.state = {"mean": np.zeros(channels), "var": np.ones(channels)}

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        return ad.batch_norm(x, self.gamma, self.beta, self.state, training)

    def parameters(self):
        yield f"{self.name}.gamma", self.gamma
        yield f"{self.name}.beta", self.beta

    def buffers(self):
        yield f"{self.name}.running_mean", self.state["mean"]
        yield f"{self.name}.running_var", self.state["var"]


class Linear:
    def __init__(self, rng: np.random.Generator, name: str, fin: int, fout: int):
        bound = 1.0 / np.sqrt(fin)
        self.name = name
        self.weights = Tensor(rng.uniform(-bound, bound, size=(fout, fin)), requires_grad=True)
        self.bias = Tensor(rng.uniform(-bound, bound, size=fout), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.linear(x, self.weights, self.bias)

    def parameters(self):
        yield f"{self.name}.weight", self.weights
        yield f"{self.name}.bias", self.bias


class ResidualBlock:
    """Two 3x3 convolutions with an identity shortcut.

    When the block changes width or resolution, the shortcut stays
    parameter-free: spatial subsampling plus zero channel padding, so the
    preset's convolution count is exactly its main-path count.
    """

    def __init__(self, rng: np.random.Generator, name: str, cin: int, cout: int,
                 stride: int, with_bn: bool):
        self.name = name
        self.cin = cin
        self.cout = cout
        self.stride = stride
        self.conv_a = Conv(rng, f"{name}.conv_a", cin, cout, 3, stride, 1, bias=not with_bn)
        self.conv_b = Conv(rng, f"{name}.conv_b", cout, cout, 3, 1, 1, bias=not with_bn)
        self.bn_a = BatchNorm(f"{name}.bn_a", cout) if with_bn else None
        self.bn_b = BatchNorm(f"{name}.bn_b", cout) if with_bn else None

    def __call__(self, x: Tensor, training: bool) -> Tensor:
        h = self.conv_a(x)
        if self.bn_a is not None:
            h = self.bn_a(h, training)
        h = ad.relu(h)
        h = self.conv_b(h)
        if self.bn_b is not None:
            h = self.bn_b(h, training)
        shortcut = x
        if self.stride != 1:
            shortcut = ad.spatial_subsample(shortcut, self.stride)
        if self.cout != self.cin:
            shortcut = ad.channel_pad(shortcut, self.cout - self.cin)
        return ad.relu(ad.add(h, shortcut))

    def conv_layers(self):
        yield self.conv_a
        yield self.conv_b

    def parameters(self):
        for part in (self.conv_a, self.conv_b, self.bn_a, self.bn_b):
            if part is not None:
                yield from part.parameters()

    def buffers(self):
        for part in (self.bn_a, self.bn_b):
            if part is not None:
                yield from part.buffers()


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------

class RegressionNet:
    """Convolutional regressor producing exactly one scalar per sample."""

    def __init__(self, cfg: NetworkConfig, rng: np.random.Generator):
        self.config = cfg
        self.blocks: list[ResidualBlock] = []
        if cfg.preset == "mini":
            # widths keep every layer's row count at or below its column
            # count, so the orthogonality target is actually attainable
            self.stem = Conv(rng, "stem", cfg.in_channels, 4, 3, 2, 1, bias=True)
            self.stem_bn = None
            self.blocks.append(ResidualBlock(rng, "block1", 4, 4, 1, with_bn=False))
            self.neck = Conv(rng, "neck", 4, 8, 3, 2, 1, bias=True)
            self.fc = Linear(rng, "fc", 8, 1)
        else:
            self.stem = Conv(rng, "stem", cfg.in_channels, 64, 3, 2, 1, bias=False)
            self.stem_bn = BatchNorm("stem_bn", 64)
            plan = [(64, 64, 1), (64, 64, 1), (64, 128, 2), (128, 128, 1),
                    (128, 256, 2), (256, 256, 1), (256, 512, 2), (512, 512, 1)]
            for i, (cin, cout, stride) in enumerate(plan):
                self.blocks.append(
                    ResidualBlock(rng, f"block{i}", cin, cout, stride, with_bn=True))
            self.neck = None
            self.fc = Linear(rng, "fc", 512, 1)

    def forward(self, x: Tensor, training: bool = False) -> Tensor:
        h = self.stem(x)
        if self.stem_bn is not None:
            h = self.stem_bn(h, training)
        h = ad.relu(h)
        for block in self.blocks:
            h = block(h, training)
        if self.neck is not None:
            h = ad.relu(self.neck(h))
        h = ad.global_avg_pool(h)
        out = self.fc(h)
        # squeeze the single output feature: (N,1) -> (N,), (1,) -> ()
        return ad.reshape(out, out.shape[:-1])

    def conv_layers(self) -> list[Conv]:
        layers = [self.stem]
        for block in self.blocks:
            layers.extend(block.conv_layers())
        if self.neck is not None:
            layers.append(self.neck)
        return layers

    def parameters(self) -> list[tuple[str, Tensor]]:
        out = list(self.stem.parameters())
        if self.stem_bn is not None:
            out.extend(self.stem_bn.parameters())
        for block in self.blocks:
            out.extend(block.parameters())
        if self.neck is not None:
            out.extend(self.neck.parameters())
        out.extend(self.fc.parameters())
        return out

    def buffers(self) -> list[tuple[str, np.ndarray]]:
        out = []
        if self.stem_bn is not None:
            out.extend(self.stem_bn.buffers())
        for block in self.blocks:
            out.extend(block.buffers())
        return out

    def parameter_count(self) -> int:
        return sum(t.size for _, t in self.parameters())

    def regularized_kernels(self) -> list[ConvKernel]:
        layers = self.conv_layers()
        chosen = self.config.ortho_layers
        idx = range(len(layers)) if chosen is None else chosen
        return [layers[i].kernel() for i in idx]


@dataclass
class DimensionModel:
    """One affect dimension's network plus its training odometer."""

    dimension: Dimension
    config: NetworkConfig
    net: RegressionNet
    iteration: int = 0

    def current_lr(self, cfg: TrainConfig) -> float:
        return lr_at(self.iteration, cfg)


def build_model(cfg: NetworkConfig, dimension: Dimension | str) -> DimensionModel:
    """Deterministically initialized model; the three dimensions share nothing.

    The init stream is salted with the dimension index so sibling models
    start from different (but reproducible) weights.
    """
    dimension = Dimension(dimension)
    salt = DIMENSION_ORDER.index(dimension)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, salt]))
    return DimensionModel(dimension, cfg, RegressionNet(cfg, rng))


# ---------------------------------------------------------------------------
# losses / prediction
# ---------------------------------------------------------------------------

def _as_batch(images: np.ndarray) -> np.ndarray:
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ShapeError(f"images must be (N,C,H,W) or (C,H,W), got {arr.shape}")
    return arr


def orth_penalty(model: DimensionModel) -> Tensor:
    """Sum of the self-convolution penalties over the regularized conv layers."""
    total: Tensor | None = None
    for kernel in model.net.regularized_kernels():
        term = orth_loss(kernel)
        total = term if total is None else ad.add(total, term)
    if total is None:
        return Tensor(np.asarray(0.0))
    return total


def loss_components(model: DimensionModel, images: np.ndarray, targets: np.ndarray,
                    training: bool = True) -> tuple[Tensor, Tensor]:
    """(task MSE, orthogonality penalty) as separate graph roots."""
    batch = _as_batch(images)
    if batch.shape[0] == 0:
        raise EmptyInputError("empty batch")
    preds = model.net.forward(Tensor(batch), training=training)
    task = ad.mse_loss(preds, Tensor(np.asarray(targets, dtype=np.float64)))
    return task, orth_penalty(model)


def total_loss(model: DimensionModel, images: np.ndarray, targets: np.ndarray,
               orth_weight: float, training: bool = True) -> Tensor:
    """Task MSE plus weighted orthogonality penalty.

    A zero weight returns the task loss tensor itself, so the unregularized
    baseline is reproduced exactly (no zero-scaled graph attached).
    """
    task, orth = loss_components(model, images, targets, training=training)
    if orth_weight == 0:
        return task
    return ad.add(task, ad.scale(orth, orth_weight))


def predict(model: DimensionModel, image: np.ndarray, clamp: bool = False) -> float:
    """Scalar prediction for one image; ``clamp`` maps into [-2, 2] for reporting."""
    arr = np.asarray(image, dtype=np.float64)
    expected = (model.config.in_channels, *model.config.input_hw)
    if arr.shape != expected:
        raise ShapeError(f"predict expects image shape {expected}, got {arr.shape}")
    raw = model.net.forward(Tensor(arr), training=False).item()
    if clamp:
        return float(min(2.0, max(-2.0, raw)))
    return raw


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def _config_dict(cfg: NetworkConfig) -> dict:
    return {
        "preset": cfg.preset,
        "in_channels": cfg.in_channels,
        "input_hw": list(cfg.input_hw),
        "ortho_layers": None if cfg.ortho_layers is None else list(cfg.ortho_layers),
        "seed": cfg.seed,
    }


def _config_from_dict(d: dict) -> NetworkConfig:
    return NetworkConfig(
        preset=d["preset"],
        in_channels=d["in_channels"],
        input_hw=tuple(d["input_hw"]),
        ortho_layers=None if d["ortho_layers"] is None else tuple(d["ortho_layers"]),
        seed=d["seed"],
    )


def save_checkpoint(model: DimensionModel, path) -> None:
    """Versioned binary container: JSON header + raw little-endian float64 blobs.

    Deliberately timestamp-free so identical models serialize byte-identically.
    """
    arrays = [(name, t.data, "param") for name, t in model.net.parameters()]
    arrays += [(name, buf, "buffer") for name, buf in model.net.buffers()]
    header = {
        "version": CHECKPOINT_VERSION,
        "dimension": model.dimension.value,
        "iteration": model.iteration,
        "config": _config_dict(model.config),
        "arrays": [{"name": n, "shape": list(a.shape), "kind": k} for n, a, k in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for _, arr, _ in arrays:
            f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> DimensionModel:
    """Rebuild a model whose predictions are bit-identical to the saved one."""
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    off = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack_from("<Q", data, off)
    off += 8
    header = json.loads(data[off:off + hlen].decode("utf-8"))
    off += hlen
    if header["version"] != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {header['version']}")
    model = build_model(_config_from_dict(header["config"]), header["dimension"])
    model.iteration = header["iteration"]
    params = dict(model.net.parameters())
    buffers = dict(model.net.buffers())
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        n = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shape)
        off += n * 8
        if spec["kind"] == "param":
            params[spec["name"]].data = arr.astype(np.float64).copy()
        else:
            buffers[spec["name"]][...] = arr
    return model


__all__ = [
    "Dimension", "NetworkConfig", "TrainConfig", "DimensionModel", "RegressionNet",
    "build_model", "lr_at", "loss_components", "total_loss", "orth_penalty",
    "predict", "save_checkpoint", "load_checkpoint",
]
