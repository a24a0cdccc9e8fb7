"""Teacher/student classifiers built from resolution-stage blocks.

A teacher and its student share the number of blocks, the per-block output
widths and (for the CNN) the per-block spatial resolution; they differ only
in how many layers each block stacks.  That keeps every per-block activation
pair shape-compatible for the attention-transfer loss.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ArchConfig:
    kind: str = "mlp"
    num_blocks: int = 3
    widths: tuple[int, ...] = (64, 64, 64)
    num_classes: int = 4
    input_shape: tuple[int, ...] = (2,)
    teacher_depth: int = 2
    student_depth: int = 1
    kernel_size: int = 3

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        if self.kind not in ("mlp", "cnn"):
            raise ValueError(f"unknown architecture kind {self.kind!r}")
        if self.num_blocks < 1 or len(self.widths) != self.num_blocks:
            raise ValueError(
                f"need one width per block: num_blocks={self.num_blocks}, widths={self.widths}"
            )
        if min(self.widths) < 1 or self.num_classes < 2:
            raise ValueError("widths must be positive and num_classes >= 2")
        if self.teacher_depth < 1 or self.student_depth < 1:
            raise ValueError("block depths must be positive")
        if self.kind == "cnn" and len(self.input_shape) != 3:
            raise ValueError(f"cnn input_shape must be (C, H, W), got {self.input_shape}")
        if self.kind == "cnn" and self.kernel_size % 2 != 1:
            raise ValueError("cnn kernel_size must be odd")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ArchConfig:
        return cls(**d)


@dataclass
class ForwardResult:
    logits: Tensor
    activations: list[Tensor]
    features: Tensor  # penultimate representation fed to the classifier


def _uniform_init(rng: np.random.Generator, shape, fan_in: int, fan_out: int) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


@dataclass
class _Layer:
    weight: Tensor
    bias: Tensor
    stride: int = 1

    def __call__(self, x: Tensor) -> Tensor:
        if self.weight.ndim == 2:
            return T.add_bias(T.matmul(x, self.weight), self.bias)
        pad = self.weight.shape[2] // 2
        return T.add_bias(T.conv2d(x, self.weight, self.stride, pad), self.bias)


@dataclass
class BlockModel:
    arch: ArchConfig
    depth: int
    blocks: list[list[_Layer]] = field(default_factory=list)
    head: _Layer | None = None

    @classmethod
    def build(cls, arch: ArchConfig, depth: int, rng: np.random.Generator) -> BlockModel:
        model = cls(arch, depth)
        if arch.kind == "mlp":
            fan = int(np.prod(arch.input_shape))
            for width in arch.widths:
                layers = []
                for _ in range(depth):
                    layers.append(
                        _Layer(_uniform_init(rng, (fan, width), fan, width),
                               Tensor(np.zeros(width), requires_grad=True))
                    )
                    fan = width
                model.blocks.append(layers)
        else:
            ks = arch.kernel_size
            chans = arch.input_shape[0]
            for b, width in enumerate(arch.widths):
                layers = []
                for d in range(depth):
                    stride = 2 if (b > 0 and d == 0) else 1
                    layers.append(
                        _Layer(
                            _uniform_init(rng, (width, chans, ks, ks), chans * ks * ks, width * ks * ks),
                            Tensor(np.zeros(width), requires_grad=True),
                            stride,
                        )
                    )
                    chans = width
                model.blocks.append(layers)
        last = arch.widths[-1]
        model.head = _Layer(
            _uniform_init(rng, (last, arch.num_classes), last, arch.num_classes),
            Tensor(np.zeros(arch.num_classes), requires_grad=True),
        )
        return model

    def parameters(self) -> list[Tensor]:
        out = []
        for layers in self.blocks:
            for layer in layers:
                out += [layer.weight, layer.bias]
        out += [self.head.weight, self.head.bias]
        return out

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.parameters()])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.num_parameters():
            raise ValueError(f"expected {self.num_parameters()} parameters, got {flat.size}")
        pos = 0
        for p in self.parameters():
            n = p.data.size
            p.data[...] = flat[pos : pos + n].reshape(p.shape)
            pos += n

    def copy(self) -> BlockModel:
        twin = BlockModel.build(self.arch, self.depth, np.random.default_rng(0))
        twin.set_flat(self.get_flat())
        return twin

    def forward(self, x, dropout: float = 0.0, rng: np.random.Generator | None = None) -> ForwardResult:
        """Run a batch through the model.

        With ``dropout > 0`` every hidden layer output is multiplied by an
        inverted-dropout mask drawn from ``rng``.
        """
        x = x if isinstance(x, Tensor) else Tensor(x)
        expect = self.arch.input_shape
        if x.ndim != len(expect) + 1 or tuple(x.shape[1:]) != expect:
            raise T.ShapeError(
                f"forward: batch shape {x.shape} does not match input shape (B, {', '.join(map(str, expect))})"
            )
        if dropout and rng is None:
            raise ValueError("dropout requires an rng")
        if self.arch.kind == "mlp":
            x = T.flatten(x) if x.ndim > 2 else x
        acts = []
        h = x
        for layers in self.blocks:
            for layer in layers:
                h = T.relu(layer(h))
                if dropout:
                    keep = rng.random(h.shape) >= dropout
                    h = h * (keep / (1.0 - dropout))
            acts.append(h)
        feats = T.global_avg_pool(h) if self.arch.kind == "cnn" else h
        return ForwardResult(self.head(feats), acts, feats)

    __call__ = forward

    def predict_proba(self, x, batch_size: int = 1024) -> np.ndarray:
        with T.no_grad():
            chunks = [
                T.softmax(self.forward(x[i : i + batch_size]).logits).data
                for i in range(0, len(x), batch_size)
            ]
        return np.concatenate(chunks)

    def predict(self, x) -> np.ndarray:
        return self.predict_proba(x).argmax(axis=1)

    def block_shapes(self) -> list[tuple[int, ...]]:
        """Per-sample activation shape of each block."""
        if self.arch.kind == "mlp":
            return [(w,) for w in self.arch.widths]
        _, h, w = self.arch.input_shape
        shapes = []
        for b, width in enumerate(self.arch.widths):
            if b > 0:
                h, w = (h - 1) // 2 + 1, (w - 1) // 2 + 1
            shapes.append((width, h, w))
        return shapes


def build_pair(arch: ArchConfig, seed: int) -> tuple[BlockModel, BlockModel]:
    """Fresh teacher (deep blocks) and student (shallow blocks) for ``arch``."""
    if arch.student_depth >= arch.teacher_depth:
        raise ValueError(
            f"student must be shallower than teacher: depths {arch.student_depth} >= {arch.teacher_depth}"
        )
    t_seq, s_seq = np.random.SeedSequence(seed).spawn(2)
    teacher = BlockModel.build(arch, arch.teacher_depth, np.random.default_rng(t_seq))
    student = BlockModel.build(arch, arch.student_depth, np.random.default_rng(s_seq))
    return teacher, student


def build_model(arch: ArchConfig, depth: int, seed: int) -> BlockModel:
    """Single model seeded exactly like the teacher of ``build_pair``."""
    t_seq, _ = np.random.SeedSequence(seed).spawn(2)
    return BlockModel.build(arch, depth, np.random.default_rng(t_seq))


def forward_mc_dropout(
    model: BlockModel, x, passes: int, drop_prob: float, rng: np.random.Generator
) -> np.ndarray:
    """Posteriors of ``passes`` stochastic forward passes, shape (K, B, classes)."""
    if passes < 1:
        raise ValueError("passes must be >= 1")
    if not 0 <= drop_prob < 1:
        raise ValueError("drop_prob must lie in [0, 1)")
    out = []
    with T.no_grad():
        for _ in range(passes):
            res = model.forward(x, dropout=drop_prob, rng=rng)
            out.append(T.softmax(res.logits).data)
    return np.stack(out)


def save_checkpoint(model: BlockModel, path) -> None:
    """Write an ``.npz`` holding the version, arch JSON, block depth and flat parameters."""
    np.savez(
        Path(path),
        format_version=np.int64(CHECKPOINT_VERSION),
        arch=np.array(json.dumps(model.arch.to_dict(), sort_keys=True)),
        depth=np.int64(model.depth),
        params=model.get_flat(),
    )


def load_checkpoint(path) -> BlockModel:
    with np.load(Path(path)) as z:
        version = int(z["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        arch = ArchConfig.from_dict(json.loads(str(z["arch"])))
        model = BlockModel.build(arch, int(z["depth"]), np.random.default_rng(0))
        model.set_flat(z["params"])
    return model


def concat_activations(acts: Sequence[Tensor]) -> np.ndarray:
    """Flattened block activations joined per sample: (B, total)."""
    return np.concatenate([a.data.reshape(a.shape[0], -1) for a in acts], axis=1)
