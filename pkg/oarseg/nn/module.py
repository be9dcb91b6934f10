"""
Module system: parameter containers and the basic layers.
"""

import math
from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from oarseg.tensor import functional as F
from oarseg.tensor.tensor import Tensor, get_dtype
from oarseg.utils.errors import NumericError, ValidationError


class Parameter(Tensor):
    """Trainable leaf tensor."""

    def __init__(self, data: np.ndarray, name: Optional[str] = None):
        super().__init__(data, requires_grad=True, name=name)


def uniform_fan_in(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
    """U(-b, b) with b = sqrt(3 / fan_in), i.e. unit-variance outputs for unit-variance inputs."""
    bound = math.sqrt(3.0 / max(fan_in, 1))
    return (2.0 * rng.random(shape, dtype=get_dtype()) - 1.0) * bound


class Module:
    """Base class for network components.

    Parameters, buffers and child modules are registered on attribute
    assignment; traversal follows registration order depth-first, which fixes
    the checkpoint layout.
    """

    def __init__(self):
        object.__setattr__(self, "_parameters", OrderedDict())
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())
        object.__setattr__(self, "training", True)
        object.__setattr__(self, "_qualname", type(self).__name__)

    def __setattr__(self, name: str, value) -> None:
        if isinstance(value, Parameter):
            self._parameters[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        elif value is None:
            self._parameters.pop(name, None)
            self._modules.pop(name, None)
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        """Non-trainable state saved with checkpoints (e.g. running statistics)."""
        self._buffers[name] = np.asarray(value)
        object.__setattr__(self, name, self._buffers[name])

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        self.register_buffer(name, value)

    # ------------------------------------------------------------------

    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self._modules.items():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for module_name, module in self.named_modules(prefix):
            for name, param in module._parameters.items():
                yield (f"{module_name}.{name}" if module_name else name), param

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for module_name, module in self.named_modules(prefix):
            for name, buf in module._buffers.items():
                yield (f"{module_name}.{name}" if module_name else name), buf

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def assign_names(self, root: str = "model") -> None:
        """Record dotted paths used to annotate numeric errors."""
        for name, module in self.named_modules():
            object.__setattr__(module, "_qualname", f"{root}.{name}" if name else root)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True) -> "Module":
        for _, module in self.named_modules():
            object.__setattr__(module, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    # ------------------------------------------------------------------

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        """Parameters then buffers, each in traversal order."""
        state: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, p in self.named_parameters():
            state[name] = p.data
        for name, buf in self.named_buffers():
            state[name] = buf
        return state

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        """Copy arrays into parameters and buffers.

        Raises:
            ValidationError: On missing, unexpected or mis-shaped entries
        """
        expected = self.state_dict()
        missing = [k for k in expected if k not in state]
        unexpected = [k for k in state if k not in expected]
        if missing or unexpected:
            raise ValidationError(
                f"State mismatch: missing={missing[:5]} unexpected={unexpected[:5]}", "VAL_002"
            )
        params = dict(self.named_parameters())
        for name, value in state.items():
            if np.shape(value) != expected[name].shape:
                raise ValidationError(
                    f"Shape mismatch for {name}: {np.shape(value)} vs {expected[name].shape}", "VAL_004"
                )
            if name in params:
                params[name].data = np.asarray(value, dtype=get_dtype()).copy()
            else:
                module_name, _, buf_name = name.rpartition(".")
                owner = dict(self.named_modules())[module_name]
                owner.set_buffer(buf_name, np.asarray(value, dtype=owner._buffers[buf_name].dtype).copy())

    # ------------------------------------------------------------------

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        try:
            return self.forward(*args, **kwargs)
        except NumericError as e:
            if e.layer is None:
                e.layer = self._qualname
            raise


class ModuleList(Module):
    """Indexable list of child modules."""

    def __init__(self, modules: Optional[List[Module]] = None):
        super().__init__()
        for module in modules or []:
            self.append(module)

    def append(self, module: Module) -> None:
        setattr(self, str(len(self._modules)), module)

    def __getitem__(self, index: int) -> Module:
        return list(self._modules.values())[index]

    def __len__(self) -> int:
        return len(self._modules)

    def __iter__(self) -> Iterator[Module]:
        return iter(list(self._modules.values()))


class Linear(Module):
    """y = x W^T + b on the last axis."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        self.weight = Parameter(uniform_fan_in(rng, (out_features, in_features), in_features))
        self.bias = Parameter(np.zeros(out_features)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.linear(x, self.weight, self.bias)


class Conv2d(Module):
    """2D convolution layer over [N,C,H,W]."""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        rng: np.random.Generator,
        stride: int = 1,
        dilation: int = 1,
        padding: str = "same",
        bias: bool = True,
    ):
        super().__init__()
        if in_channels < 1 or out_channels < 1:
            raise ValidationError(f"Channels must be positive: {in_channels}->{out_channels}", "VAL_003")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        self.dilation = dilation
        self.padding = padding
        fan_in = in_channels * kernel * kernel
        self.weight = Parameter(uniform_fan_in(rng, (out_channels, in_channels, kernel, kernel), fan_in))
        self.bias = Parameter(np.zeros(out_channels)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.dilation, self.padding)


class ConvTranspose2d(Module):
    """Transposed convolution with kernel = stride (pure upsampling by ``factor``)."""

    def __init__(self, in_channels: int, out_channels: int, factor: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.factor = factor
        self.weight = Parameter(uniform_fan_in(rng, (in_channels, out_channels, factor, factor), in_channels))
        self.bias = Parameter(np.zeros(out_channels)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return F.conv_transpose2d(x, self.weight, self.bias)


class BatchNorm2d(Module):
    """Batch normalization with running statistics for eval mode."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.gain = Parameter(np.ones(channels))
        self.offset = Parameter(np.zeros(channels))
        self.register_buffer("running_mean", np.zeros(channels, dtype=np.float64))
        self.register_buffer("running_var", np.ones(channels, dtype=np.float64))

    def forward(self, x: Tensor) -> Tensor:
        if not self.training:
            return F.normalize(
                x, "batch", self.gain, self.offset, self.eps,
                stats=(self.running_mean, self.running_var),
            )
        mean, var = F.norm_moments(x.data, "batch")
        count = x.size // x.shape[1]
        unbiased = var.reshape(-1) * (count / max(count - 1, 1))
        m = self.momentum
        self.set_buffer("running_mean", (1 - m) * self.running_mean + m * mean.reshape(-1))
        self.set_buffer("running_var", (1 - m) * self.running_var + m * unbiased)
        return F.normalize(x, "batch", self.gain, self.offset, self.eps)


class LayerNorm(Module):
    """Normalization over the last axis."""

    def __init__(self, features: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gain = Parameter(np.ones(features))
        self.offset = Parameter(np.zeros(features))

    def forward(self, x: Tensor) -> Tensor:
        return F.normalize(x, "layer", self.gain, self.offset, self.eps)


def is_no_decay(name: str) -> bool:
    """Normalization gains/offsets and biases are excluded from weight decay."""
    leaf = name.rsplit(".", 1)[-1]
    return leaf in ("gain", "offset", "bias")
