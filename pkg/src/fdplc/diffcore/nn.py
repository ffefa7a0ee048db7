"""Parameter containers and the layers the codec, concealment network and
discriminators are assembled from.

Layers build their weights in float64 from an explicit ``numpy.random.Generator``;
call :meth:`Module.astype` on the root module to switch precision.
"""
import numpy as np

from ..errors import CheckpointError, ConfigError, ShapeError
from . import functional as F
from .tensor import Tensor, gelu, leaky_relu, pad, stack


class Parameter(Tensor):
    def __init__(self, data):
        arr = np.array(data)
        super().__init__(arr if arr.dtype.kind == "f" else arr.astype(np.float64), requires_grad=True)


class Module:
    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    # -- traversal ----------------------------------------------------------
    def _children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield f"{name}.{i}", item

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
        for name, child in self._children():
            yield from child.named_parameters(f"{prefix}{name}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix=""):
        for name, value in getattr(self, "_buffers", {}).items():
            yield prefix + name, value
        for name, child in self._children():
            yield from child.named_buffers(f"{prefix}{name}.")

    def register_buffer(self, name, value):
        if "_buffers" not in vars(self):
            self._buffers = {}
        self._buffers[name] = np.asarray(value)

    def num_parameters(self):
        return int(sum(p.size for p in self.parameters()))

    # -- mode / precision -----------------------------------------------------
    def train(self, mode=True):
        self.training = mode
        for _, child in self._children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def astype(self, dtype):
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        self._cast_buffers(dtype)
        return self

    def _cast_buffers(self, dtype):
        for key, value in getattr(self, "_buffers", {}).items():
            if value.dtype.kind == "f":
                self._buffers[key] = value.astype(dtype)
        for _, child in self._children():
            child._cast_buffers(dtype)

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def requires_grad_(self, flag):
        for p in self.parameters():
            p.requires_grad = flag
        return self

    # -- state ------------------------------------------------------------------
    def state_dict(self):
        state = {name: p.data for name, p in self.named_parameters()}
        state.update({name: b for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state, strict=True):
        params = dict(self.named_parameters())
        owners = {}
        self._collect_buffer_owners("", owners)
        expected = set(params) | set(owners)
        if strict:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            if missing or extra:
                raise CheckpointError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for name, value in state.items():
            if name in params:
                if params[name].shape != value.shape:
                    raise CheckpointError(f"{name}: shape {value.shape} != {params[name].shape}")
                params[name].data = np.array(value, dtype=params[name].dtype)
            elif name in owners:
                module, key = owners[name]
                if module._buffers[key].shape != value.shape:
                    raise CheckpointError(f"{name}: shape {value.shape} != {module._buffers[key].shape}")
                module._buffers[key] = np.array(value, dtype=module._buffers[key].dtype)

    def _collect_buffer_owners(self, prefix, owners):
        for key in getattr(self, "_buffers", {}):
            owners[prefix + key] = (self, key)
        for name, child in self._children():
            child._collect_buffer_owners(f"{prefix}{name}.", owners)


def _uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape)


class Linear(Module):
    """Pointwise (1x1) projection over the last axis."""

    def __init__(self, n_in, n_out, rng, bias=True, init="uniform"):
        if init == "zeros":
            w = np.zeros((n_in, n_out))
        elif init == "identity":
            w = np.eye(n_in, n_out)
        else:
            w = _uniform(rng, (n_in, n_out), 1.0 / np.sqrt(n_in))
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(n_out)) if bias else None

    def forward(self, x):
        y = x @ self.weight
        return y + self.bias if self.bias is not None else y


class CausalConv1d(Module):
    def __init__(self, n_in, n_out, kernel, rng, dilation=1, bias=True):
        self.dilation = dilation
        self.weight = Parameter(_uniform(rng, (kernel, n_in, n_out), 1.0 / np.sqrt(kernel * n_in)))
        self.bias = Parameter(np.zeros(n_out)) if bias else None

    def forward(self, x):
        return F.causal_conv1d(x, self.weight, self.bias, self.dilation)


class DepthwiseConv1d(Module):
    def __init__(self, channels, kernel, rng, dilation=1):
        self.dilation = dilation
        self.weight = Parameter(_uniform(rng, (kernel, channels), 1.0 / np.sqrt(kernel)))
        self.bias = Parameter(np.zeros(channels))

    def forward(self, x):
        return F.depthwise_conv1d(x, self.weight, self.bias, self.dilation)


class SpectralNorm(Module):
    """Divides a weight by its largest singular value, tracked by power iteration.

    The weight is viewed as a ``(-1, n_out)`` matrix. In training mode every
    forward call runs ``n_power_iterations`` updates of the persistent ``u``/``v``
    vectors; in eval mode the stored vectors are used as-is, which makes the
    normalized weight a smooth function of the raw weight.
    """

    def __init__(self, weight, rng, n_power_iterations=1, eps=1e-12):
        self.n_power_iterations = n_power_iterations
        self.eps = eps
        m, n = int(np.prod(weight.shape[:-1])), weight.shape[-1]
        u = rng.normal(size=m)
        v = rng.normal(size=n)
        self.register_buffer("u", u / np.linalg.norm(u))
        self.register_buffer("v", v / np.linalg.norm(v))
        # warm start so the estimate is already tight at the first training step
        self.power_iterate(np.asarray(weight, dtype=np.float64).reshape(m, n), 50)

    def _normalize(self, x):
        return x / max(np.linalg.norm(x), self.eps)

    def power_iterate(self, weight_matrix, steps):
        u, v = self._buffers["u"], self._buffers["v"]
        for _ in range(steps):
            v = self._normalize(weight_matrix.T @ u)
            u = self._normalize(weight_matrix @ v)
        self._buffers["u"], self._buffers["v"] = u, v

    def forward(self, weight):
        mat = weight.reshape(-1, weight.shape[-1])
        if self.training and self.n_power_iterations > 0:
            self.power_iterate(mat.data, self.n_power_iterations)
        u = self._buffers["u"].astype(weight.dtype)
        v = self._buffers["v"].astype(weight.dtype)
        sigma = (mat @ Tensor(v[:, None])).reshape(-1)
        sigma = (sigma * Tensor(u)).sum()
        return weight / sigma


class Conv2d(Module):
    """Conv over ``(B, T, F, C)``; causal in time unless ``pad_t`` is given."""

    def __init__(self, n_in, n_out, kernel, stride, rng, pad_t=None, pad_f=None,
                 spectral_norm=False, bias=True):
        kt, kf = kernel
        self.stride = tuple(stride)
        if min(self.stride) < 1:
            raise ConfigError(f"stride must be >= 1, got {stride}")
        self.pad_t = pad_t
        self.pad_f = pad_f
        self.weight = Parameter(_uniform(rng, (kt, kf, n_in, n_out), 1.0 / np.sqrt(kt * kf * n_in)))
        self.bias = Parameter(np.zeros(n_out)) if bias else None
        self.sn = SpectralNorm(self.weight.data, rng) if spectral_norm else None

    def effective_weight(self):
        return self.sn(self.weight) if self.sn is not None else self.weight

    def forward(self, x):
        return F.conv2d(x, self.effective_weight(), self.bias, self.stride, self.pad_t, self.pad_f)


class FreqDeconv2d(Module):
    """Transposed conv with frequency stride 2: zero insertion then a same-padded conv.

    Maps ``F`` bins to ``2F - 1``, undoing a stride-2 ceil-mode :class:`Conv2d`.
    """

    def __init__(self, n_in, n_out, kernel, rng, bias=True):
        self.conv = Conv2d(n_in, n_out, kernel, (1, 1), rng, bias=bias)

    def forward(self, x):
        w = self.conv.weight
        if w.shape[1] != 3:
            return self.conv(F.upsample_freq(x, 2))
        # polyphase form of the 3-tap case: even outputs see tap 1 only,
        # odd outputs see taps 0 and 2 of neighbouring input bins
        B, T, Fi, _ = x.shape
        even = F.conv2d(x, w[:, 1:2], self.conv.bias, pad_f=(0, 0))
        odd = F.conv2d(x, w[:, 0:3:2], self.conv.bias, pad_f=(0, 0))
        odd = pad(odd, ((0, 0), (0, 0), (0, 1), (0, 0)))
        out = stack([even, odd], axis=3).reshape(B, T, 2 * Fi, even.shape[-1])
        return out[:, :, :2 * Fi - 1]


class LayerNorm(Module):
    """Per-frame normalization over the channel axis followed by an affine map."""

    def __init__(self, channels, eps=1e-5):
        self.eps = eps
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))

    def forward(self, x):
        return F.standardize(x, axes=(-1,), eps=self.eps) * self.gamma + self.beta


class InstanceNorm(Module):
    """Per-channel normalization of ``(B, T, F, C)`` maps.

    By default statistics cover the whole ``T x F`` grid of each sample; with
    ``per_frame=True`` they cover the frequency axis of each frame only, which
    keeps the operation causal in time.
    """

    def __init__(self, channels, per_frame=False, eps=1e-5):
        self.axes = (2,) if per_frame else (1, 2)
        self.eps = eps
        self.gamma = Parameter(np.ones(channels))
        self.beta = Parameter(np.zeros(channels))

    def forward(self, x):
        return F.standardize(x, axes=self.axes, eps=self.eps) * self.gamma + self.beta


class GroupGRU(Module):
    """Channels split into groups, one independent GRU per group."""

    def __init__(self, channels, groups, rng):
        if groups < 1 or channels % groups:
            raise ConfigError(f"{channels} channels not divisible into {groups} groups")
        self.groups = groups
        d = channels // groups
        self.group_dim = d
        bound = 1.0 / np.sqrt(d)
        self.w_in = Parameter(_uniform(rng, (groups, d, 3 * d), bound))
        self.b_in = Parameter(np.zeros((groups, 3, d)))
        self.w_hid = Parameter(_uniform(rng, (groups, 3, d, d), bound))
        self.b_hid = Parameter(np.zeros((groups, 3, d)))

    def forward(self, x, state=None):
        """Return ``(sequence, last_state)``; ``state`` is ``(B, G, d)`` or None for zeros."""
        B, T, C = x.shape
        G, d = self.groups, self.group_dim
        if C != G * d:
            raise ShapeError(f"GroupGRU expects {G * d} channels, got {C}")
        xg = x.reshape(B, T, G, 1, d)
        gi = (xg @ self.w_in).reshape(B, T, G, 3, d) + self.b_in
        hs = F.gru_scan(gi, self.w_hid, self.b_hid, state)
        return hs.reshape(B, T, C), hs[:, T - 1]


def activation(x, kind):
    if kind == "gelu":
        return gelu(x)
    if kind == "leaky_relu":
        return leaky_relu(x, 0.2)
    if kind == "sigmoid":
        return x.sigmoid()
    if kind == "tanh":
        return x.tanh()
    raise ConfigError(f"unknown activation {kind!r}")

