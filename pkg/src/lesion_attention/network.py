"""CAM-compatible classifier: conv stack -> GAP -> dropout -> FC -> sigmoid."""

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .rng import INIT, stream


@dataclass(frozen=True)
class ConvBlock:
    out_channels: int
    kernel_size: int = 3
    padding: int = 1
    pool: bool = True


def _default_blocks():
    return tuple(ConvBlock(c) for c in (8, 16, 32, 64))


@dataclass(frozen=True)
class NetConfig:
    """Architecture description. The default is the desk-scale 4-block net."""

    input_side: int = 64
    in_channels: int = 3
    blocks: tuple = field(default_factory=_default_blocks)
    dropout_p: float = 0.5

    @property
    def n_pooled(self):
        return sum(1 for b in self.blocks if b.pool)

    @property
    def feature_side(self):
        side = self.input_side
        for b in self.blocks:
            side = side + 2 * b.padding - b.kernel_size + 1
            if b.pool:
                side //= 2
        return side

    @property
    def feature_channels(self):
        return self.blocks[-1].out_channels

    def validate(self):
        if not self.blocks:
            raise ConfigError("network needs at least one conv block")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        side = self.input_side
        for i, b in enumerate(self.blocks):
            side = side + 2 * b.padding - b.kernel_size + 1
            if side < 1:
                raise ConfigError(f"block {i} shrinks the feature map to nothing")
            if b.pool:
                if side % 2:
                    raise ConfigError(
                        f"input_side {self.input_side} is not divisible by 2^{self.n_pooled} "
                        f"(odd side {side} before pool in block {i})"
                    )
                side //= 2

    def to_dict(self):
        d = asdict(self)
        d["blocks"] = [asdict(b) for b in self.blocks]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["blocks"] = tuple(ConvBlock(**b) for b in d.get("blocks", []))
        return cls(**d)


class CamNet:
    """Parameters plus forward pass of the classifier.

    ``head_weight`` has shape ``[1, K]``; for the single melanoma logit it is
    exactly the per-channel weight used to build the class activation map.
    """

    def __init__(self, config, params):
        self.config = config
        self.params = params

    @property
    def head_weight(self):
        return self.params["head.weight"]

    @property
    def head_bias(self):
        return self.params["head.bias"]

    @property
    def input_side(self):
        return self.config.input_side

    @property
    def feature_side(self):
        return self.config.feature_side

    @property
    def feature_channels(self):
        return self.config.feature_channels

    @property
    def dtype(self):
        return self.head_weight.dtype

    def parameters(self):
        """Parameters in a fixed order (the checkpoint layout order)."""
        return [self.params[k] for k in self.param_names()]

    def param_names(self):
        names = []
        for i in range(len(self.config.blocks)):
            names += [f"conv{i}.weight", f"conv{i}.bias"]
        return names + ["head.weight", "head.bias"]

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def features(self, batch):
        x = batch
        for i, block in enumerate(self.config.blocks):
            x = T.conv2d(x, self.params[f"conv{i}.weight"], self.params[f"conv{i}.bias"],
                         stride=1, padding=block.padding)
            x = T.relu(x)
            if block.pool:
                x = T.maxpool2(x)
        return x

    def forward(self, batch, training=False, seed=0):
        """Return ``(scores[N,1], features[N,K,F,F])``.

        ``features`` are the post-ReLU activations of the last conv block.
        """
        if not isinstance(batch, T.Tensor):
            batch = T.Tensor(np.asarray(batch, dtype=self.dtype))
        if batch.ndim != 4 or batch.shape[1] != self.config.in_channels:
            raise DimensionError(
                f"expected batch [N,{self.config.in_channels},S,S], got shape {batch.shape}"
            )
        s = self.config.input_side
        if batch.shape[2] != s or batch.shape[3] != s:
            raise DimensionError(f"expected spatial size {s}x{s}, got {batch.shape[2]}x{batch.shape[3]}")
        feats = self.features(batch)
        pooled = T.global_avg_pool(feats)
        dropped = T.dropout(pooled, self.config.dropout_p, training, rng_seed=seed)
        logits = T.linear(dropped, self.head_weight, self.head_bias)
        return T.sigmoid(logits), feats

    __call__ = forward

    def copy(self):
        return CamNet(self.config, {k: T.Tensor(v.data, requires_grad=True) for k, v in self.params.items()})

    def state(self):
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state(self, state):
        for k, v in state.items():
            self.params[k].data = v.copy()


def build_network(config=None, seed=0, dtype=np.float64):
    """Create a :class:`CamNet` with fan-in scaled uniform weights and zero biases."""
    config = config or NetConfig()
    config.validate()
    rng = stream(seed, INIT)
    params = {}
    c_in = config.in_channels
    for i, b in enumerate(config.blocks):
        fan_in = c_in * b.kernel_size * b.kernel_size
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(b.out_channels, c_in, b.kernel_size, b.kernel_size))
        params[f"conv{i}.weight"] = T.Tensor(w.astype(dtype), requires_grad=True)
        params[f"conv{i}.bias"] = T.Tensor(np.zeros(b.out_channels, dtype=dtype), requires_grad=True)
        c_in = b.out_channels
    bound = 1.0 / np.sqrt(c_in)
    params["head.weight"] = T.Tensor(rng.uniform(-bound, bound, size=(1, c_in)).astype(dtype), requires_grad=True)
    params["head.bias"] = T.Tensor(np.zeros(1, dtype=dtype), requires_grad=True)
    return CamNet(config, params)


def _cam_node(features, weight):
    """``cam[n,x,y] = sum_k weight[0,k] * features[n,k,x,y]``, graph-connected."""
    f, w = features.data, weight.data[0]
    out = np.einsum("nkxy,k->nxy", f, w)

    def bw(g):
        gf = g[:, None, :, :] * w[None, :, None, None]
        gw = np.einsum("nxy,nkxy->k", g, f)[None, :]
        return gf, gw

    return T._node(out, (features, weight), bw)


def compute_cam(net, features):
    """Class activation maps ``[N,F,F]`` for the melanoma logit.

    Bias is not part of the map; ``mean(cam) == logit - bias`` exactly when no
    dropout is applied.
    """
    if not isinstance(features, T.Tensor):
        features = T.Tensor(features)
    if features.ndim != 4:
        raise DimensionError(f"features must be [N,K,F,F], got shape {features.shape}")
    k = net.head_weight.shape[1]
    if features.shape[1] != k:
        raise DimensionError(f"CAM channel mismatch: features K={features.shape[1]}, head weight K={k}")
    return _cam_node(features, net.head_weight)
