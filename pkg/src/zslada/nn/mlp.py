"""Feed-forward network with hand-written exact backward pass.

A network is a stack of layers, each ``linear -> batchnorm? -> activation
-> dropout?``. Parameters live in one flat float64 vector so optimizers and
checkpoints can treat every network uniformly; per-layer weight matrices are
zero-copy views into that vector.

Supported activations: ``relu``, ``leaky_relu:<slope>`` (bare ``leaky_relu``
means slope 0.2), ``sigmoid``, ``log_softmax``, ``identity``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from zslada.errors import ConfigError, DimensionMismatch, StaleCache
from zslada.rng import named_stream

BN_EPS = 1e-5

_ACTIVATIONS = ("relu", "leaky_relu", "sigmoid", "log_softmax", "identity")


def parse_activation(name: str) -> tuple[str, float]:
    """Split an activation string into (kind, slope)."""
    if name.startswith("leaky_relu"):
        _, _, slope = name.partition(":")
        return "leaky_relu", float(slope) if slope else 0.2
    if name not in _ACTIVATIONS:
        raise ConfigError(f"unknown activation {name!r}")
    return name, 0.0


def stable_sigmoid(z: np.ndarray) -> np.ndarray:
    """Sigmoid without overflow at either tail."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(frozen=True)
class MlpSpec:
    """Architecture description: widths input -> output plus per-layer knobs."""

    layer_widths: tuple[int, ...]
    activations: tuple[str, ...]
    batchnorm: tuple[bool, ...]
    dropout: tuple[float, ...]
    bn_momentum: float = 0.1

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        object.__setattr__(self, "activations", tuple(self.activations))
        object.__setattr__(self, "batchnorm", tuple(bool(b) for b in self.batchnorm))
        object.__setattr__(self, "dropout", tuple(float(p) for p in self.dropout))
        n = self.n_layers
        if n < 1:
            raise ConfigError("need at least one layer (two widths)")
        if any(w <= 0 for w in widths):
            raise ConfigError(f"layer widths must be positive, got {widths}")
        for seq, label in ((self.activations, "activations"),
                           (self.batchnorm, "batchnorm"),
                           (self.dropout, "dropout")):
            if len(seq) != n:
                raise ConfigError(f"{label} must have {n} entries, got {len(seq)}")
        for a in self.activations:
            parse_activation(a)
        if any(not (0.0 <= p < 1.0) for p in self.dropout):
            raise ConfigError("dropout probabilities must lie in [0, 1)")

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def in_dim(self) -> int:
        return self.layer_widths[0]

    @property
    def out_dim(self) -> int:
        return self.layer_widths[-1]

    @classmethod
    def dense(cls, widths, activation="relu", out_activation="identity",
              batchnorm=False, dropout=0.0, bn_momentum=0.1) -> "MlpSpec":
        """Uniform hidden layers with a separate output activation.

        Batchnorm and dropout apply to hidden layers only; the output layer
        is always plain linear + ``out_activation``.
        """
        widths = tuple(int(w) for w in widths)
        n = len(widths) - 1
        acts = tuple([activation] * (n - 1) + [out_activation])
        bn = tuple([bool(batchnorm)] * (n - 1) + [False])
        dp = tuple([float(dropout)] * (n - 1) + [0.0])
        return cls(widths, acts, bn, dp, bn_momentum=bn_momentum)

    def to_dict(self) -> dict:
        return {
            "layer_widths": list(self.layer_widths),
            "activations": list(self.activations),
            "batchnorm": list(self.batchnorm),
            "dropout": list(self.dropout),
            "bn_momentum": self.bn_momentum,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(
            tuple(d["layer_widths"]),
            tuple(d["activations"]),
            tuple(d["batchnorm"]),
            tuple(d["dropout"]),
            bn_momentum=float(d.get("bn_momentum", 0.1)),
        )

    def n_params(self) -> int:
        return _layout(self)[1]

    def n_stats(self) -> int:
        return _layout(self)[2]

    def param_layout(self) -> tuple[tuple[str, int, int], ...]:
        """(label, start, stop) for every parameter slice, for error reports."""
        out = []
        for i, sl in enumerate(_layout(self)[0]):
            for key in ("W", "b", "gamma", "beta"):
                if sl.get(key) is not None:
                    s = sl[key]
                    out.append((f"layer{i}.{key}", s.start, s.stop))
        return tuple(out)


@dataclass
class _LayerSlices:
    W: slice
    b: slice
    gamma: slice | None
    beta: slice | None
    r_mean: slice | None
    r_var: slice | None

    def get(self, key):
        return getattr(self, key)

    def __getitem__(self, key):
        return getattr(self, key)


_LAYOUT_CACHE: dict[MlpSpec, tuple] = {}


def _layout(spec: MlpSpec):
    """Slices of the flat parameter/stat vectors, cached per spec."""
    cached = _LAYOUT_CACHE.get(spec)
    if cached is not None:
        return cached
    slices = []
    p = s = 0
    for i in range(spec.n_layers):
        n_in, n_out = spec.layer_widths[i], spec.layer_widths[i + 1]
        W = slice(p, p + n_in * n_out); p = W.stop
        b = slice(p, p + n_out); p = b.stop
        gamma = beta = r_mean = r_var = None
        if spec.batchnorm[i]:
            gamma = slice(p, p + n_out); p = gamma.stop
            beta = slice(p, p + n_out); p = beta.stop
            r_mean = slice(s, s + n_out); s = r_mean.stop
            r_var = slice(s, s + n_out); s = r_var.stop
        slices.append(_LayerSlices(W, b, gamma, beta, r_mean, r_var))
    result = (tuple(slices), p, s)
    _LAYOUT_CACHE[spec] = result
    return result


class MlpNetwork:
    """A spec plus its flat parameter vector, running stats, and mode."""

    def __init__(self, spec: MlpSpec, params: np.ndarray, stats: np.ndarray,
                 mode: str = "train", seed: int = 0):
        slices, n_params, n_stats = _layout(spec)
        if params.shape != (n_params,):
            raise ConfigError(
                f"parameter vector has length {params.shape}, spec needs {n_params}")
        if stats.shape != (n_stats,):
            raise ConfigError(
                f"stats vector has length {stats.shape}, spec needs {n_stats}")
        self.spec = spec
        self.params = np.asarray(params, dtype=np.float64)
        self.stats = np.asarray(stats, dtype=np.float64)
        self.seed = int(seed)
        self._slices = slices
        self._version = 0
        self.set_mode(mode)

    @property
    def mode(self) -> str:
        return self._mode

    def set_mode(self, mode: str) -> "MlpNetwork":
        if mode not in ("train", "eval"):
            raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
        self._mode = mode
        return self

    @property
    def version(self) -> int:
        return self._version

    def set_params(self, params: np.ndarray) -> None:
        params = np.asarray(params, dtype=np.float64)
        if params.shape != self.params.shape:
            raise ConfigError("parameter vector length changed")
        self.params = params
        self._version += 1

    def weight(self, i: int) -> np.ndarray:
        n_in, n_out = self.spec.layer_widths[i], self.spec.layer_widths[i + 1]
        return self.params[self._slices[i].W].reshape(n_in, n_out)

    def bias(self, i: int) -> np.ndarray:
        return self.params[self._slices[i].b]

    def copy(self) -> "MlpNetwork":
        return MlpNetwork(self.spec, self.params.copy(), self.stats.copy(),
                          mode=self.mode, seed=self.seed)


def init_network(spec: MlpSpec, seed: int, mode: str = "train") -> MlpNetwork:
    """Fresh network: Glorot-uniform weights, zero biases, identity batchnorm."""
    slices, n_params, n_stats = _layout(spec)
    params = np.zeros(n_params)
    stats = np.zeros(n_stats)
    for i, sl in enumerate(slices):
        n_in, n_out = spec.layer_widths[i], spec.layer_widths[i + 1]
        bound = np.sqrt(6.0 / (n_in + n_out))
        rng = named_stream(seed, "init", i)
        params[sl.W] = rng.uniform(-bound, bound, n_in * n_out)
        if sl.gamma is not None:
            params[sl.gamma] = 1.0
            stats[sl.r_var] = 1.0
    return MlpNetwork(spec, params, stats, mode=mode, seed=seed)


@dataclass
class MlpCache:
    """Saved activations from one forward pass, sufficient for backward."""

    version: int
    mode: str
    n_rows: int
    layers: list = field(default_factory=list)


def mlp_forward(net: MlpNetwork, batch: np.ndarray, rng_seed: int | None = None,
                update_stats: bool = True) -> tuple[np.ndarray, MlpCache]:
    """Run the network on a batch, keeping what backward needs.

    ``rng_seed`` drives dropout masks and is only consulted in train mode
    with a nonzero dropout probability somewhere. ``update_stats=False``
    computes train-mode batch statistics without committing them to the
    running averages (used when a frozen net appears inside another net's
    loss).
    """
    spec = net.spec
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2:
        x = x.reshape(1, -1)
    if x.shape[1] != spec.in_dim:
        raise DimensionMismatch(0, spec.in_dim, x.shape[1])
    train = net.mode == "train"
    if train and rng_seed is None and any(p > 0 for p in spec.dropout):
        raise ConfigError("train-mode forward with dropout needs rng_seed")
    cache = MlpCache(version=net.version, mode=net.mode, n_rows=x.shape[0])
    h = x
    for i in range(spec.n_layers):
        sl = net._slices[i]
        W = net.weight(i)
        z = h @ W + net.bias(i)
        rec = {"h_in": h}
        if spec.batchnorm[i]:
            gamma = net.params[sl.gamma]
            if train:
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                inv = 1.0 / np.sqrt(var + BN_EPS)
                if update_stats:
                    m = spec.bn_momentum
                    net.stats[sl.r_mean] = (1 - m) * net.stats[sl.r_mean] + m * mu
                    net.stats[sl.r_var] = (1 - m) * net.stats[sl.r_var] + m * var
            else:
                mu = net.stats[sl.r_mean]
                inv = 1.0 / np.sqrt(net.stats[sl.r_var] + BN_EPS)
            xhat = (z - mu) * inv
            z = gamma * xhat + net.params[sl.beta]
            rec["xhat"] = xhat
            rec["inv"] = inv
            rec["gamma"] = gamma
        kind, slope = parse_activation(spec.activations[i])
        if kind == "relu":
            a = np.maximum(z, 0.0)
            rec["z"] = z
        elif kind == "leaky_relu":
            a = np.where(z > 0, z, slope * z)
            rec["z"] = z
            rec["slope"] = slope
        elif kind == "sigmoid":
            a = stable_sigmoid(z)
            rec["a"] = a
        elif kind == "log_softmax":
            zs = z - z.max(axis=1, keepdims=True)
            a = zs - np.log(np.exp(zs).sum(axis=1, keepdims=True))
            rec["a"] = a
        else:
            a = z
        p = spec.dropout[i]
        if p > 0 and train:
            rng = named_stream(rng_seed, "dropout", i)
            mask = (rng.random(a.shape) >= p) / (1.0 - p)
            a = a * mask
            rec["mask"] = mask
        cache.layers.append(rec)
        h = a
    return h, cache


def mlp_backward(net: MlpNetwork, cache: MlpCache,
                 grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradients of the forward map.

    Returns ``(param_grads, input_grads)`` where ``param_grads`` matches the
    flat parameter vector and ``input_grads`` has the batch's shape. Raises
    ``StaleCache`` if the network's parameters changed since the forward
    pass that produced ``cache``.
    """
    spec = net.spec
    if cache.version != net.version or cache.mode != net.mode:
        raise StaleCache("activation cache does not match the network state")
    if len(cache.layers) != spec.n_layers:
        raise StaleCache("activation cache has the wrong number of layers")
    g = np.asarray(grad_out, dtype=np.float64)
    if g.ndim != 2:
        g = g.reshape(1, -1)
    if g.shape[0] != cache.n_rows:
        raise StaleCache(
            f"upstream gradient has {g.shape[0]} rows, cache saw {cache.n_rows}")
    if g.shape[1] != spec.out_dim:
        raise DimensionMismatch(spec.n_layers - 1, spec.out_dim, g.shape[1])
    grads = np.zeros_like(net.params)
    train = cache.mode == "train"
    for i in reversed(range(spec.n_layers)):
        sl = net._slices[i]
        rec = cache.layers[i]
        if "mask" in rec:
            g = g * rec["mask"]
        kind, _ = parse_activation(spec.activations[i])
        if kind == "relu":
            g = g * (rec["z"] > 0)
        elif kind == "leaky_relu":
            g = np.where(rec["z"] > 0, g, rec["slope"] * g)
        elif kind == "sigmoid":
            a = rec["a"]
            g = g * a * (1.0 - a)
        elif kind == "log_softmax":
            soft = np.exp(rec["a"])
            g = g - soft * g.sum(axis=1, keepdims=True)
        if spec.batchnorm[i]:
            xhat, inv, gamma = rec["xhat"], rec["inv"], rec["gamma"]
            grads[sl.gamma] = (g * xhat).sum(axis=0)
            grads[sl.beta] = g.sum(axis=0)
            gx = g * gamma
            if train:
                # gradient through the batch mean/variance
                n = cache.n_rows
                g = (inv / n) * (n * gx - gx.sum(axis=0)
                                 - xhat * (gx * xhat).sum(axis=0))
            else:
                g = gx * inv
        h_in = rec["h_in"]
        n_in, n_out = spec.layer_widths[i], spec.layer_widths[i + 1]
        grads[sl.W] = (h_in.T @ g).reshape(n_in * n_out)
        grads[sl.b] = g.sum(axis=0)
        g = g @ net.weight(i).T
    return grads, g


def forward_eval(net: MlpNetwork, batch: np.ndarray) -> np.ndarray:
    """Pure eval-mode forward regardless of the network's current mode.

    Wraps the parameter and stat vectors in a throwaway eval-mode view,
    so concurrent readers never observe a mode flip on the shared net.
    """
    frozen = MlpNetwork(net.spec, net.params, net.stats, mode="eval", seed=net.seed)
    out, _ = mlp_forward(frozen, batch)
    return out
