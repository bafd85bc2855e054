"""Small trainable stack: MLP encoder, one-layer projector and class proxies.

Forward passes return ``(output, cache)``; backward passes consume the cache
and return parameter gradients plus the gradient with respect to the input.
Parameter gradients are keyed by the names from :meth:`ModelParams.named_arrays`.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, StaleCache
from .losses import ProxyBank
from .numerics import normalize_rows, normalize_rows_backward


@dataclass
class LinearLayerParams:
    weight: np.ndarray  # out x in
    bias: np.ndarray  # out

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise DimensionMismatch(f"weight {self.weight.shape} and bias {self.bias.shape} disagree")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator) -> "LinearLayerParams":
        # He-uniform weights, zero bias
        bound = np.sqrt(6.0 / in_dim)
        return cls(rng.uniform(-bound, bound, (out_dim, in_dim)), np.zeros(out_dim))

    @classmethod
    def identity(cls, dim: int) -> "LinearLayerParams":
        return cls(np.eye(dim), np.zeros(dim))


@dataclass
class ModelParams:
    encoder: list[LinearLayerParams]
    projector: LinearLayerParams
    proxies: ProxyBank

    def __post_init__(self):
        for prev, nxt in zip(self.encoder, self.encoder[1:]):
            if prev.out_dim != nxt.in_dim:
                raise DimensionMismatch("encoder layer dimensions do not compose")
        if self.projector.in_dim != self.latent_dim:
            raise DimensionMismatch("projector input dim must equal the latent dim")
        if self.proxies.vectors.shape[1] != self.latent_dim:
            raise DimensionMismatch("proxies must live in the latent space")

    @property
    def latent_dim(self) -> int:
        return self.encoder[-1].out_dim

    @classmethod
    def init(
        cls,
        in_dim: int,
        classes,
        hidden: tuple[int, ...] = (64,),
        latent_dim: int = 32,
        proj_dim: int = 32,
        seed: int = 0,
    ) -> "ModelParams":
        rng = np.random.default_rng(seed)
        dims = [in_dim, *hidden, latent_dim]
        encoder = [LinearLayerParams.init(a, b, rng) for a, b in zip(dims, dims[1:])]
        projector = LinearLayerParams.init(latent_dim, proj_dim, rng)
        proxies = ProxyBank.random(list(classes), latent_dim, rng)
        return cls(encoder, projector, proxies)

    def named_arrays(self) -> dict[str, np.ndarray]:
        """Live references to every trainable array, in a fixed order."""
        out = {}
        for k, layer in enumerate(self.encoder):
            out[f"encoder.{k}.weight"] = layer.weight
            out[f"encoder.{k}.bias"] = layer.bias
        out["projector.weight"] = self.projector.weight
        out["projector.bias"] = self.projector.bias
        out["proxies"] = self.proxies.vectors
        return out

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.named_arrays().items()}


@dataclass
class StackCache:
    inputs: list[np.ndarray] = field(default_factory=list)  # input to each layer
    pre: list[np.ndarray] = field(default_factory=list)  # pre-activation of each layer
    unit: np.ndarray | None = None
    norms: np.ndarray | None = None
    relu_last: bool = False


def _forward_stack(x: np.ndarray, layers: list[LinearLayerParams], relu_last: bool) -> tuple[np.ndarray, StackCache]:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != layers[0].in_dim:
        raise DimensionMismatch(f"input dim {x.shape[1]} != layer input dim {layers[0].in_dim}")
    cache = StackCache(relu_last=relu_last)
    h = x
    for k, layer in enumerate(layers):
        cache.inputs.append(h)
        a = h @ layer.weight.T + layer.bias
        cache.pre.append(a)
        last = k == len(layers) - 1
        h = np.maximum(a, 0.0) if (not last or relu_last) else a
    unit, norms = normalize_rows(h)
    cache.unit, cache.norms = unit, norms
    return unit, cache


def _backward_stack(
    grad_out: np.ndarray, cache: StackCache, layers: list[LinearLayerParams]
) -> tuple[list[tuple[np.ndarray, np.ndarray]], np.ndarray]:
    if cache.unit is None or grad_out.shape != cache.unit.shape or len(cache.pre) != len(layers):
        raise StaleCache("cache does not match this gradient or layer stack")
    g = normalize_rows_backward(grad_out, cache.unit, cache.norms)
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(layers)  # type: ignore[list-item]
    for k in range(len(layers) - 1, -1, -1):
        last = k == len(layers) - 1
        if not last or cache.relu_last:
            g = g * (cache.pre[k] > 0)
        grads[k] = (g.T @ cache.inputs[k], g.sum(axis=0))
        g = g @ layers[k].weight
    return grads, g


def forward_encoder(inputs, params: ModelParams) -> tuple[np.ndarray, StackCache]:
    """Linear/ReLU chain, final linear, then row-wise L2 normalization."""
    return _forward_stack(inputs, params.encoder, relu_last=False)


def forward_projector(latents, params: ModelParams | LinearLayerParams) -> tuple[np.ndarray, StackCache]:
    """Linear, ReLU, then L2 normalization.

    ReLU runs before normalization so outputs stay unit length.
    """
    layer = params.projector if isinstance(params, ModelParams) else params
    return _forward_stack(latents, [layer], relu_last=True)


def encoder_backward(grad_latents, cache: StackCache, params: ModelParams) -> tuple[dict[str, np.ndarray], np.ndarray]:
    grads, g_in = _backward_stack(np.asarray(grad_latents, dtype=np.float64), cache, params.encoder)
    out = {}
    for k, (gw, gb) in enumerate(grads):
        out[f"encoder.{k}.weight"] = gw
        out[f"encoder.{k}.bias"] = gb
    return out, g_in


def projector_backward(grad_emb, cache: StackCache, params: ModelParams) -> tuple[dict[str, np.ndarray], np.ndarray]:
    ((gw, gb),), g_in = _backward_stack(np.asarray(grad_emb, dtype=np.float64), cache, [params.projector])
    return {"projector.weight": gw, "projector.bias": gb}, g_in


def backward(
    grad_latents,
    encoder_cache: StackCache,
    params: ModelParams,
    grad_embeddings=None,
    projector_cache: StackCache | None = None,
    grad_proxies=None,
) -> dict[str, np.ndarray]:
    """Gradients for every parameter given upstream gradients on the outputs.

    ``grad_embeddings`` flows through the projector into the latents before
    the encoder pass; the projector cache must have been produced from the
    encoder's latents for that to be meaningful.
    """
    grads = params.zero_grads()
    g_lat = np.array(grad_latents, dtype=np.float64)
    if grad_embeddings is not None:
        if projector_cache is None:
            raise StaleCache("projector gradient given without a projector cache")
        pg, g_in = projector_backward(grad_embeddings, projector_cache, params)
        grads.update(pg)
        g_lat = g_lat + g_in
    eg, _ = encoder_backward(g_lat, encoder_cache, params)
    grads.update(eg)
    if grad_proxies is not None:
        grads["proxies"] = grads["proxies"] + grad_proxies
    return grads
