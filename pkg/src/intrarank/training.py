"""One-step and one-epoch training, plus checkpoints.

A step encodes the batch, applies the Proxy-Anchor loss to the latents,
synthesizes families from eligible same-class pairs, projects originals,
variants and class proxies, and applies the ranking loss to the projected
cosines. The two are mixed as ``metric + lambda * ranking`` and
backpropagated through every path, including the interpolation that builds
the variants (unless ``stop_grad_generation`` is set).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import BatchSpec, DatasetTable, iter_epoch
from .hyperparams import HyperParams
from .losses import (
    AnchorSimilarityTable,
    LossValueWithGrad,
    ProxyBank,
    combined_loss,
    proxy_anchor_loss,
    ranking_loss,
)
from .model import LinearLayerParams, ModelParams, backward, forward_encoder, forward_projector, projector_backward
from .optim import OptimizerState, adamw_step
from .synthesis import candidate_pairs, generate_families, interpolate, interpolate_backward, strengths

CHECKPOINT_VERSION = 1


@dataclass
class StepResult:
    metric_loss: float
    ranking_loss: float
    combined: float
    n_families: int
    grads: dict[str, np.ndarray] = field(repr=False)


def _ranking_branch(params: ModelParams, latents: np.ndarray, labels: np.ndarray, hp: HyperParams):
    """Forward of the synthesis/projection branch.

    Returns ``(loss, backward_fn, n_families)``; ``backward_fn(scale)`` maps
    the scaled ranking gradient to ``(param_grads, grad_latents)``.
    """
    a_idx, p_idx = candidate_pairs(latents, labels, hp.gamma)
    m = len(a_idx)
    if m == 0:
        return LossValueWithGrad(0.0, {"s": np.zeros((0, hp.n_generated)), "t": np.zeros((0, hp.n_generated))}), None, 0

    t = strengths(hp.alpha, hp.n_generated)
    n, d = len(t), latents.shape[1]
    variants, icache = interpolate(latents, a_idx, p_idx, t)

    fam_classes = labels[a_idx]
    anchor_rows = params.proxies.index_of(fam_classes)
    used, anchor_of_family = np.unique(anchor_rows, return_inverse=True)

    # one projector pass over originals, variants and the used proxies
    proj_in = np.vstack([latents[a_idx], variants.reshape(m * n, d), params.proxies.vectors[used]])
    z, pcache = forward_projector(proj_in, params)
    z_orig = z[:m]
    z_var = z[m : m + m * n].reshape(m, n, -1)
    z_anc = z[m + m * n :]

    s = np.einsum("xnd,xd->xn", z_var, z_orig)
    s_anchor = np.einsum("xnd,xd->xn", z_var, z_anc[anchor_of_family])
    table = AnchorSimilarityTable(s_anchor, fam_classes)
    loss = ranking_loss(s, table, hp)

    def backward_fn(g_s: np.ndarray, g_t: np.ndarray):
        g_zvar = g_s[:, :, None] * z_orig[:, None, :] + g_t[:, :, None] * z_anc[anchor_of_family][:, None, :]
        g_zorig = np.einsum("xn,xnd->xd", g_s, z_var)
        g_zanc = np.zeros_like(z_anc)
        np.add.at(g_zanc, anchor_of_family, np.einsum("xn,xnd->xd", g_t, z_var))
        g_z = np.vstack([g_zorig, g_zvar.reshape(m * n, -1), g_zanc])
        pgrads, g_in = projector_backward(g_z, pcache, params)

        g_lat = np.zeros_like(latents)
        np.add.at(g_lat, a_idx, g_in[:m])
        if not hp.stop_grad_generation:
            g_lat += interpolate_backward(g_in[m : m + m * n].reshape(m, n, d), icache, len(latents))
        g_prox = np.zeros_like(params.proxies.vectors)
        np.add.at(g_prox, used, g_in[m + m * n :])
        return pgrads, g_lat, g_prox

    return loss, backward_fn, m


def train_step(params: ModelParams, features: np.ndarray, labels: np.ndarray, hp: HyperParams) -> StepResult:
    """Loss values and gradients for one batch; parameters are not touched."""
    labels = np.asarray(labels)
    latents, ecache = forward_encoder(features, params)
    metric = proxy_anchor_loss(latents, labels, params.proxies, hp.margin_pa, hp.scale_pa)

    if hp.lambda_mix > 0:
        ranking, rank_backward, n_fam = _ranking_branch(params, latents, labels, hp)
    else:
        ranking, rank_backward = LossValueWithGrad(0.0, {}), None
        n_fam = len(candidate_pairs(latents, labels, hp.gamma)[0])

    total = combined_loss(metric, ranking, hp.lambda_mix)
    g_lat = total.grad["embeddings"]
    g_prox = total.grad["proxies"]
    proj_grads = None
    if rank_backward is not None:
        proj_grads, g_lat_r, g_prox_r = rank_backward(total.grad["s"], total.grad["t"])
        g_lat = g_lat + g_lat_r
        g_prox = g_prox + g_prox_r
    grads = backward(g_lat, ecache, params, grad_proxies=g_prox)
    if proj_grads is not None:
        grads.update(proj_grads)
    return StepResult(metric.value, ranking.value, total.value, n_fam, grads)


def step_loss(params: ModelParams, features, labels, hp: HyperParams) -> float:
    return train_step(params, features, labels, hp).combined


def apply_update(params: ModelParams, grads: dict[str, np.ndarray], state: OptimizerState) -> None:
    adamw_step(params.named_arrays(), grads, state)
    params.proxies.renormalize()


@dataclass
class EpochReport:
    epoch: int
    metric_loss: list[float] = field(default_factory=list)
    ranking_loss: list[float] = field(default_factory=list)
    combined: list[float] = field(default_factory=list)
    n_families: list[int] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "epoch": self.epoch,
            "metric_loss": float(np.mean(self.metric_loss)),
            "ranking_loss": float(np.mean(self.ranking_loss)),
            "combined": float(np.mean(self.combined)),
            "families_per_batch_mean": float(np.mean(self.n_families)),
        }


def train_epoch(
    dataset: DatasetTable,
    params: ModelParams,
    state: OptimizerState,
    hp: HyperParams,
    epoch: int = 0,
    seed: int = 0,
) -> EpochReport:
    """Run every batch of one epoch over the training split, updating in place."""
    spec = BatchSpec(hp.classes_per_batch, hp.samples_per_class, seed)
    report = EpochReport(epoch)
    for x, y, _ in iter_epoch(dataset, spec, epoch):
        res = train_step(params, x, y, hp)
        apply_update(params, res.grads, state)
        report.metric_loss.append(res.metric_loss)
        report.ranking_loss.append(res.ranking_loss)
        report.combined.append(res.combined)
        report.n_families.append(res.n_families)
    state.lr *= hp.lr_decay
    return report


def fit(
    table: DatasetTable,
    hp: HyperParams,
    seed: int = 0,
    hidden: tuple[int, ...] = (64,),
    latent_dim: int = 32,
    proj_dim: int = 32,
    params: ModelParams | None = None,
    on_epoch=None,
) -> tuple[ModelParams, OptimizerState, list[dict]]:
    """Initialize (unless ``params`` is given) and train for ``hp.epochs`` epochs."""
    hp.validate()
    train = table.train() if table.test_classes else table
    if params is None:
        params = ModelParams.init(train.dim, sorted(train.classes), hidden, latent_dim, proj_dim, seed)
    state = OptimizerState.from_hparams(hp)
    rows = []
    for epoch in range(hp.epochs):
        summary = train_epoch(train, params, state, hp, epoch, seed).summary()
        rows.append(summary)
        if on_epoch is not None:
            on_epoch(summary)
    return params, state, rows


def embed(params: ModelParams, features) -> np.ndarray:
    """Retrieval embeddings: encoder latents only, never the projector."""
    z, _ = forward_encoder(features, params)
    return z


def heldout_families(params: ModelParams, table: DatasetTable, hp: HyperParams):
    """Families built from ``table`` latents with ``hp``'s generation settings."""
    return generate_families(embed(params, table.features), table.labels, hp.alpha, hp.n_generated, hp.gamma)


# checkpoints ---------------------------------------------------------------


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()[:16]


def save_checkpoint(path, params: ModelParams, state: OptimizerState, config: dict) -> None:
    """Write an ``.npz`` archive.

    Layout: ``meta`` holds JSON with the format version, encoder depth,
    optimizer scalars, the run config and its hash; ``param/<name>``,
    ``m/<name>`` and ``v/<name>`` hold the arrays; ``proxy_classes`` the
    class ids in proxy order.
    """
    meta = {
        "version": CHECKPOINT_VERSION,
        "n_encoder_layers": len(params.encoder),
        "optimizer": {
            "lr": state.lr,
            "weight_decay": state.weight_decay,
            "beta1": state.beta1,
            "beta2": state.beta2,
            "eps": state.eps,
            "step": state.step,
            "lr_scales": state.lr_scales,
        },
        "config": config,
        "config_hash": config_hash(config),
    }
    arrays = {"meta": np.array(json.dumps(meta, sort_keys=True)), "proxy_classes": params.proxies.classes}
    for name, arr in params.named_arrays().items():
        arrays[f"param/{name}"] = arr
        if name in state.m:
            arrays[f"m/{name}"] = state.m[name]
            arrays[f"v/{name}"] = state.v[name]
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple[ModelParams, OptimizerState, dict]:
    with np.load(Path(path), allow_pickle=False) as npz:
        meta = json.loads(str(npz["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        get = lambda key: np.array(npz[key], dtype=np.float64)  # noqa: E731
        encoder = [
            LinearLayerParams(get(f"param/encoder.{k}.weight"), get(f"param/encoder.{k}.bias"))
            for k in range(meta["n_encoder_layers"])
        ]
        projector = LinearLayerParams(get("param/projector.weight"), get("param/projector.bias"))
        proxies = ProxyBank(np.array(npz["proxy_classes"]), get("param/proxies"))
        params = ModelParams(encoder, projector, proxies)
        opt = meta["optimizer"]
        state = OptimizerState(**{k: opt[k] for k in ("lr", "weight_decay", "beta1", "beta2", "eps", "step", "lr_scales")})
        for name in params.named_arrays():
            if f"m/{name}" in npz:
                state.m[name] = get(f"m/{name}")
                state.v[name] = get(f"v/{name}")
    return params, state, meta["config"]
