"""End-to-end workflows behind the CLI: train, evaluate, synthesize, sweep, grad-check."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data import BUNDLED_SETTINGS, DatasetTable, bundled_dataset, generate_synthetic, load_table
from .errors import UnknownParam
from .evaluation import EvalReport, grad_check, rank_preservation, recall_at_k
from .hyperparams import HyperParams
from .losses import AnchorSimilarityTable, ProxyBank, anchor_loss, proxy_anchor_loss, ranking_loss, sort_loss
from .model import ModelParams
from .numerics import normalize_rows
from .optim import OptimizerState
from .synthesis import generate_families
from .training import embed, fit, heldout_families, save_checkpoint, train_step

log = logging.getLogger(__name__)

METRIC_COLUMNS = ["epoch", "metric_loss", "ranking_loss", "combined", "families_per_batch_mean"]
ABLATION_PARAMS = {
    "lambda": "lambda_mix",
    "gamma": "gamma",
    "alpha": "alpha",
    "delta": "delta",
    "tau": "tau",
    "n": "n_generated",
}


def resolve_dataset(cfg: RunConfig) -> DatasetTable:
    if cfg.dataset == "bundled":
        return bundled_dataset()
    if cfg.dataset == "synthetic":
        return generate_synthetic(**{**BUNDLED_SETTINGS, **cfg.synthetic})
    return load_table(cfg.dataset, split_path=cfg.split_path)


def evaluate(params: ModelParams, table: DatasetTable, cfg: RunConfig) -> EvalReport:
    """Recall@K on unseen classes (or a query/gallery pair) plus held-out rank preservation."""
    hp = cfg.hparams
    if cfg.query_path and cfg.gallery_path:
        query = load_table(cfg.query_path, require_train=False)
        gallery = load_table(cfg.gallery_path, require_train=False)
        report = recall_at_k(
            embed(params, query.features), query.labels, cfg.eval_ks, embed(params, gallery.features), gallery.labels
        )
        held = query
    else:
        held = table.test() if table.test_classes else table
        report = recall_at_k(embed(params, held.features), held.labels, cfg.eval_ks)
    if hp.n_generated >= 3:
        fams = heldout_families(params, held, hp)
        report.rank_preservation_rho = rank_preservation(fams, params) if fams else None
    return report


def metrics_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_COLUMNS)
    for r in rows:
        w.writerow([r["epoch"]] + [repr(float(r[c])) for c in METRIC_COLUMNS[1:]])
    return buf.getvalue()


@dataclass
class RunResult:
    params: ModelParams
    state: OptimizerState
    rows: list[dict]
    report: EvalReport


def train_and_evaluate(cfg: RunConfig, table: DatasetTable | None = None) -> RunResult:
    table = resolve_dataset(cfg) if table is None else table
    params, state, rows = fit(
        table,
        cfg.hparams,
        seed=cfg.seed,
        hidden=tuple(cfg.hidden),
        latent_dim=cfg.latent_dim,
        proj_dim=cfg.proj_dim,
        on_epoch=lambda r: log.info("epoch %d combined %.5f", r["epoch"], r["combined"]),
    )
    return RunResult(params, state, rows, evaluate(params, table, cfg))


def run_train(cfg: RunConfig, out_dir) -> RunResult:
    """Train, then write ``config.json``, ``metrics.csv``, ``checkpoint.npz`` and ``eval.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    resolved = cfg.to_dict()
    (out / "config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    result = train_and_evaluate(cfg)
    (out / "metrics.csv").write_text(metrics_csv(result.rows), encoding="utf-8")
    save_checkpoint(out / "checkpoint.npz", result.params, result.state, resolved)
    (out / "eval.json").write_text(result.report.to_json() + "\n", encoding="utf-8")
    return result


# synthesis dump ---------------------------------------------------------------


def synth_rows(latents: np.ndarray, labels, ids, hp: HyperParams) -> list[tuple]:
    fams = generate_families(latents, labels, hp.alpha, hp.n_generated, hp.gamma)
    rows = []
    for fam in fams:
        anchor = ids[fam.source_pair[0]]
        for j, (strength, cos) in enumerate(zip(fam.strengths, fam.latent_cosines()), start=1):
            rows.append((anchor, j, float(strength), float(cos)))
    return rows


def write_synth_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["anchor_id", "variant_index", "strength", "cosine_to_anchor"])
        for anchor, j, strength, cos in rows:
            w.writerow([anchor, j, repr(strength), repr(cos)])


def run_synth(cfg: RunConfig, params: ModelParams | None, out_path, split: str = "test") -> int:
    table = resolve_dataset(cfg)
    if split == "test" and table.test_classes:
        table = table.test()
    elif split == "train" and table.test_classes:
        table = table.train()
    if params is None:
        latents, _ = normalize_rows(table.features)
    else:
        latents = embed(params, table.features)
    rows = synth_rows(latents, table.labels, table.ids, cfg.hparams)
    write_synth_csv(out_path, rows)
    return len(rows)


# ablation ---------------------------------------------------------------------


def _sweep_one(args) -> tuple:
    cfg_dict, field_name, value = args
    cfg = RunConfig.from_dict(cfg_dict)
    cfg.hparams = cfg.hparams.replace(**{field_name: value})
    res = train_and_evaluate(cfg)
    rho = res.report.rank_preservation_rho
    return res.report.recall_at[1] if 1 in res.report.recall_at else float("nan"), rho


def run_ablation(cfg: RunConfig, param: str, values, out_path, jobs: int = 1) -> list[dict]:
    """One train+eval per value with a shared seed; writes ``value,recall_at_1,rho,note``."""
    if param not in ABLATION_PARAMS:
        raise UnknownParam(f"cannot sweep {param!r}; choose from {sorted(ABLATION_PARAMS)}")
    field_name = ABLATION_PARAMS[param]
    if 1 not in cfg.eval_ks:
        cfg = dataclasses.replace(cfg, eval_ks=[1, *cfg.eval_ks])
    values = [int(v) if param == "n" else float(v) for v in values]
    base = cfg.to_dict()

    rows: list[dict] = [{} for _ in values]
    todo = []
    for k, v in enumerate(values):
        if param == "n" and v < 3:
            log.warning("skipping n=%s: the ranking loss needs at least 3 variants", v)
            rows[k] = {"value": v, "recall_at_1": None, "rho": None, "note": "skipped: n must be >= 3"}
        else:
            todo.append(k)
    args = [(base, field_name, values[k]) for k in todo]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_one, args))
    else:
        results = [_sweep_one(a) for a in args]
    for k, (r1, rho) in zip(todo, results):
        rows[k] = {"value": values[k], "recall_at_1": r1, "rho": rho, "note": ""}

    with open(out_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["param", "value", "recall_at_1", "rho", "note"])
        for r in rows:
            fmt = lambda x: "" if x is None else repr(float(x))  # noqa: E731
            w.writerow([param, r["value"], fmt(r["recall_at_1"]), fmt(r["rho"]), r["note"]])
    return rows


# gradient checks --------------------------------------------------------------


def _sort_instance(rng):
    m, n = rng.integers(1, 5), rng.integers(2, 6)
    s = rng.uniform(-1, 1, (m, n))
    delta, tau = rng.uniform(0, 0.5), float(rng.choice([1.0, 4.0, 16.0, 64.0]))
    return s, delta, tau


def _anchor_instance(rng):
    m, n = rng.integers(1, 5), rng.integers(1, 6)
    sims = rng.uniform(-1, 1, (m, n))
    anchors = rng.integers(0, 3, m)
    phi, beta = rng.uniform(0, 0.3), float(rng.choice([1.0, 2.0, 8.0, 32.0]))
    return AnchorSimilarityTable(sims, anchors), phi, beta


def check_losses(n_instances: int = 100, seed: int = 0, step: float = 1e-6) -> dict[str, float]:
    """Worst finite-difference error per loss over random small instances.

    These losses are smooth, so no coordinate is excluded as a kink.
    """
    rng = np.random.default_rng(seed)
    worst = {"sort_loss": 0.0, "anchor_loss": 0.0, "ranking_loss": 0.0, "proxy_anchor_loss": 0.0}
    for _ in range(n_instances):
        s, delta, tau = _sort_instance(rng)
        rep = grad_check(lambda x: sort_loss(x, delta, tau), s, step, kink_tol=np.inf)
        worst["sort_loss"] = max(worst["sort_loss"], rep.max_rel_error)

        table, phi, beta = _anchor_instance(rng)
        f = lambda x: anchor_loss(AnchorSimilarityTable(x, table.anchors), phi, beta)  # noqa: E731
        rep = grad_check(f, table.sims, step, kink_tol=np.inf)
        worst["anchor_loss"] = max(worst["anchor_loss"], rep.max_rel_error)

        n = s.shape[1]
        t_sims = rng.uniform(-1, 1, (len(table.anchors), n))
        hp = HyperParams(delta=delta, tau=tau, phi=phi, beta=beta)

        def rank_f(x):
            ss, tt = x[: s.size].reshape(s.shape), x[s.size :].reshape(t_sims.shape)
            out = ranking_loss(ss, AnchorSimilarityTable(tt, table.anchors), hp)
            return out.value, np.concatenate([out.grad["s"].ravel(), out.grad["t"].ravel()])

        rep = grad_check(rank_f, np.concatenate([s.ravel(), t_sims.ravel()]), step, kink_tol=np.inf)
        worst["ranking_loss"] = max(worst["ranking_loss"], rep.max_rel_error)

        b, c, d = rng.integers(1, 9), rng.integers(1, 4), 4
        labels = rng.integers(0, c, b)
        emb, _ = normalize_rows(rng.standard_normal((b, d)))
        prox, _ = normalize_rows(rng.standard_normal((c, d)))
        classes = np.arange(c)

        def pa_f(x):
            e, p = x[: emb.size].reshape(emb.shape), x[emb.size :].reshape(prox.shape)
            out = proxy_anchor_loss(e, labels, ProxyBank(classes, p), 0.1, 32.0)
            return out.value, np.concatenate([out.grad["embeddings"].ravel(), out.grad["proxies"].ravel()])

        rep = grad_check(pa_f, np.concatenate([emb.ravel(), prox.ravel()]), step, kink_tol=np.inf)
        worst["proxy_anchor_loss"] = max(worst["proxy_anchor_loss"], rep.max_rel_error)
    return worst


def check_model(seed: int = 0, step: float = 1e-6, n_nets: int = 3) -> float:
    """Worst end-to-end error over every parameter of tiny nets (dims <= 6)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(n_nets):
        x = rng.standard_normal((8, 5))
        y = np.array([0, 0, 1, 1, 2, 2, 0, 1])
        params = ModelParams.init(5, [0, 1, 2], (6,), 4, 6, seed=seed + k)
        params.projector.bias[:] = 0.5  # keep every projected row off the all-zero ReLU face
        hp = HyperParams(gamma=-1.0, tau=float(rng.choice([4.0, 64.0])), beta=float(rng.choice([2.0, 32.0])))
        for name, arr in params.named_arrays().items():

            def f(w, name=name):
                q = params.copy()
                q.named_arrays()[name][...] = w
                r = train_step(q, x, y, hp)
                return r.combined, r.grads[name]

            worst = max(worst, grad_check(f, arr, step, kink_tol=np.inf).max_rel_error)
    return worst
