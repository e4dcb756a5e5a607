"""Deterministic training, evaluation and ablation.

One optimisation step: shuffle pairs into ``(X, X-)`` batches, build views,
encode anchors, views and hard negatives, take the combined loss, backprop
through the encoder, clip, and apply Adam with linear decay.  Every
``eval_interval`` steps (and at the final step) the dev set is ranked and
the parameters with the best R_n@1 are retained.

All randomness comes from :class:`~dialcl.rng.SeedTree` streams keyed by
``(epoch, step)``, so a run is a pure function of config, data and seed,
and resuming from a checkpoint replays the same stream positions.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import encoder as enc
from .augment import ViewBatch, ViewStrategy, make_views
from .checkpoint import Checkpoint, FORMAT_VERSION
from .corpus import (ConfigError, Dataset, Diagnostics, Triple, Vocab, build_vocab, context_groups,
                     encode_many, make_batches, pair_hard_negatives)
from .encoder import EncoderConfig, EncoderParams
from .loss import LossConfig, TotalLoss, total_loss
from .metrics import CandidateGroup, MetricReport, evaluate_groups, restrict_to_pair
from .optim import Moments, clip_by_global_norm, optimizer_step
from .rng import SeedTree

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    strategy: str = "tl"
    tau: float = 0.05
    alpha: float = 1.0
    lam: float = 1.0
    use_scl: bool = True
    ce_views: bool | None = None  # None: views join CE only when SCL is off
    batch_size: int = 32  # desk-scale substitute for 43/48
    lr: float = 0.02  # desk-scale; the full-size setting is 1e-5 to 2e-5
    epochs: int = 3
    eval_interval: int = 2000
    seed: int = 0
    dim: int = 32
    hidden: int = 128
    max_len: int = 64
    dropout: float = 0.1
    vocab_size: int = 20000
    min_freq: int = 1
    clip_norm: float | None = None  # None: 5.0 when tau < 1, else off
    group_size: int | None = None

    def __post_init__(self):
        ViewStrategy.parse(self.strategy)
        if self.eval_interval < 1:
            raise ConfigError("eval_interval must be >= 1")
        if not self.lr > 0:
            raise ConfigError("learning rate must be > 0")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        LossConfig(self.tau, self.alpha, self.lam)

    @property
    def view_strategy(self) -> ViewStrategy:
        return ViewStrategy.parse(self.strategy)

    def loss_config(self) -> LossConfig:
        ce_views = self.ce_views
        if ce_views is None:
            ce_views = not self.use_scl and self.view_strategy is not ViewStrategy.NONE
        return LossConfig(self.tau, self.alpha, self.lam, self.use_scl, ce_views)

    def encoder_config(self, vocab_size: int) -> EncoderConfig:
        return EncoderConfig(vocab_size, self.dim, self.hidden, self.max_len, self.dropout)

    def effective_clip(self) -> float | None:
        if self.clip_norm is not None:
            return self.clip_norm if self.clip_norm > 0 else None
        return 5.0 if self.tau < 1.0 else None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class EncodedViews:
    """Token ids for one training step, deduplicated where TL repeats the batch."""

    anchor_ids: np.ndarray
    anchor_len: np.ndarray
    neg_ids: np.ndarray
    neg_len: np.ndarray
    view_ids: np.ndarray | None
    view_len: np.ndarray | None
    repeats: int
    dropout_views: bool


def encode_views(vb: ViewBatch, vocab: Vocab, max_len: int, need_views: bool = True,
                 diag: Diagnostics | None = None) -> EncodedViews:
    n = len(vb) // vb.repeats
    a_ids, a_len = encode_many(vb.anchors[:n], vocab, max_len, diag)
    n_ids, n_len = encode_many(vb.negatives[:n], vocab, max_len, diag)
    v_ids = v_len = None
    if need_views:
        v_ids, v_len = encode_many(vb.views, vocab, max_len, diag)
    return EncodedViews(a_ids, a_len, n_ids, n_len, v_ids, v_len, vb.repeats, vb.dropout_views)


def batch_loss(params: EncoderParams, ev: EncodedViews, lcfg: LossConfig, dropout: float = 0.0,
               dropout_rng=None, with_grads: bool = True):
    """Combined loss for one step and, optionally, its parameter gradients."""
    n = ev.anchor_ids.shape[0]
    both_ids = np.concatenate([ev.anchor_ids, ev.neg_ids])
    both_len = np.concatenate([ev.anchor_len, ev.neg_len])
    h_an, s_an, acts_an = enc.forward_batch(params, both_ids, both_len)
    hA, hN = h_an[:n], h_an[n:]
    sA, sN = s_an[:n], s_an[n:]
    need_views = lcfg.use_scl or lcfg.ce_views
    r = ev.repeats
    if need_views:
        p = dropout if ev.dropout_views else 0.0
        hV, sV, acts_v = enc.forward_batch(params, ev.view_ids, ev.view_len, p, dropout_rng)
    else:
        hV = np.tile(hA, (r, 1))
        sV, acts_v = None, None
    tl = total_loss(np.tile(hA, (r, 1)), hV, np.tile(hN, (r, 1)), sA, sN, lcfg, s_view=sV)
    if not with_grads:
        return tl, None
    d = hA.shape[1]
    gA = tl.g_anchor.reshape(r, n, d).sum(axis=0)
    gN = tl.g_neg.reshape(r, n, d).sum(axis=0)
    grads = enc.backward_batch(params, acts_an, np.concatenate([gA, gN]), np.concatenate([tl.gs_anchor, tl.gs_neg]))
    if need_views:
        gs_view = tl.gs_view if lcfg.ce_views else np.zeros(hV.shape[0])
        enc.backward_batch(params, acts_v, tl.g_view, gs_view, out=grads)
    return tl, grads


def score_examples(params: EncoderParams, examples: Sequence[Triple], vocab: Vocab, max_len: int,
                   chunk: int = 1024) -> np.ndarray:
    out = np.empty(len(examples))
    for s in range(0, len(examples), chunk):
        ids, lens = encode_many(examples[s : s + chunk], vocab, max_len)
        _, score, _ = enc.forward_batch(params, ids, lens)
        out[s : s + chunk] = score
    return out


def represent(params: EncoderParams, examples: Sequence[Triple], vocab: Vocab, max_len: int,
              chunk: int = 1024) -> np.ndarray:
    parts = []
    for s in range(0, len(examples), chunk):
        ids, lens = encode_many(examples[s : s + chunk], vocab, max_len)
        h, _, _ = enc.forward_batch(params, ids, lens)
        parts.append(h)
    return np.concatenate(parts) if parts else np.zeros((0, params.E.shape[1]))


def candidate_groups(examples: Sequence[Triple], scores, group_size: int | None = None) -> list[CandidateGroup]:
    return [CandidateGroup(gi, [float(scores[i]) for i in idx], [examples[i].label for i in idx])
            for gi, idx in enumerate(context_groups(examples, group_size))]


def evaluate(params: EncoderParams, examples: Sequence[Triple], vocab: Vocab, max_len: int,
             group_size: int | None = None, pairwise: bool = False) -> MetricReport:
    """Rank each candidate group; ``pairwise`` restricts groups to one positive and one negative (R_2@k)."""
    scores = score_examples(params, examples, vocab, max_len)
    groups = candidate_groups(examples, scores, group_size)
    if pairwise:
        groups = [g for g in (restrict_to_pair(g) for g in groups) if g is not None]
    return evaluate_groups(groups)


def embedding_margin(params: EncoderParams, dataset: Dataset | Sequence[Triple], vocab: Vocab, max_len: int,
                     seed: int = 0, strategy="tl") -> float:
    """mean cos(h, h+) - mean cos(h, h-) over dev pairs, with views from ``strategy``."""
    pairs = pair_hard_negatives(dataset, Diagnostics())
    xs = [p.positive for p in pairs]
    negs = [p.hard_negative for p in pairs]
    vb = make_views((xs, negs), strategy, SeedTree(seed).rng("augmentation", 0, 0))
    n = len(xs)
    hA = represent(params, xs, vocab, max_len)
    hN = represent(params, negs, vocab, max_len)
    hV = represent(params, vb.views, vocab, max_len)

    def cos_rows(a, b):
        return np.sum(a * b, axis=1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))

    pos = cos_rows(np.tile(hA, (vb.repeats, 1)), hV)
    neg = cos_rows(hA, hN)
    return float(pos.mean() - neg.mean())


def steps_per_epoch(n_pairs: int, batch_size: int) -> int:
    full, rem = divmod(n_pairs, batch_size)
    return full + (1 if rem >= 2 else 0)


def params_to_tensors(params: EncoderParams, prefix: str) -> dict:
    return {f"{prefix}/{k}": v for k, v in params.tensors().items()}


def params_from_tensors(tensors: dict, prefix: str) -> EncoderParams:
    return EncoderParams(**{k: np.array(tensors[f"{prefix}/{k}"], dtype=np.float64) for k in enc.PARAM_NAMES})


@dataclass
class TrainResult:
    best: Checkpoint
    last: Checkpoint
    history: list
    best_report: MetricReport | None
    params: EncoderParams = field(repr=False, default=None)
    best_params: EncoderParams = field(repr=False, default=None)
    vocab: Vocab = field(repr=False, default=None)


def _checkpoint(cfg: TrainConfig, vocab: Vocab, params: EncoderParams, step: int, moments: Moments | None = None,
                best: EncoderParams | None = None, extra: dict | None = None) -> Checkpoint:
    header = {
        "format": "dialcl-checkpoint",
        "version": FORMAT_VERSION,
        "config": cfg.to_dict(),
        "vocab_digest": vocab.digest(),
        "vocab_size": len(vocab),
        "step": step,
        "rng": {"master_seed": cfg.seed, "step": step},
    }
    if extra:
        header.update(extra)
    tensors = params_to_tensors(params, "param")
    if moments is not None:
        tensors.update(params_to_tensors(moments.m, "adam_m"))
        tensors.update(params_to_tensors(moments.v, "adam_v"))
    if best is not None:
        tensors.update(params_to_tensors(best, "best"))
    return Checkpoint(header, tensors)


def train(cfg: TrainConfig, train_set: Dataset | Sequence[Triple], dev_set: Dataset | Sequence[Triple] | None = None,
          vocab: Vocab | None = None, resume: Checkpoint | None = None, stop_after: int | None = None,
          history_sink=None, diag: Diagnostics | None = None) -> TrainResult:
    """Train from scratch or from a state checkpoint.

    ``stop_after`` halts after that many global steps (the returned ``last``
    checkpoint then resumes exactly).  ``history_sink`` receives one JSON
    line per metric record as it is produced.
    """
    diag = diag if diag is not None else Diagnostics()
    train_examples = train_set.examples if isinstance(train_set, Dataset) else list(train_set)
    dev_examples = None
    if dev_set is not None:
        dev_examples = dev_set.examples if isinstance(dev_set, Dataset) else list(dev_set)
    if vocab is None:
        vocab = build_vocab(train_examples, cfg.vocab_size, cfg.min_freq)
    pairs = pair_hard_negatives(train_examples, diag)
    seeds = SeedTree(cfg.seed)
    lcfg = cfg.loss_config()
    strategy = cfg.view_strategy
    clip = cfg.effective_clip()
    spe = steps_per_epoch(len(pairs), cfg.batch_size)
    if spe == 0:
        raise ConfigError(f"{len(pairs)} training pair(s) cannot fill a batch of at least 2")
    total_steps = spe * cfg.epochs
    ecfg = cfg.encoder_config(len(vocab))

    if resume is not None:
        if resume.header.get("vocab_digest") != vocab.digest():
            raise TrainingError("checkpoint vocabulary digest does not match the supplied vocabulary")
        if resume.header.get("config") != cfg.to_dict():
            raise TrainingError("checkpoint was written with a different training configuration")
        params = params_from_tensors(resume.tensors, "param")
        moments = Moments(params_from_tensors(resume.tensors, "adam_m"), params_from_tensors(resume.tensors, "adam_v"))
        best_params = params_from_tensors(resume.tensors, "best") if "best/E" in resume.tensors else None
        step = resume.step
        history = list(resume.header.get("history", []))
        best_score = resume.header.get("best_score")
        best_step = resume.header.get("best_step")
        best_report = resume.header.get("best_report")
    else:
        params = enc.init_params(ecfg, seeds.rng("init"))
        moments = Moments.zeros_like(params)
        best_params, best_score, best_step, best_report = None, None, None, None
        step = 0
        history = []

    def record(split, metric, value):
        rec = {"step": step, "split": split, "metric": metric, "value": value}
        history.append(rec)
        if history_sink is not None:
            history_sink.write(json.dumps(rec, sort_keys=True) + "\n")

    def state(extra_step):
        extra = {"history": history, "best_score": best_score, "best_step": best_step,
                 "best_report": best_report, "total_steps": total_steps}
        return _checkpoint(cfg, vocab, params, extra_step, moments, best_params, extra)

    def run_eval():
        nonlocal best_params, best_score, best_step, best_report
        if not dev_examples:
            return
        rep = evaluate(params, dev_examples, vocab, cfg.max_len, cfg.group_size)
        for k, v in rep.values().items():
            record("dev", k, v)
        if best_score is None or rep.r1 > best_score:
            best_score, best_step, best_report = rep.r1, step, rep.values()
            best_params = params.copy()

    done = False
    while step < total_steps and not done:
        epoch, first = divmod(step, spe)
        batches = make_batches(pairs, cfg.batch_size, seeds.seed("data-shuffle", epoch), diag if first == 0 else None)
        for bi in range(first, len(batches)):
            vb = make_views(batches[bi], strategy, seeds.rng("augmentation", epoch, step))
            ev = encode_views(vb, vocab, cfg.max_len, need_views=lcfg.use_scl or lcfg.ce_views)
            try:
                tl, grads = batch_loss(params, ev, lcfg, cfg.dropout, seeds.rng("dropout", epoch, step))
            except FloatingPointError as exc:
                raise TrainingError(f"epoch {epoch} batch {bi} (step {step}): {exc}") from None
            if clip is not None:
                clip_by_global_norm(grads, clip)
            optimizer_step(params, grads, moments, step, cfg.lr, total_steps)
            step += 1
            record("train", "loss", tl.loss)
            if step % cfg.eval_interval == 0 or step == total_steps:
                run_eval()
            if stop_after is not None and step >= stop_after:
                done = True
                break

    last = state(step)
    if best_params is None:
        best_params = params.copy()
    best = _checkpoint(cfg, vocab, best_params, best_step if best_step is not None else step,
                       extra={"best_score": best_score, "best_report": best_report})
    rep = MetricReport(*[best_report[k] for k in ("R@1", "R@2", "R@5", "MAP", "MRR", "P@1")], 0, 0) if best_report else None
    return TrainResult(best, last, history, rep, params, best_params, vocab)


# -- ablation --------------------------------------------------------------

ROW_PREFIX = "Enc+"


def cell_label(strategy, use_scl: bool) -> str:
    s = ViewStrategy.parse(strategy)
    if s is ViewStrategy.NONE and not use_scl:
        return ROW_PREFIX
    tag = f"{ROW_PREFIX}_{s.name}"
    return tag if use_scl else f"{tag} w/o CL"


DEFAULT_CELLS = (("none", False), ("tl", False), ("drop", True), ("sr", True), ("sts", True), ("tl", True))
FULL_GRID = tuple((s.value, c) for s in ViewStrategy for c in (False, True))


@dataclass
class AblationRow:
    data: str
    label: str
    report: MetricReport
    margin: float | None = None


def ablate(cells, corpora: dict, base: TrainConfig, vocab: Vocab | None = None) -> list[AblationRow]:
    """Train every (strategy, SCL on/off) cell on every corpus with shared seeds.

    ``corpora`` maps a dataset name to ``(train, dev, test)``; ``test`` may be
    None, in which case the best checkpoint is scored on dev.
    """
    rows = []
    for name, (tr, dv, te) in corpora.items():
        v = vocab or build_vocab(tr.examples if isinstance(tr, Dataset) else tr, base.vocab_size, base.min_freq)
        for strategy, use_scl in cells:
            cfg = replace(base, strategy=ViewStrategy.parse(strategy).value, use_scl=bool(use_scl))
            res = train(cfg, tr, dv, vocab=v)
            target = te if te is not None else dv
            examples = target.examples if isinstance(target, Dataset) else target
            rep = evaluate(res.best_params, examples, v, cfg.max_len, cfg.group_size)
            rows.append(AblationRow(name, cell_label(strategy, use_scl), rep))
    return rows


def format_ablation(rows: Sequence[AblationRow]) -> str:
    cols = ("R@1", "R@2", "R@5", "MAP", "MRR", "P@1")
    w_data = max([4] + [len(r.data) for r in rows])
    w_label = max([5] + [len(r.label) for r in rows])
    lines = [f"{'Data':<{w_data}} | {'Model':<{w_label}} | " + " ".join(f"{c:>6}" for c in cols)]
    lines.append("-" * len(lines[0]))
    for r in rows:
        vals = r.report.values()
        lines.append(f"{r.data:<{w_data}} | {r.label:<{w_label}} | " + " ".join(f"{vals[c]:6.3f}" for c in cols))
    return "\n".join(lines)
