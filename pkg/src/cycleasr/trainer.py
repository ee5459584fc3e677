"""Training stages: initial supervised model, semi-supervised retraining, RNNLM, beta sweep."""
from __future__ import annotations

import csv
import logging
import math
import time
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from . import autograd as ag
from .autograd import AutogradError, Tensor
from .checkpoint import Checkpoint, read_checkpoint, write_checkpoint
from .config import RETRAIN_VARIANTS, ExperimentConfig, Variant, stage_seed
from .corpus import DEV, EVAL, PAIRED, UNPAIRED_SPEECH, UNPAIRED_TEXT, Corpus, cycle_batches, make_batches
from .decoder import BeamConfig, DecodeRecord, beam_search, greedy_decode_batch
from .lm import LMArchitecture, LMParams, lm_nll
from .losses import combined_objective
from .metrics import ScoreReport, make_report, score_corpus
from .model import Architecture, ModelParams, encode_speech_batch
from .corpus import collate_speech

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class OptimizerState:
    """Adadelta running averages E[g^2] and E[dx^2], keyed by parameter name."""

    sq_grad: dict[str, np.ndarray] = field(default_factory=dict)
    sq_delta: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def zeros(cls, params: Mapping[str, Tensor]) -> "OptimizerState":
        return cls({k: np.zeros_like(v.data) for k, v in params.items()},
                   {k: np.zeros_like(v.data) for k, v in params.items()})

    def to_arrays(self) -> dict[str, np.ndarray]:
        out = {f"optim.sq_grad/{k}": v for k, v in self.sq_grad.items()}
        out.update({f"optim.sq_delta/{k}": v for k, v in self.sq_delta.items()})
        return out

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray]) -> "OptimizerState":
        state = cls()
        for k, v in arrays.items():
            kind, name = k.split("/", 1)
            getattr(state, kind)[name] = np.array(v)
        return state


def adadelta_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray], state: OptimizerState,
                  rho: float = 0.95, eps: float = 1e-6) -> None:
    """In-place Adadelta update of every parameter that has a gradient."""
    for name, g in grads.items():
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise AutogradError(f"non-finite gradient for parameter {name}")
        p = params[name]
        if g.shape != p.data.shape:
            raise ag.ShapeError(f"adadelta: gradient shape {g.shape} != parameter {name} shape {p.data.shape}")
        eg = state.sq_grad.setdefault(name, np.zeros_like(p.data))
        ed = state.sq_delta.setdefault(name, np.zeros_like(p.data))
        eg *= rho
        eg += (1.0 - rho) * g * g
        delta = -np.sqrt(ed + eps) / np.sqrt(eg + eps) * g
        ed *= rho
        ed += (1.0 - rho) * delta * delta
        p.data = p.data + delta


# ---------------------------------------------------------------------------
# logs and checkpoints
# ---------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    losses: dict[str, float]
    dev_cer: float
    wall_time: float


@dataclass
class TrainLog:
    records: list[EpochRecord] = field(default_factory=list)

    def columns(self) -> list[str]:
        keys = sorted({k for r in self.records for k in r.losses})
        return ["epoch"] + keys + ["dev_cer", "wall_time"]

    def rows(self, include_time: bool = True) -> list[list[str]]:
        cols = self.columns()
        out = []
        for r in self.records:
            row = [str(r.epoch)] + [repr(r.losses[k]) if k in r.losses else "" for k in cols[1:-2]]
            row += [repr(r.dev_cer), f"{r.wall_time:.3f}" if include_time else ""]
            out.append(row)
        return out

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.columns())
            writer.writerows(self.rows())


@dataclass
class TrainResult:
    params: ModelParams
    optimizer: OptimizerState
    log: TrainLog
    best_dev_cer: float
    checkpoint: Path | None


def architecture_for(cfg: ExperimentConfig, corpus: Corpus) -> Architecture:
    return Architecture(
        feat_dim=corpus.feat_dim,
        hidden=cfg.hidden,
        shared_layers=cfg.shared_layers,
        decoder_layers=cfg.decoder_layers,
        vocab_size=len(corpus.vocab),
        embed_dim=cfg.embed_dim,
        att_dim=cfg.att_dim,
    )


def save_model(path: str | Path, params: ModelParams, optimizer: OptimizerState | None = None,
               meta: dict | None = None) -> None:
    arrays = {k: v.data for k, v in params.items()}
    if optimizer is not None:
        arrays.update(optimizer.to_arrays())
    write_checkpoint(path, Checkpoint("model", asdict(params.arch), arrays, meta or {}))


def load_model(path: str | Path) -> tuple[ModelParams, OptimizerState, dict]:
    ckpt = read_checkpoint(path)
    if ckpt.kind != "model":
        raise ValueError(f"{path}: expected a model checkpoint, found {ckpt.kind!r}")
    arch = Architecture(**ckpt.arch)
    params = ModelParams(arch, {k: Tensor(v, requires_grad=True, name=k) for k, v in ckpt.params().items()})
    return params, OptimizerState.from_arrays(ckpt.optimizer()), ckpt.meta


def save_lm(path, lm: LMParams, meta: dict | None = None) -> None:
    write_checkpoint(path, Checkpoint("lm", asdict(lm.arch), {k: v.data for k, v in lm.items()}, meta or {}))


def load_lm(path) -> LMParams:
    ckpt = read_checkpoint(path)
    if ckpt.kind != "lm":
        raise ValueError(f"{path}: expected an LM checkpoint, found {ckpt.kind!r}")
    return LMParams(LMArchitecture(**ckpt.arch),
                    {k: Tensor(v, requires_grad=True, name=k) for k, v in ckpt.params().items()})


# ---------------------------------------------------------------------------
# evaluation helpers
# ---------------------------------------------------------------------------

def greedy_transcripts(params: ModelParams, corpus: Corpus, split: str, max_len_factor: float = 1.5,
                       batch_size: int = 50) -> dict[str, str]:
    out = {}
    items = corpus.speech_examples(split)
    with ag.no_grad():
        for start in range(0, len(items), batch_size):
            chunk = items[start : start + batch_size]
            batch = collate_speech([c[0] for c in chunk], [c[1] for c in chunk])
            b, umask = encode_speech_batch(params, batch.feats, batch.mask)
            for utt, hyp in zip(batch.ids, greedy_decode_batch(params, b, umask, max_len_factor)):
                out[utt] = corpus.vocab.decode(hyp.labels)
    return out


def dev_cer(params: ModelParams, corpus: Corpus, cfg: ExperimentConfig, split: str = DEV) -> float:
    refs = corpus.references(split)
    return score_corpus(refs, greedy_transcripts(params, corpus, split, cfg.max_len_factor), "char").rate


def decode_split(params: ModelParams, corpus: Corpus, split: str, beam: BeamConfig) -> list[DecodeRecord]:
    records = []
    with ag.no_grad():
        for utt, feats in corpus.speech_examples(split):
            b, _ = encode_speech_batch(params, feats[None], np.ones((1, feats.shape[0]), bool))
            best = beam_search(params, b[0], beam)[0]
            records.append(DecodeRecord(utt, corpus.vocab.decode(best.labels), best.score))
    return records


def beam_config(cfg: ExperimentConfig, lm: LMParams | None = None, lm_weight: float | None = None) -> BeamConfig:
    weight = (cfg.lm_weight if lm_weight is None else lm_weight) if lm is not None else 0.0
    return BeamConfig(cfg.beam_width, cfg.max_len_factor, weight, lm)


def evaluate(params: ModelParams, corpus: Corpus, split: str, beam: BeamConfig, model_name: str,
             beta: float | None = None) -> tuple[ScoreReport, list[DecodeRecord]]:
    records = decode_split(params, corpus, split, beam)
    hyps = {r.utt_id: r.text for r in records}
    report = make_report(corpus.references(split), hyps, model_name, beta, lm=beam.lm is not None and beam.lm_weight > 0)
    return report, records


# ---------------------------------------------------------------------------
# training loops
# ---------------------------------------------------------------------------

def _fit(params: ModelParams, opt: OptimizerState, cfg: ExperimentConfig, corpus: Corpus, epochs: int,
         step, out_dir: Path | None, name: str, meta: dict) -> TrainResult:
    batch_seed = stage_seed(cfg.seed, f"{name}:paired")
    trainlog = TrainLog()
    best, bad = math.inf, 0
    best_state = None
    ckpt_path = out_dir / f"{name}.ckpt" if out_dir is not None else None
    for epoch in range(1, epochs + 1):
        t0 = time.perf_counter()
        sums: dict[str, float] = defaultdict(float)
        steps = 0
        for batch in make_batches(corpus, PAIRED, cfg.batch_size, batch_seed, epoch):
            params.zero_grad()
            try:
                breakdown = step(batch)
                loss = breakdown.total
                if not math.isfinite(loss.item()):
                    raise AutogradError("non-finite loss")
                loss.backward()
                adadelta_step(params.tensors, {k: v.grad for k, v in params.items()}, opt, cfg.rho, cfg.eps)
            except AutogradError as exc:
                raise TrainingDiverged(
                    f"{name}: training diverged in epoch {epoch} ({exc}); last good checkpoint: {ckpt_path}"
                ) from exc
            sums["total"] += loss.item()
            for k, v in breakdown.components.items():
                sums[k] += v.item()
            steps += 1
        cer = dev_cer(params, corpus, cfg)
        record = EpochRecord(epoch, {k: v / steps for k, v in sums.items()}, cer, time.perf_counter() - t0)
        trainlog.records.append(record)
        log.info("%s epoch %d: %s dev_cer=%.4f", name, epoch,
                 " ".join(f"{k}={v:.4f}" for k, v in sorted(record.losses.items())), cer)
        if cer < best:
            best, bad = cer, 0
            best_state = (params.copy(), OptimizerState(
                {k: v.copy() for k, v in opt.sq_grad.items()}, {k: v.copy() for k, v in opt.sq_delta.items()}))
            if ckpt_path is not None:
                save_model(ckpt_path, params, opt, {**meta, "stage": name, "epoch": epoch, "dev_cer": cer})
        else:
            bad += 1
            if bad >= cfg.patience:
                break
    if out_dir is not None:
        trainlog.write_csv(out_dir / f"{name}_log.csv")
    if best_state is None:
        best_state = (params, opt)
        best = dev_cer(params, corpus, cfg)
    return TrainResult(best_state[0], best_state[1], trainlog, best, ckpt_path)


def train_initial(cfg: ExperimentConfig, corpus: Corpus, out_dir: str | Path | None = None) -> TrainResult:
    """Supervised training on the paired split with L_pair only (the variant is ignored)."""
    if not corpus.manifest.split(PAIRED):
        raise ValueError("paired split is empty")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    params = ModelParams.initialize(architecture_for(cfg, corpus), stage_seed(cfg.seed, "init"))
    opt = OptimizerState.zeros(params.tensors)
    stage_cfg = cfg.replace(variant=Variant.INITIAL)
    meta = {"paired_hash": corpus.manifest.split_hash(PAIRED), "variant": Variant.INITIAL.value, "seed": cfg.seed}
    return _fit(params, opt, stage_cfg, corpus, cfg.epochs_initial,
                lambda batch: combined_objective(params, stage_cfg, batch), out, "initial", meta)


def retrain(initial: str | Path | TrainResult, cfg: ExperimentConfig, corpus: Corpus,
            out_dir: str | Path | None = None, name: str | None = None) -> TrainResult:
    """Semi-supervised retraining from the initial model under ``cfg.variant``.

    Each step draws one paired batch plus the unpaired batches the variant
    needs; an epoch is one pass over the paired split.
    """
    if cfg.variant is Variant.INITIAL:
        raise ValueError("retrain needs a semi-supervised variant, got Initial")
    if isinstance(initial, TrainResult):
        params = initial.params.copy()
        opt = OptimizerState({k: v.copy() for k, v in initial.optimizer.sq_grad.items()},
                             {k: v.copy() for k, v in initial.optimizer.sq_delta.items()})
        meta0 = {"paired_hash": corpus.manifest.split_hash(PAIRED)}
    else:
        params, opt, meta0 = load_model(initial)
    if meta0.get("paired_hash") != corpus.manifest.split_hash(PAIRED):
        raise ValueError("paired split differs from the one the initial model was trained on")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    speech_stream = cycle_batches(corpus, UNPAIRED_SPEECH, cfg.batch_size, stage_seed(cfg.seed, "retrain:speech"))
    text_stream = cycle_batches(corpus, UNPAIRED_TEXT, cfg.batch_size, stage_seed(cfg.seed, "retrain:text"))
    needs_speech = cfg.alpha < 1 and cfg.beta > 0
    needs_text = cfg.alpha < 1 and (cfg.beta < 1 or cfg.variant is Variant.BASELINE)

    def step(batch):
        speech = next(speech_stream) if needs_speech else None
        text = next(text_stream) if needs_text else None
        return combined_objective(params, cfg, batch, speech, text)

    meta = {"paired_hash": meta0["paired_hash"], "variant": cfg.variant.value, "alpha": cfg.alpha,
            "beta": cfg.beta, "seed": cfg.seed}
    stage = name or f"retrain_{cfg.variant.value}_beta{cfg.beta:g}"
    return _fit(params, opt, cfg, corpus, cfg.epochs_retrain, step, out, stage, meta)


@dataclass
class LMResult:
    lm: LMParams
    perplexities: list[float]
    checkpoint: Path | None


def text_perplexity(lm: LMParams, corpus: Corpus, split: str = UNPAIRED_TEXT, batch_size: int = 100) -> float:
    nll, count = 0.0, 0
    with ag.no_grad():
        for batch in make_batches(corpus, split, batch_size, shuffle=False):
            text = batch if split == UNPAIRED_TEXT else batch.text()
            total, n = lm_nll(lm, text.labels, text.lengths)
            nll += total.item()
            count += n
    return math.exp(nll / count)


def train_rnnlm(cfg: ExperimentConfig, corpus: Corpus, out_dir: str | Path | None = None) -> LMResult:
    """Character GRU LM on unpaired text; perplexity logged before training and after each epoch."""
    if not corpus.manifest.split(UNPAIRED_TEXT):
        raise ValueError("unpaired_text split is empty")
    lm = LMParams.initialize(LMArchitecture(len(corpus.vocab), cfg.embed_dim, cfg.lm_hidden),
                             stage_seed(cfg.seed, "lm:init"))
    opt = OptimizerState.zeros(lm.tensors)
    seed = stage_seed(cfg.seed, "lm:batches")
    ppl = [text_perplexity(lm, corpus)]
    log.info("lm epoch 0: perplexity=%.4f", ppl[0])
    for epoch in range(1, cfg.epochs_lm + 1):
        for batch in make_batches(corpus, UNPAIRED_TEXT, cfg.batch_size, seed, epoch):
            lm.zero_grad()
            total, n = lm_nll(lm, batch.labels, batch.lengths)
            loss = total * (1.0 / n)
            loss.backward()
            adadelta_step(lm.tensors, {k: v.grad for k, v in lm.items()}, opt, cfg.rho, cfg.eps)
        ppl.append(text_perplexity(lm, corpus))
        log.info("lm epoch %d: perplexity=%.4f", epoch, ppl[-1])
    path = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        path = out / "rnnlm.ckpt"
        save_lm(path, lm, {"perplexities": ppl, "seed": cfg.seed})
        with open(out / "rnnlm_log.csv", "w", encoding="utf-8") as fh:
            fh.write("epoch,perplexity\n")
            fh.writelines(f"{i},{p!r}\n" for i, p in enumerate(ppl))
    return LMResult(lm, ppl, path)


# ---------------------------------------------------------------------------
# beta sweep
# ---------------------------------------------------------------------------

SWEEP_FIELDS = ["variant", "beta", "cer", "wer"]


def _sweep_cell(args):
    initial, cfg, manifest_path, variant, beta = args
    corpus = Corpus.load(manifest_path)
    return _run_cell(initial, cfg, corpus, variant, beta)


def _run_cell(initial, cfg: ExperimentConfig, corpus: Corpus, variant: Variant, beta: float) -> dict:
    cell_cfg = cfg.replace(variant=variant, beta=beta)
    try:
        result = retrain(initial, cell_cfg, corpus)
        report, _ = evaluate(result.params, corpus, EVAL, beam_config(cell_cfg), variant.value, beta)
        return {"variant": variant.value, "beta": f"{beta:g}", "cer": f"{report.cer:.6f}", "wer": f"{report.wer:.6f}"}
    except Exception as exc:  # a failed cell must not abort the sweep
        log.error("sweep cell %s beta=%g failed: %s", variant.value, beta, exc)
        return {"variant": variant.value, "beta": f"{beta:g}", "cer": "", "wer": ""}


def sweep_beta(initial: str | Path, cfg: ExperimentConfig, corpus: Corpus, betas: Iterable[float],
               out_csv: str | Path, variants: Iterable[Variant] = RETRAIN_VARIANTS, workers: int = 1,
               manifest_path: str | Path | None = None) -> list[dict]:
    """Retrain every (variant, beta) cell from ``initial`` and write eval CER/WER as CSV."""
    betas = [float(b) for b in betas]
    if any(not 0.0 <= b <= 1.0 for b in betas):
        raise ValueError("every beta must lie in [0, 1]")
    cells = [(Variant.parse(v), b) for v in variants for b in betas]
    if workers > 1 and manifest_path is not None:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_cell, [(str(initial), cfg, str(manifest_path), v, b) for v, b in cells]))
    else:
        rows = [_run_cell(initial, cfg, corpus, v, b) for v, b in cells]
    with open(out_csv, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return rows
