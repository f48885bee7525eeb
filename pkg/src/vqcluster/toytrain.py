"""Desk-scale experiment: does the cluster-level loss raise cluster accuracy?

A synthetic class-conditional dataset is built by quantizing noisy smooth
trajectories against a random codebook, the codebook is clustered and
rearranged, and a deliberately weak next-token model (mean-pooled prefix
embedding plus class embedding through a linear head) is trained once per
loss weight from identical initialization. The model is weak on purpose:
the cluster-level signal only matters in the regime where exact token
prediction is hard.

Everything is float64 with hand-written gradients and explicit seeds, so a
report is reproducible bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .clustering import balanced_kmeans
from .codebook import Codebook, quantize
from .losses import LossBreakdown, batch_combined_loss_and_grad, combined_loss, combined_loss_grad
from .rearrange import apply_permutation, build_permutation, remap_tokens

_HARMONICS = 3  # low-frequency components per class trajectory


class TrainingDiverged(RuntimeError):
    """Training hit a non-finite loss."""


@dataclass
class SyntheticDatasetConfig:
    codebook_seed: int = 0
    data_seed: int = 0
    num_classes: int = 8
    sequences_per_class: int = 64
    sequence_length: int = 32
    codebook_size: int = 256
    embedding_dim: int = 8
    noise_sigma: float = 0.65
    n_clusters: int = 16

    def __post_init__(self):
        for name in ("num_classes", "sequences_per_class", "codebook_size", "embedding_dim", "n_clusters"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.sequence_length < 2:
            raise ValueError(f"sequence_length must be >= 2, got {self.sequence_length}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.codebook_size % self.n_clusters:
            raise ValueError(
                f"n_clusters {self.n_clusters} does not divide codebook_size {self.codebook_size}"
            )


@dataclass
class TokenSequence:
    class_id: int
    tokens: np.ndarray


@dataclass
class TinyARModel:
    """Minimal next-token predictor.

    Context is the mean of the prefix token embeddings (zeros for an empty
    prefix) concatenated with the class embedding; a linear projection maps
    that to vocabulary logits. The last class-embedding row is the null
    class used for unconditional prediction.
    """

    token_emb: np.ndarray  # (N, d)
    class_emb: np.ndarray  # (num_classes + 1, d)
    out_proj: np.ndarray  # (2d, N)

    @classmethod
    def create(cls, vocab_size: int, num_classes: int, embed_dim: int, seed: int) -> "TinyARModel":
        rng = np.random.Generator(np.random.Philox(seed))
        scale = 1.0 / np.sqrt(embed_dim)
        return cls(
            token_emb=rng.standard_normal((vocab_size, embed_dim)) * scale,
            class_emb=rng.standard_normal((num_classes + 1, embed_dim)) * scale,
            out_proj=np.zeros((2 * embed_dim, vocab_size)),
        )

    @property
    def vocab_size(self) -> int:
        return self.token_emb.shape[0]

    @property
    def embed_dim(self) -> int:
        return self.token_emb.shape[1]

    @property
    def null_class_id(self) -> int:
        return self.class_emb.shape[0] - 1

    def copy(self) -> "TinyARModel":
        return TinyARModel(self.token_emb.copy(), self.class_emb.copy(), self.out_proj.copy())


def gen_synthetic_dataset(cfg: SyntheticDatasetConfig) -> tuple[Codebook, list[TokenSequence]]:
    """Random codebook plus class-conditional token sequences.

    Each class gets a smooth random trajectory (a few low-frequency
    harmonics per embedding dimension); each sequence adds per-step
    Gaussian noise before nearest-neighbor quantization. Nearby steps land
    in nearby embeddings, so cluster identity is easier to predict than the
    exact token. Deterministic given the two seeds.
    """
    cb_rng = np.random.Generator(np.random.Philox(cfg.codebook_seed))
    cb = Codebook(cb_rng.standard_normal((cfg.codebook_size, cfg.embedding_dim)))

    data_rng = np.random.Generator(np.random.Philox(cfg.data_seed))
    steps = np.arange(cfg.sequence_length) / cfg.sequence_length
    sequences = []
    for class_id in range(cfg.num_classes):
        amps = data_rng.standard_normal((_HARMONICS, cfg.embedding_dim))
        amps /= np.arange(1, _HARMONICS + 1)[:, None]
        phases = data_rng.uniform(0.0, 2.0 * np.pi, size=(_HARMONICS, cfg.embedding_dim))
        base = np.zeros((cfg.sequence_length, cfg.embedding_dim))
        for f in range(_HARMONICS):
            base += amps[f] * np.sin(2.0 * np.pi * (f + 1) * steps[:, None] + phases[f])
        for _ in range(cfg.sequences_per_class):
            noise = data_rng.standard_normal(base.shape) * cfg.noise_sigma
            tokens = quantize(base + noise, cb)
            sequences.append(TokenSequence(class_id=class_id, tokens=tokens))
    return cb, sequences


def model_forward(model: TinyARModel, class_id: int, prefix) -> np.ndarray:
    """Logits for the next token given a class and a (possibly empty) prefix."""
    prefix = np.asarray(prefix, dtype=np.int64)
    if not 0 <= class_id < model.class_emb.shape[0]:
        raise IndexError(f"class id {class_id} out of range [0, {model.class_emb.shape[0]})")
    if prefix.size and (prefix.min() < 0 or prefix.max() >= model.vocab_size):
        raise IndexError(f"prefix token out of range [0, {model.vocab_size})")
    if prefix.size:
        ctx = model.token_emb[prefix].mean(axis=0)
    else:
        ctx = np.zeros(model.embed_dim)
    x = np.concatenate([ctx, model.class_emb[class_id]])
    return x @ model.out_proj


def _sequence_features(model: TinyARModel, class_id: int, tokens: np.ndarray):
    """Teacher-forced features for predicting tokens[1:]: row r holds the
    mean of the first r+1 token embeddings next to the class embedding."""
    emb = model.token_emb[tokens[:-1]]
    counts = np.arange(1, tokens.size)[:, None]
    ctx = np.cumsum(emb, axis=0) / counts
    cls = np.broadcast_to(model.class_emb[class_id], (tokens.size - 1, model.embed_dim))
    return np.hstack([ctx, cls])


def position_loss_and_grads(model, class_id, prefix, target, lam, n, m):
    """Loss and full-model parameter gradients for one prediction.

    Returns (LossBreakdown, {"token_emb", "class_emb", "out_proj"}). Used
    directly by the finite-difference verification; train() applies the
    same chain rule in sequence-batched form.
    """
    prefix = np.asarray(prefix, dtype=np.int64)
    logits = model_forward(model, class_id, prefix)
    breakdown = combined_loss(logits, target, lam, n, m)
    dlogits = combined_loss_grad(logits, target, lam, n, m)

    d = model.embed_dim
    if prefix.size:
        ctx = model.token_emb[prefix].mean(axis=0)
    else:
        ctx = np.zeros(d)
    x = np.concatenate([ctx, model.class_emb[class_id]])

    grads = {
        "token_emb": np.zeros_like(model.token_emb),
        "class_emb": np.zeros_like(model.class_emb),
        "out_proj": np.outer(x, dlogits),
    }
    dx = model.out_proj @ dlogits
    if prefix.size:
        np.add.at(grads["token_emb"], prefix, dx[None, :d] / prefix.size)
    grads["class_emb"][class_id] = dx[d:]
    return breakdown, grads


def train(model, dataset, lam, n, m, epochs, lr, seed):
    """Plain SGD, one update per sequence, hand-written gradients.

    Mutates ``model`` in place and returns (model, curve) where curve holds
    per-epoch average losses. Raises TrainingDiverged on a non-finite loss.
    """
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    if not dataset:
        raise ValueError("dataset is empty")
    rng = np.random.Generator(np.random.Philox(seed))
    d = model.embed_dim
    curve: list[LossBreakdown] = []
    for epoch in range(epochs):
        order = rng.permutation(len(dataset))
        tce_sum = 0.0
        cce_sum = 0.0
        count = 0
        for si in order:
            seq = dataset[si]
            tokens = seq.tokens
            positions = tokens.size - 1
            X = _sequence_features(model, seq.class_id, tokens)
            logits = X @ model.out_proj
            tce, cce, grads = batch_combined_loss_and_grad(logits, tokens[1:], lam, n, m)
            if not (np.isfinite(tce).all() and np.isfinite(cce).all()):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, sequence {si} (lam={lam}, lr={lr})"
                )
            tce_sum += float(tce.sum())
            cce_sum += float(cce.sum())
            count += positions

            gmean = grads / positions
            dW = X.T @ gmean
            dX = gmean @ model.out_proj.T
            # ctx row r averages the first r+1 prefix embeddings, so prefix
            # position j collects the tail sum of d_ctx rows r >= j weighted
            # by 1/(r+1).
            w_rows = dX[:, :d] / np.arange(1, tokens.size)[:, None]
            contrib = np.cumsum(w_rows[::-1], axis=0)[::-1]
            g_tok = np.zeros_like(model.token_emb)
            np.add.at(g_tok, tokens[:-1], contrib)

            model.out_proj -= lr * dW
            model.token_emb -= lr * g_tok
            model.class_emb[seq.class_id] -= lr * dX[:, d:].sum(axis=0)

        avg_tce = tce_sum / count
        avg_cce = cce_sum / count
        curve.append(LossBreakdown(tce=avg_tce, cce=avg_cce, total=avg_tce + lam * avg_cce, lam=lam))
    return model, curve


@dataclass
class AccuracyReport:
    token_top1: float
    token_top5: float
    cluster_top1: float
    cluster_top5: float


def _topk_hits(scores: np.ndarray, targets: np.ndarray, k: int) -> np.ndarray:
    """Per-row hit indicator: is the target among the k largest scores?
    Descending stable order, ties to the lower index."""
    order = np.argsort(-scores, axis=1, kind="stable")
    ranks = np.empty_like(order)
    np.put_along_axis(ranks, order, np.broadcast_to(np.arange(scores.shape[1]), scores.shape), axis=1)
    return ranks[np.arange(scores.shape[0]), targets] < k


def evaluate_accuracy(model, dataset, n, m) -> AccuracyReport:
    """Teacher-forced top-1/top-5 accuracy at token and cluster level.

    Cluster scores aggregate the softmaxed logits per index block; per-
    position accuracies are averaged within a sequence, then over sequences.
    """
    if not dataset:
        raise ValueError("dataset is empty")
    per_seq = np.zeros((len(dataset), 4))
    for idx, seq in enumerate(dataset):
        tokens = seq.tokens
        X = _sequence_features(model, seq.class_id, tokens)
        logits = X @ model.out_proj
        targets = tokens[1:]

        shifted = logits - logits.max(axis=1, keepdims=True)
        e_l = np.exp(shifted)
        probs = e_l / e_l.sum(axis=1, keepdims=True)
        e = np.exp(probs)
        groups = e.reshape(logits.shape[0], n, m).sum(axis=2)
        cluster_scores = groups / groups.sum(axis=1, keepdims=True)
        cluster_targets = targets // m

        per_seq[idx, 0] = _topk_hits(logits, targets, 1).mean()
        per_seq[idx, 1] = _topk_hits(logits, targets, 5).mean()
        per_seq[idx, 2] = _topk_hits(cluster_scores, cluster_targets, 1).mean()
        per_seq[idx, 3] = _topk_hits(cluster_scores, cluster_targets, 5).mean()
    means = per_seq.mean(axis=0)
    return AccuracyReport(
        token_top1=float(means[0]),
        token_top5=float(means[1]),
        cluster_top1=float(means[2]),
        cluster_top5=float(means[3]),
    )


@dataclass
class RunResult:
    lam: float
    final_loss: LossBreakdown
    accuracy: AccuracyReport
    loss_curve: list[LossBreakdown] = field(repr=False)


@dataclass
class ToyExperimentReport:
    config: SyntheticDatasetConfig
    runs: list[RunResult]
    cluster_gain: bool | None  # cluster top-1 at lam=1 >= at lam=0; None if not comparable

    def to_dict(self) -> dict:
        return {
            "config": self.config.__dict__.copy(),
            "runs": [
                {
                    "lambda": r.lam,
                    "final_loss": {"tce": r.final_loss.tce, "cce": r.final_loss.cce, "total": r.final_loss.total},
                    "token_top1": r.accuracy.token_top1,
                    "token_top5": r.accuracy.token_top5,
                    "cluster_top1": r.accuracy.cluster_top1,
                    "cluster_top5": r.accuracy.cluster_top5,
                    "loss_curve": [
                        {"tce": p.tce, "cce": p.cce, "total": p.total} for p in r.loss_curve
                    ],
                }
                for r in self.runs
            ],
            "cluster_gain": self.cluster_gain,
        }


def _split_train_heldout(sequences, num_classes):
    """Last 25% of each class's sequences are held out."""
    train_set, heldout = [], []
    for class_id in range(num_classes):
        mine = [s for s in sequences if s.class_id == class_id]
        cut = max(1, len(mine) - len(mine) // 4)
        train_set.extend(mine[:cut])
        heldout.extend(mine[cut:])
    return train_set, heldout


def run_experiment(
    cfg: SyntheticDatasetConfig,
    lambdas,
    epochs: int = 60,
    lr: float = 0.8,
    embed_dim: int = 8,
    train_seed: int = 1,
) -> ToyExperimentReport:
    """Train one model per loss weight from identical initialization.

    Pipeline: generate data, cluster and rearrange the codebook, remap the
    token sequences, split off the held-out set, then per lambda train and
    evaluate. The lambda list must include 0 (the baseline objective).
    """
    lambdas = list(lambdas)
    if not lambdas or 0 not in lambdas:
        raise ValueError("lambda list must be nonempty and include 0 for the baseline")

    cb, sequences = gen_synthetic_dataset(cfg)
    asg = balanced_kmeans(cb, cfg.n_clusters, seed=cfg.codebook_seed)
    perm = build_permutation(asg)
    apply_permutation(cb, perm)  # rearranged codebook; tokens carry the indices
    sequences = [replace(s, tokens=remap_tokens(s.tokens, perm)) for s in sequences]
    train_set, heldout = _split_train_heldout(sequences, cfg.num_classes)

    n, m = cfg.n_clusters, cfg.codebook_size // cfg.n_clusters
    runs = []
    for lam in lambdas:
        model = TinyARModel.create(cfg.codebook_size, cfg.num_classes, embed_dim, seed=train_seed)
        model, curve = train(model, train_set, lam, n, m, epochs=epochs, lr=lr, seed=train_seed)
        accuracy = evaluate_accuracy(model, heldout, n, m)
        runs.append(RunResult(lam=lam, final_loss=curve[-1], accuracy=accuracy, loss_curve=curve))

    gain = None
    by_lam = {r.lam: r for r in runs}
    if 0 in by_lam and 1 in by_lam:
        gain = by_lam[1].accuracy.cluster_top1 >= by_lam[0].accuracy.cluster_top1
    return ToyExperimentReport(config=cfg, runs=runs, cluster_gain=gain)
