"""Skip-gram with negative sampling over feature sentences.

Each sentence (directors, screenwriters, cast of one item) is treated as
a word sequence: a center token's input vector is pushed toward the
output vectors of tokens that appear near it, and away from the output
vectors of sampled negatives. People who keep appearing in the same
productions therefore end up with similar input vectors, which is the
signal the content similarity downstream is built on.

For each epoch, sentence, and center position a reduced window size b
is drawn uniformly from {1..window}; every in-bounds token within +-b
of the center (excluding the center itself) forms one positive pair,
trained together with `negatives` samples drawn from the unigram^0.75
distribution (redrawn on collision with the true context token). The
learning rate decays linearly from initial_lr to final_lr over the
total planned number of center-word visits. Input vectors start uniform
in [-0.5/dim, +0.5/dim]; output vectors start at zero. With workers=1
and a fixed seed the result is bit-reproducible; with more workers the
rows are updated lock-free (benign races, statistically equivalent).
"""

from __future__ import annotations

import logging
import threading
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

from .errors import DataError, NumericDivergenceError

log = logging.getLogger(__name__)

_MAX_RESAMPLE_ROUNDS = 1000


@dataclass
class TrainConfig:
    """Hyperparameters for embedding training.

    The defaults are the pipeline's reference settings: window 8,
    dimension 150, 25 negatives, min count 1, 20 epochs. Learning rate
    schedule and the 0.75 sampling exponent follow common skip-gram
    practice.
    """

    window: int = 8
    dim: int = 150
    negatives: int = 25
    min_count: int = 1
    epochs: int = 20
    initial_lr: float = 0.025
    final_lr: float = 1e-4
    ns_exponent: float = 0.75
    seed: int = 1
    workers: int = 1

    def validate(self):
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.negatives < 0:
            raise ValueError(f"negatives must be >= 0, got {self.negatives}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not 0 < self.final_lr <= self.initial_lr:
            raise ValueError(
                f"need 0 < final_lr <= initial_lr, got {self.final_lr} / {self.initial_lr}"
            )
        if self.min_count < 1:
            raise ValueError(f"min_count must be >= 1, got {self.min_count}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")


@dataclass
class Vocabulary:
    """Token -> contiguous index plus corpus counts.

    Indices are assigned by descending count, ties broken by token, so
    the mapping is deterministic for a given corpus.
    """

    tokens: list
    counts: np.ndarray
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {tok: i for i, tok in enumerate(self.tokens)}

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index


def build_vocabulary(sentences, min_count=1):
    """Count tokens across sentences and keep those with count >= min_count."""
    counter = Counter()
    for sent in sentences:
        counter.update(sent.tokens)
    kept = [(tok, c) for tok, c in counter.items() if c >= min_count]
    if not kept:
        raise DataError(f"vocabulary is empty at min_count={min_count}")
    kept.sort(key=lambda tc: (-tc[1], tc[0]))
    tokens = [tok for tok, _ in kept]
    counts = np.array([c for _, c in kept], dtype=np.int64)
    return Vocabulary(tokens=tokens, counts=counts)


class NegativeSampler:
    """Draws vocabulary indices with probability proportional to count^exponent."""

    def __init__(self, counts, ns_exponent=0.75):
        counts = np.asarray(counts, dtype=np.float64)
        if counts.size == 0 or (counts <= 0).any():
            raise ValueError("sampler needs positive counts for every token")
        weights = counts**ns_exponent
        cumulative = np.cumsum(weights)
        cumulative /= cumulative[-1]
        cumulative[-1] = 1.0
        self.cumulative = cumulative

    @property
    def probabilities(self):
        return np.diff(self.cumulative, prepend=0.0)

    def draw(self, rng, n, exclude=None):
        """n indices; any draw equal to ``exclude`` is redrawn."""
        idx = np.searchsorted(self.cumulative, rng.random(n), side="right")
        if exclude is None:
            return idx
        lo = self.cumulative[exclude - 1] if exclude > 0 else 0.0
        if self.cumulative[exclude] - lo >= 1.0:
            raise DataError(
                f"cannot draw negatives distinct from token index {exclude}; "
                "it carries the entire sampling mass"
            )
        for _ in range(_MAX_RESAMPLE_ROUNDS):
            mask = idx == exclude
            hits = int(mask.sum())
            if not hits:
                return idx
            idx[mask] = np.searchsorted(self.cumulative, rng.random(hits), side="right")
        raise DataError(
            f"cannot draw negatives distinct from token index {exclude} "
            f"after {_MAX_RESAMPLE_ROUNDS} resampling rounds"
        )


@dataclass
class EmbeddingTable:
    """Trained vectors plus the vocabulary they belong to.

    Similarity queries use ``input_vectors`` only; ``output_vectors``
    (the context side) are kept so training can be resumed exactly.
    ``epoch_losses`` holds the mean pair loss per training epoch (empty
    on tables loaded without training history).
    """

    vocab: Vocabulary
    input_vectors: np.ndarray
    output_vectors: np.ndarray
    epoch_losses: list = field(default_factory=list)

    @property
    def dim(self):
        return self.input_vectors.shape[1]

    def __contains__(self, token):
        return token in self.vocab

    def __len__(self):
        return len(self.vocab)

    def vector(self, token):
        try:
            return self.input_vectors[self.vocab.index[token]]
        except KeyError:
            raise KeyError(f"token {token!r} not in vocabulary") from None

    def most_similar(self, token, n=10):
        """Top-n (token, cosine) pairs by input-vector similarity."""
        i = self.vocab.index.get(token)
        if i is None:
            raise KeyError(f"token {token!r} not in vocabulary")
        mat = self.input_vectors
        norms = np.linalg.norm(mat, axis=1)
        norms[norms == 0.0] = 1.0
        sims = (mat @ mat[i]) / (norms * norms[i])
        ranked = sorted(
            (j for j in range(len(self.vocab)) if j != i),
            key=lambda j: (-sims[j], self.vocab.tokens[j]),
        )
        return [(self.vocab.tokens[j], float(sims[j])) for j in ranked[:n]]


def sgns_pair_update(center_vec, context_vec, negative_vecs, lr):
    """One negative-sampling update for a (center, context) pair.

    Mutates the given vectors in place using the analytic gradient of

        loss = -log sigmoid(context . center)
               - sum_n log sigmoid(-negative_n . center)

    evaluated at the incoming values (simultaneous update: the output
    rows move using the old center, the center moves using the old
    output rows). Returns the loss value at the incoming point.
    """
    center_vec = np.asarray(center_vec)
    if center_vec.ndim != 1:
        raise ValueError(f"center vector must be 1-D, got shape {center_vec.shape}")
    outs = [np.asarray(context_vec)] + [np.asarray(v) for v in negative_vecs]
    for v in outs:
        if v.shape != center_vec.shape:
            raise ValueError(f"vector shape mismatch: {v.shape} vs {center_vec.shape}")
    rows = np.stack(outs)
    scores = rows @ center_vec
    loss = float(np.logaddexp(0.0, -scores[0]) + np.logaddexp(0.0, scores[1:]).sum())
    grad = -expit(scores)
    grad[0] += 1.0
    grad *= lr
    context_vec += grad[0] * center_vec
    for g, vec in zip(grad[1:], negative_vecs):
        vec += g * center_vec
    center_vec += grad @ rows
    return loss


def _train_pair_rows(syn0, syn1, center, out_idx, lr):
    """Row-indexed twin of sgns_pair_update used by the training loop.

    out_idx[0] is the context row, the rest are negatives. Duplicate
    negative indices accumulate, matching the per-occurrence updates of
    the vector form.
    """
    v = syn0[center]
    rows = syn1[out_idx]
    scores = rows @ v
    loss = float(np.logaddexp(0.0, -scores[0]) + np.logaddexp(0.0, scores[1:]).sum())
    grad = -expit(scores)
    grad[0] += 1.0
    grad *= lr
    np.add.at(syn1, out_idx, np.outer(grad, v))
    syn0[center] += grad @ rows
    return loss


class _Trainer:
    def __init__(self, encoded, config, vocab):
        self.encoded = encoded
        self.config = config
        self.vocab = vocab
        v = len(vocab)
        init_rng = np.random.default_rng(config.seed)
        self.syn0 = (init_rng.random((v, config.dim)) - 0.5) / config.dim
        self.syn1 = np.zeros((v, config.dim))
        self.sampler = NegativeSampler(vocab.counts, config.ns_exponent) if config.negatives else None
        self.total_visits = config.epochs * sum(len(s) for s in encoded)
        self.visits = 0
        self.rngs = [np.random.default_rng([config.seed, w]) for w in range(config.workers)]
        self.out_idx = [np.empty(config.negatives + 1, dtype=np.int64) for _ in range(config.workers)]

    def run(self):
        cfg = self.config
        epoch_losses = []
        shards = [self.encoded[w :: cfg.workers] for w in range(cfg.workers)]
        for epoch in range(1, cfg.epochs + 1):
            totals = [(0.0, 0)] * cfg.workers
            if cfg.workers == 1:
                totals[0] = self._run_shard(0, shards[0])
            else:
                threads = []
                for w in range(cfg.workers):

                    def job(w=w):
                        totals[w] = self._run_shard(w, shards[w])

                    t = threading.Thread(target=job, name=f"sgns-worker-{w}")
                    t.start()
                    threads.append(t)
                for t in threads:
                    t.join()
            loss_sum = sum(t[0] for t in totals)
            n_pairs = sum(t[1] for t in totals)
            mean_loss = loss_sum / n_pairs if n_pairs else 0.0
            self._check_finite(epoch)
            epoch_losses.append(mean_loss)
            log.info("epoch %d/%d: mean pair loss %.6f (%d pairs)", epoch, cfg.epochs, mean_loss, n_pairs)
        return epoch_losses

    def _run_shard(self, worker, shard):
        cfg = self.config
        rng = self.rngs[worker]
        out_idx = self.out_idx[worker]
        syn0, syn1, sampler = self.syn0, self.syn1, self.sampler
        window, n_neg = cfg.window, cfg.negatives
        lr_span = cfg.initial_lr - cfg.final_lr
        total = self.total_visits
        loss_sum = 0.0
        n_pairs = 0
        # Overflow in a diverging run is caught by _check_finite at the
        # epoch boundary; the interim numpy warnings are just noise.
        with np.errstate(over="ignore", invalid="ignore"):
            for sent in shard:
                length = len(sent)
                for pos in range(length):
                    # shared counter: lock-free on purpose, races only blur the decay
                    visit = self.visits
                    self.visits = visit + 1
                    lr = cfg.initial_lr - lr_span * (visit / total)
                    if lr < cfg.final_lr:
                        lr = cfg.final_lr
                    b = int(rng.integers(1, window + 1))
                    lo = pos - b if pos - b > 0 else 0
                    hi = pos + b + 1 if pos + b + 1 < length else length
                    center = sent[pos]
                    for pos2 in range(lo, hi):
                        if pos2 == pos:
                            continue
                        context = sent[pos2]
                        if n_neg:
                            out_idx[1:] = sampler.draw(rng, n_neg, exclude=context)
                        out_idx[0] = context
                        loss_sum += _train_pair_rows(syn0, syn1, center, out_idx, lr)
                        n_pairs += 1
        return loss_sum, n_pairs

    def _check_finite(self, epoch):
        for name, mat in (("input", self.syn0), ("output", self.syn1)):
            bad = np.flatnonzero(~np.isfinite(mat).all(axis=1))
            if bad.size:
                token = self.vocab.tokens[int(bad[0])]
                raise NumericDivergenceError(
                    f"non-finite {name} vector for token {token!r} at epoch {epoch}"
                )


def train_skipgram(sentences, config=None):
    """Train an EmbeddingTable over the given feature sentences.

    Sentences whose tokens are all out of vocabulary are skipped
    silently. Raises NumericDivergenceError if any vector turns
    non-finite, naming the epoch and token.
    """
    config = config or TrainConfig()
    config.validate()
    vocab = build_vocabulary(sentences, config.min_count)
    encoded = []
    for sent in sentences:
        ids = [vocab.index[t] for t in sent.tokens if t in vocab.index]
        if ids:
            encoded.append(np.asarray(ids, dtype=np.int64))
    if not encoded:
        raise DataError("no trainable sentences after vocabulary filtering")
    trainer = _Trainer(encoded, config, vocab)
    epoch_losses = trainer.run()
    return EmbeddingTable(
        vocab=vocab,
        input_vectors=trainer.syn0,
        output_vectors=trainer.syn1,
        epoch_losses=epoch_losses,
    )


def _format_row(token, vec):
    return token + " " + " ".join(repr(float(x)) for x in vec) + "\n"


def save_embeddings(table, sink, sidecar=True):
    """Write the table as text: header "V dim", one token row per line.

    Only input vectors go to the main file (the interoperable part).
    When ``sink`` is a path and ``sidecar`` is true, output vectors and
    token counts are written next to it (same name + ".ctx") so a
    table can be reloaded for exact resume. Tokens must not contain
    whitespace; canonicalization upstream guarantees that.
    """
    for token in table.vocab.tokens:
        if any(ch.isspace() for ch in token):
            raise DataError(f"token {token!r} contains whitespace and cannot be saved")
    is_path = isinstance(sink, (str, Path))
    stream = open(sink, "w", encoding="utf-8") if is_path else sink
    try:
        stream.write(f"{len(table.vocab)} {table.dim}\n")
        for i, token in enumerate(table.vocab.tokens):
            stream.write(_format_row(token, table.input_vectors[i]))
    finally:
        if is_path:
            stream.close()
    if is_path and sidecar:
        with open(str(sink) + ".ctx", "w", encoding="utf-8") as ctx:
            ctx.write(f"{len(table.vocab)} {table.dim}\n")
            for i, token in enumerate(table.vocab.tokens):
                count = int(table.vocab.counts[i])
                ctx.write(f"{token} {count} " + " ".join(repr(float(x)) for x in table.output_vectors[i]) + "\n")


def _parse_header(line, where):
    parts = line.split()
    if len(parts) != 2:
        raise DataError(f"{where} line 1: malformed header {line.rstrip()!r}")
    try:
        v, dim = int(parts[0]), int(parts[1])
    except ValueError:
        raise DataError(f"{where} line 1: malformed header {line.rstrip()!r}") from None
    if v < 1 or dim < 1:
        raise DataError(f"{where} line 1: header values must be positive, got {v} {dim}")
    return v, dim


def load_embeddings(source):
    """Load a table saved by save_embeddings.

    Reads the sidecar (output vectors + counts) when present; otherwise
    output vectors are zeros and counts default to 1. Malformed headers
    and row arity/count mismatches are fatal, reported with their line
    number.
    """
    is_path = isinstance(source, (str, Path))
    stream = open(source, "r", encoding="utf-8") if is_path else source
    where = str(source) if is_path else "<stream>"
    try:
        tokens, vectors, _ = _read_vector_rows(stream, where, with_counts=False)
    finally:
        if is_path:
            stream.close()
    counts = np.ones(len(tokens), dtype=np.int64)
    output = np.zeros_like(vectors)
    if is_path:
        ctx_path = Path(str(source) + ".ctx")
        if ctx_path.exists():
            with open(ctx_path, "r", encoding="utf-8") as ctx:
                ctx_tokens, output, counts = _read_vector_rows(ctx, str(ctx_path), with_counts=True)
            if ctx_tokens != tokens:
                raise DataError(f"{ctx_path}: sidecar tokens do not match {source}")
    vocab = Vocabulary(tokens=tokens, counts=counts)
    return EmbeddingTable(vocab=vocab, input_vectors=vectors, output_vectors=output)


def _read_vector_rows(stream, where, with_counts):
    header = stream.readline()
    if not header:
        raise DataError(f"{where} line 1: empty file")
    v, dim = _parse_header(header, where)
    extra = 2 if with_counts else 1
    tokens = []
    counts = []
    mat = np.empty((v, dim))
    lineno = 1
    for row in range(v):
        line = stream.readline()
        lineno += 1
        if not line:
            raise DataError(f"{where} line {lineno}: expected {v} rows, file ends after {row}")
        parts = line.split()
        if len(parts) != dim + extra:
            raise DataError(
                f"{where} line {lineno}: expected {dim + extra} fields, got {len(parts)}"
            )
        tokens.append(parts[0])
        if with_counts:
            try:
                counts.append(int(parts[1]))
            except ValueError:
                raise DataError(f"{where} line {lineno}: bad count field {parts[1]!r}") from None
        try:
            mat[row] = [float(x) for x in parts[extra:]]
        except ValueError:
            raise DataError(f"{where} line {lineno}: non-numeric vector component") from None
    trailer = stream.readline()
    lineno += 1
    if trailer and trailer.strip():
        raise DataError(f"{where} line {lineno}: more rows than the header declares ({v})")
    if len(set(tokens)) != len(tokens):
        raise DataError(f"{where}: duplicate token in vector file")
    counts_arr = np.asarray(counts, dtype=np.int64) if with_counts else None
    return tokens, mat, counts_arr
