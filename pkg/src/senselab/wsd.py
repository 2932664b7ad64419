"""Sense decisions from context vectors.

Sense embeddings are the mean context vector of each sense key's annotated
occurrences. Instances are classified by cosine nearest neighbour among the
senses attested for their (lemma, pos), with optional most-frequent-sense
backoff, or by label propagation over a kNN graph of context vectors.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .corpus import AnnotatedInstance, Vocabulary, decode_utf8
from .lstm_lm.model import LstmParams, extract_context, extract_contexts

log = logging.getLogger(__name__)

ABSTAIN = "ABSTAIN"
STRATEGIES = ("nn", "mfs", "lp", "abstain")
# scores closer than this are treated as tied and resolved by sense key order
TIE_TOL = 1e-12


class SenseTableError(Exception):
    pass


class LabelPropagationError(ValueError):
    pass


@dataclass(frozen=True)
class Prediction:
    instance_id: str
    sense_key: str
    score: float
    strategy: str

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if (self.strategy == "abstain") != (self.sense_key == ABSTAIN):
            raise ValueError("strategy 'abstain' must go with sense key ABSTAIN and vice versa")

    @property
    def attempted(self) -> bool:
        return self.sense_key != ABSTAIN


@dataclass
class SenseEntry:
    lemma: str
    pos: str
    centroid: np.ndarray
    support: int


@dataclass
class SenseEmbeddingTable:
    p: int
    by_key: dict[str, SenseEntry] = field(default_factory=dict)
    # (lemma, pos) -> most frequent sense, possibly merged from other data
    extra_mfs: dict[tuple[str, str], str] = field(default_factory=dict)

    @property
    def by_lemma(self) -> dict[tuple[str, str], list[str]]:
        out: dict[tuple[str, str], list[str]] = {}
        for key in sorted(self.by_key):
            e = self.by_key[key]
            out.setdefault((e.lemma, e.pos), []).append(key)
        return out

    @property
    def mfs_of(self) -> dict[tuple[str, str], str]:
        out = dict(self.extra_mfs)
        for lp, keys in self.by_lemma.items():
            out[lp] = min(keys, key=lambda k: (-self.by_key[k].support, k))
        return out

    def candidates(self, lemma: str, pos: str) -> list[str]:
        return self.by_lemma.get((lemma, pos), [])

    def merge_mfs(self, mfs: Mapping[tuple[str, str], str]) -> None:
        """Add MFS backoff entries for lemmas this table has no senses for."""
        for lp, key in mfs.items():
            self.extra_mfs.setdefault(lp, key)

    # ---- text serialization

    def to_text(self) -> str:
        lines = [f"p={self.p}"]
        for key in sorted(self.by_key):
            e = self.by_key[key]
            vec = ",".join(repr(float(x)) for x in e.centroid)
            lines.append(f"{key}\t{e.lemma}\t{e.pos}\t{e.support}\t{vec}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "SenseEmbeddingTable":
        lines = text.split("\n")
        if not lines or not lines[0].startswith("p="):
            raise SenseTableError("line 1: expected header 'p=<dim>'")
        try:
            p = int(lines[0][2:])
        except ValueError:
            raise SenseTableError(f"line 1: bad dimension {lines[0][2:]!r}") from None
        table = cls(p)
        for n, line in enumerate(lines[1:], 2):
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise SenseTableError(f"line {n}: expected 5 tab-separated fields")
            key, lemma, pos, support, vec = parts
            try:
                centroid = np.array([float(x) for x in vec.split(",")])
                support_n = int(support)
            except ValueError as e:
                raise SenseTableError(f"line {n}: {e}") from None
            if centroid.shape != (p,):
                raise SenseTableError(f"line {n}: centroid has {centroid.size} values, expected {p}")
            if support_n < 1:
                raise SenseTableError(f"line {n}: support must be >= 1")
            if key in table.by_key:
                raise SenseTableError(f"line {n}: duplicate sense key {key!r}")
            table.by_key[key] = SenseEntry(lemma, pos, centroid, support_n)
        return table

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_text())

    @classmethod
    def load(cls, path) -> "SenseEmbeddingTable":
        with open(path, "rb") as f:
            return cls.from_text(decode_utf8(f.read()))


# --------------------------------------------------------------------------- table construction


def table_from_vectors(p: int, labelled: Iterable[tuple[AnnotatedInstance, np.ndarray]]) -> SenseEmbeddingTable:
    """Average raw context vectors per gold key.

    A multi-gold instance contributes its vector to every listed key. A key
    belongs to the (lemma, pos) of its first occurrence.
    """
    sums: dict[str, np.ndarray] = {}
    counts: dict[str, int] = {}
    owner: dict[str, tuple[str, str]] = {}
    for inst, vec in labelled:
        if not inst.gold_keys:
            raise SenseTableError(f"instance {inst.instance_id!r} has no gold key")
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (p,):
            raise SenseTableError(f"context of {inst.instance_id!r} has shape {vec.shape}, expected ({p},)")
        for key in sorted(inst.gold_keys):
            if key not in sums:
                sums[key] = np.zeros(p)
                counts[key] = 0
                owner[key] = (inst.lemma, inst.pos)
            elif owner[key] != (inst.lemma, inst.pos):
                log.warning("sense key %r seen under %s and %s; keeping the first", key, owner[key],
                            (inst.lemma, inst.pos))
            sums[key] += vec
            counts[key] += 1
    table = SenseEmbeddingTable(p)
    for key in sorted(sums):
        lemma, pos = owner[key]
        table.by_key[key] = SenseEntry(lemma, pos, sums[key] / counts[key], counts[key])
    return table


def build_sense_table(instances: Sequence[AnnotatedInstance], params: LstmParams, vocab: Vocabulary,
                      **encode_opts) -> SenseEmbeddingTable:
    p = params.E.shape[1]
    vectors = extract_contexts(params, instances, vocab, **encode_opts)
    return table_from_vectors(p, zip(instances, vectors))


def mfs_from_instances(instances: Iterable[AnnotatedInstance]) -> dict[tuple[str, str], str]:
    """Most frequent gold key per (lemma, pos); ties go to the smaller key."""
    counts: dict[tuple[str, str], dict[str, int]] = {}
    for inst in instances:
        c = counts.setdefault((inst.lemma, inst.pos), {})
        for k in inst.gold_keys:
            c[k] = c.get(k, 0) + 1
    return {lp: min(c, key=lambda k: (-c[k], k)) for lp, c in counts.items() if c}


# --------------------------------------------------------------------------- nearest neighbour


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        return 0.0
    c = float(np.dot(u, v)) / (nu * nv)
    return max(-1.0, min(1.0, c))


def best_by_score(scored: Iterable[tuple[str, float]]) -> tuple[str, float] | None:
    """Highest score; near-ties (within TIE_TOL) go to the lexicographically smaller key."""
    best = None
    for key, s in sorted(scored):
        if best is None or s > best[1] + TIE_TOL:
            best = (key, s)
    return best


def classify_vector(instance_id: str, vector: np.ndarray, lemma: str, pos: str,
                    table: SenseEmbeddingTable) -> Prediction:
    cands = table.candidates(lemma, pos)
    if not cands:
        return Prediction(instance_id, ABSTAIN, 0.0, "abstain")
    key, score = best_by_score((k, cosine(vector, table.by_key[k].centroid)) for k in cands)
    return Prediction(instance_id, key, score, "nn")


def classify_nn(instance: AnnotatedInstance, params: LstmParams, table: SenseEmbeddingTable,
                vocab: Vocabulary, **encode_opts) -> Prediction:
    if not table.candidates(instance.lemma, instance.pos):
        return Prediction(instance.instance_id, ABSTAIN, 0.0, "abstain")
    vec = extract_context(params, instance, vocab, **encode_opts).values
    return classify_vector(instance.instance_id, vec, instance.lemma, instance.pos, table)


def apply_fallback(pred: Prediction, lemma: str, pos: str, table: SenseEmbeddingTable) -> Prediction:
    if pred.attempted:
        return pred
    key = table.mfs_of.get((lemma, pos))
    if key is None:
        return pred
    return Prediction(pred.instance_id, key, 0.0, "mfs")


def classify_with_fallback(instance: AnnotatedInstance, params: LstmParams, table: SenseEmbeddingTable,
                           vocab: Vocabulary, **encode_opts) -> Prediction:
    pred = classify_nn(instance, params, table, vocab, **encode_opts)
    return apply_fallback(pred, instance.lemma, instance.pos, table)


def disambiguate(instances: Sequence[AnnotatedInstance], params: LstmParams, table: SenseEmbeddingTable,
                 vocab: Vocabulary, fallback: bool = True, **encode_opts) -> list[Prediction]:
    """Batched ``classify_nn`` / ``classify_with_fallback`` over many instances."""
    todo = [i for i in instances if table.candidates(i.lemma, i.pos)]
    vecs = dict(zip((i.instance_id for i in todo), extract_contexts(params, todo, vocab, **encode_opts)))
    out = []
    for inst in instances:
        if inst.instance_id in vecs:
            pred = classify_vector(inst.instance_id, vecs[inst.instance_id], inst.lemma, inst.pos, table)
        else:
            pred = Prediction(inst.instance_id, ABSTAIN, 0.0, "abstain")
        out.append(apply_fallback(pred, inst.lemma, inst.pos, table) if fallback else pred)
    return out


# --------------------------------------------------------------------------- label propagation


def median_sigma(vectors) -> float:
    """Median pairwise Euclidean distance, or 1.0 when that median is 0."""
    X = np.asarray(vectors, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("median_sigma needs at least 2 vectors")
    d = np.sqrt(_sq_dists(X))
    iu = np.triu_indices(X.shape[0], k=1)
    med = float(np.median(d[iu]))
    return med if med > 0 else 1.0


def _sq_dists(X: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - X[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


@dataclass
class LpProblem:
    vectors: np.ndarray
    # sense key per node, None for unlabelled nodes
    labels: Sequence[str | None]
    k: int = 10
    sigma: float | None = None  # None: median_sigma(vectors)
    tol: float = 1e-6
    max_iter: int = 1000
    ids: Sequence[str] | None = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        n = self.vectors.shape[0]
        if self.vectors.ndim != 2 or n < 1:
            raise LabelPropagationError("need a non-empty (n, p) array of vectors")
        if len(self.labels) != n:
            raise LabelPropagationError(f"{len(self.labels)} labels for {n} vectors")
        if not 1 <= self.k < n:
            raise LabelPropagationError(f"k must satisfy 1 <= k < n (k={self.k}, n={n})")
        if self.sigma is not None and not self.sigma > 0:
            raise LabelPropagationError("sigma must be > 0")
        if self.ids is not None and len(self.ids) != n:
            raise LabelPropagationError("ids must have one entry per vector")


@dataclass
class LpResult:
    predictions: list[Prediction]
    iterations: int
    # unlabelled node indices whose affinities were all zero
    isolated: list[int]
    distributions: np.ndarray  # (n, n_labels), columns in sorted label order
    label_order: list[str]


def knn_affinity(X: np.ndarray, k: int, sigma: float) -> np.ndarray:
    """Gaussian affinities kept for each node's k nearest neighbours, symmetrised by max."""
    n = X.shape[0]
    d2 = _sq_dists(X)
    np.fill_diagonal(d2, np.inf)
    W = np.zeros((n, n))
    rows = np.arange(n)[:, None]
    # stable sort keeps equidistant neighbours in index order
    nn = np.argsort(d2, axis=1, kind="stable")[:, :k]
    W[rows, nn] = np.exp(-d2[rows, nn] / (sigma * sigma))
    W = np.maximum(W, W.T)
    np.fill_diagonal(W, 0.0)
    return W


def clamp(Y: np.ndarray, Y0: np.ndarray, labelled: np.ndarray) -> None:
    """Hard clamp: labelled rows go back to their one-hot rows."""
    Y[labelled] = Y0[labelled]


def propagate_labels(problem: LpProblem,
                     on_iteration: Callable[[int, np.ndarray], None] | None = None) -> LpResult:
    """Iterate ``Y <- T @ Y`` with labelled rows clamped, until the largest change is below tol.

    ``on_iteration(i, Y)`` is called after each clamped update.
    """
    X = problem.vectors
    n = X.shape[0]
    labelled = np.array([lab is not None for lab in problem.labels])
    ids = list(problem.ids) if problem.ids is not None else [str(i) for i in range(n)]
    order = sorted({lab for lab in problem.labels if lab is not None})
    if not labelled.any():
        raise LabelPropagationError("need at least one labelled vector")
    if labelled.all():
        return LpResult([], 0, [], np.zeros((n, len(order))), order)
    sigma = problem.sigma if problem.sigma is not None else median_sigma(X)
    W = knn_affinity(X, problem.k, sigma)
    deg = W.sum(axis=1)
    isolated_rows = deg == 0
    T = np.divide(W, deg[:, None], out=np.zeros_like(W), where=~isolated_rows[:, None])
    col = {lab: j for j, lab in enumerate(order)}
    Y0 = np.full((n, len(order)), 1.0 / len(order))
    for i, lab in enumerate(problem.labels):
        if lab is not None:
            Y0[i] = 0.0
            Y0[i, col[lab]] = 1.0
    frozen = labelled | isolated_rows
    Y = Y0.copy()
    it = 0
    while it < problem.max_iter:
        it += 1
        Y_new = T @ Y
        clamp(Y_new, Y0, frozen)
        change = float(np.abs(Y_new - Y).max())
        Y = Y_new
        if on_iteration is not None:
            on_iteration(it, Y)
        if change < problem.tol:
            break
    Y = Y / Y.sum(axis=1, keepdims=True)
    isolated = [int(i) for i in np.nonzero(isolated_rows & ~labelled)[0]]
    if isolated:
        log.warning("%d unlabelled node(s) have no non-zero affinity", len(isolated))
    preds = []
    for i in np.nonzero(~labelled)[0]:
        key, mass = best_by_score(zip(order, (float(x) for x in Y[i])))
        preds.append(Prediction(ids[i], key, min(1.0, max(0.0, mass)), "lp"))
    return LpResult(preds, it, isolated, Y, order)


def propagate_instances(labelled: Sequence[AnnotatedInstance], unlabelled: Sequence[AnnotatedInstance],
                        params: LstmParams, vocab: Vocabulary, k: int = 10, sigma: float | None = None,
                        tol: float = 1e-6, max_iter: int = 1000, table: SenseEmbeddingTable | None = None,
                        **encode_opts) -> list[Prediction]:
    """Run one propagation problem per (lemma, pos) of the unlabelled instances.

    Lemmas without labelled data abstain, or back off to ``table``'s MFS when
    a table is given. ``k`` is reduced to ``n - 1`` for small problems.
    """
    by_lp: dict[tuple[str, str], tuple[list, list]] = {}
    for inst in labelled:
        if inst.gold_keys:
            by_lp.setdefault((inst.lemma, inst.pos), ([], []))[0].append(inst)
    for inst in unlabelled:
        by_lp.setdefault((inst.lemma, inst.pos), ([], []))[1].append(inst)
    result: dict[str, Prediction] = {}
    for lp in sorted(by_lp):
        lab, unl = by_lp[lp]
        if not unl:
            continue
        if not lab:
            for inst in unl:
                pred = Prediction(inst.instance_id, ABSTAIN, 0.0, "abstain")
                result[inst.instance_id] = apply_fallback(pred, *lp, table) if table is not None else pred
            continue
        nodes = lab + unl
        vecs = extract_contexts(params, nodes, vocab, **encode_opts)
        # a multi-gold labelled instance is pinned to its smallest key
        labels = [min(i.gold_keys) for i in lab] + [None] * len(unl)
        problem = LpProblem(vecs, labels, k=min(k, len(nodes) - 1), sigma=sigma, tol=tol,
                            max_iter=max_iter, ids=[i.instance_id for i in nodes])
        for pred in propagate_labels(problem).predictions:
            result[pred.instance_id] = pred
    return [result[i.instance_id] for i in unlabelled]

