"""Scoring against gold keys, the MFS baseline, and synthetic benchmark corpora."""
from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import EOS, AnnotatedInstance
from .wsd import ABSTAIN, STRATEGIES, Prediction, SenseEmbeddingTable


class PseudoCorpusError(ValueError):
    pass


# --------------------------------------------------------------------------- scoring


@dataclass
class Counts:
    attempted: int = 0
    correct: int = 0
    total: int = 0

    @property
    def precision(self) -> float:
        return self.correct / self.attempted if self.attempted else 0.0

    @property
    def recall(self) -> float:
        return self.correct / self.total if self.total else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0


@dataclass
class ScoreReport(Counts):
    per_pos: dict[str, Counts] = field(default_factory=dict)
    per_strategy: dict[str, int] = field(default_factory=dict)
    # predictions for instance ids missing from the gold keys; not counted
    errors: list[str] = field(default_factory=list)

    def metrics(self) -> list[tuple[str, float | int]]:
        rows: list[tuple[str, float | int]] = [
            ("attempted", self.attempted), ("correct", self.correct), ("total", self.total),
            ("precision", self.precision), ("recall", self.recall), ("f1", self.f1),
        ]
        for pos in sorted(self.per_pos):
            c = self.per_pos[pos]
            rows += [(f"{pos}.attempted", c.attempted), (f"{pos}.correct", c.correct),
                     (f"{pos}.total", c.total), (f"{pos}.precision", c.precision),
                     (f"{pos}.recall", c.recall), (f"{pos}.f1", c.f1)]
        for s in STRATEGIES:
            if s in self.per_strategy:
                rows.append((f"strategy.{s}", self.per_strategy[s]))
        rows.append(("unknown_ids", len(self.errors)))
        return rows

    def to_tsv(self) -> str:
        """Machine-readable ``metric<TAB>value`` lines."""
        return "".join(f"{k}\t{v!r}\n" if isinstance(v, float) else f"{k}\t{v}\n" for k, v in self.metrics())

    def to_text(self) -> str:
        lines = [
            f"precision  {self.precision:.4f}",
            f"recall     {self.recall:.4f}",
            f"f1         {self.f1:.4f}",
            f"attempted  {self.attempted} / {self.total}  (correct {self.correct})",
        ]
        for pos in sorted(self.per_pos):
            c = self.per_pos[pos]
            lines.append(f"  {pos:<6} P={c.precision:.4f} R={c.recall:.4f} F1={c.f1:.4f} n={c.total}")
        if self.per_strategy:
            lines.append("strategies " + " ".join(f"{k}={v}" for k, v in sorted(self.per_strategy.items())))
        if self.errors:
            lines.append(f"errors: {len(self.errors)} prediction(s) for unknown instance ids:")
            lines += [f"  {iid}" for iid in self.errors]
        return "\n".join(lines) + "\n"


def _as_pairs(predictions) -> list[tuple[str, str, str | None]]:
    if isinstance(predictions, Mapping):
        return [(iid, key, None) for iid, key in predictions.items()]
    out = []
    for p in predictions:
        if isinstance(p, Prediction):
            out.append((p.instance_id, p.sense_key, p.strategy))
        else:
            iid, key = p
            out.append((iid, key, None))
    return out


def score(predictions, gold: Mapping[str, Iterable[str]], pos_of: Mapping[str, str] | None = None) -> ScoreReport:
    """Precision/recall/F1 of ``predictions`` against ``gold``.

    A prediction is correct when its key is one of the instance's gold keys.
    ABSTAIN is unattempted. ``pos_of`` (instance id -> pos) enables the
    per-POS breakdown.
    """
    gold = {iid: frozenset(ks) for iid, ks in gold.items()}
    report = ScoreReport(total=len(gold))
    pos_of = pos_of or {}
    for iid in gold:
        if iid in pos_of:
            report.per_pos.setdefault(pos_of[iid], Counts()).total += 1
    seen = set()
    for iid, key, strategy in _as_pairs(predictions):
        if iid not in gold:
            report.errors.append(iid)
            continue
        if iid in seen:
            raise ValueError(f"more than one prediction for instance {iid!r}")
        seen.add(iid)
        if strategy is not None:
            report.per_strategy[strategy] = report.per_strategy.get(strategy, 0) + 1
        if key == ABSTAIN:
            continue
        hit = key in gold[iid]
        report.attempted += 1
        report.correct += hit
        if iid in pos_of:
            c = report.per_pos[pos_of[iid]]
            c.attempted += 1
            c.correct += hit
    return report


def format_predictions(predictions: Sequence[Prediction]) -> str:
    """Key-file lines ``instance_id sense_key``; abstentions are left out."""
    return "".join(f"{p.instance_id} {p.sense_key}\n" for p in predictions if p.attempted)


def parse_predictions(text: str) -> dict[str, str]:
    out = {}
    for n, line in enumerate(text.split("\n"), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 2:
            raise ValueError(f"line {n}: expected 'instance_id sense_key'")
        if parts[0] in out:
            raise ValueError(f"line {n}: instance {parts[0]!r} predicted twice")
        out[parts[0]] = parts[1]
    return out


def mfs_baseline(table: SenseEmbeddingTable, instances: Sequence[AnnotatedInstance]) -> list[Prediction]:
    mfs = table.mfs_of
    out = []
    for inst in instances:
        key = mfs.get((inst.lemma, inst.pos))
        if key is None:
            out.append(Prediction(inst.instance_id, ABSTAIN, 0.0, "abstain"))
        else:
            out.append(Prediction(inst.instance_id, key, 0.0, "mfs"))
    return out


# --------------------------------------------------------------------------- pseudoword benchmark

SLOT = "<w>"
_CHOICE = re.compile(r"\[([^\]]*)\]")


def expand_template(template: str) -> list[str]:
    """All sentences a template can produce.

    ``[a|b c|d]`` is a choice between alternatives (which may span several
    words); ``<w>`` marks the slot of the sense's content word.
    """
    parts = _CHOICE.split(template)
    # odd indices are choice groups
    options = [[p] if i % 2 == 0 else p.split("|") for i, p in enumerate(parts)]
    return [" ".join("".join(c).split()) for c in itertools.product(*options)]


@dataclass(frozen=True)
class PseudoSense:
    word: str
    templates: tuple[str, ...]


@dataclass(frozen=True)
class PseudoCorpusSpec:
    senses: tuple[PseudoSense, ...]
    pseudoword: str | None = None  # default: the sense words joined by '_'
    n_train_lm: int = 2000
    n_train_annotated: int = 20
    n_test: int = 100
    seed: int = 0

    def __post_init__(self):
        if len(self.senses) < 2:
            raise PseudoCorpusError("need at least 2 pseudo-senses")
        if min(self.n_train_lm, self.n_train_annotated, self.n_test) < 1:
            raise PseudoCorpusError("all counts must be >= 1")
        if len({s.word for s in self.senses}) != len(self.senses):
            raise PseudoCorpusError("sense words must be distinct")
        for s in self.senses:
            if not s.templates or any(t.count(SLOT) != 1 for t in s.templates):
                raise PseudoCorpusError(f"every template of {s.word!r} needs exactly one {SLOT} slot")

    @property
    def surface(self) -> str:
        return self.pseudoword or "_".join(s.word for s in self.senses)

    def sense_key(self, i: int) -> str:
        return f"{self.surface}%{self.senses[i].word}"


@dataclass
class PseudoCorpus:
    lm_sentences: list[list[str]]
    train: list[AnnotatedInstance]
    test: list[AnnotatedInstance]

    @property
    def gold(self) -> dict[str, frozenset[str]]:
        return {i.instance_id: i.gold_keys for i in self.test}

    def unlabelled_test(self) -> list[AnnotatedInstance]:
        return [AnnotatedInstance(i.instance_id, i.lemma, i.pos, i.tokens, i.target_position,
                                  frozenset(), i.sentence_id) for i in self.test]


_SUBJ = "[she|he|the boy|the girl|my friend|our neighbour|the old man|a student]"
_WHEN = "[this morning|after lunch|last night|on sunday|every day|before dinner|at noon|again]"

DEFAULT_SENSES = (
    PseudoSense("banana", (
        f"{_SUBJ} [ate|peeled|sliced|bought|mashed|ate half of] a [ripe|yellow|sweet|soft|fresh] <w> "
        f"[for breakfast|with yogurt|from the market|in the kitchen|with some honey] {_WHEN}",
        f"the [ripe|yellow|sweet|soft|fresh|brown] <w> [was peeled|tasted sweet|was sliced|was eaten|was blended] "
        f"[into a smoothie|by the cook|with cereal|for the baby|at the fruit stand] {_WHEN}",
        f"{_SUBJ} put the <w> [in the fruit bowl|on the cereal|in the blender|next to the apples|in a lunchbox] "
        f"[to ripen|for dessert|for a snack|to eat later] {_WHEN}",
    )),
    PseudoSense("guitar", (
        f"{_SUBJ} [played|tuned|strummed|carried|restrung|played a song on] a [loud|wooden|electric|acoustic|old] <w> "
        f"[on stage|at the concert|in the band|for the audience|in the studio] {_WHEN}",
        f"the [loud|wooden|electric|acoustic|old|new] <w> [was tuned|sounded great|was amplified|was played|needed strings] "
        f"[at the gig|by the musician|during the show|in the rehearsal|at the festival] {_WHEN}",
        f"{_SUBJ} put the <w> [in its case|on the amplifier|next to the drums|on the stage|by the microphone] "
        f"[before the show|after the concert|for the rehearsal|to practice chords] {_WHEN}",
    )),
)


def default_pseudo_spec(**overrides) -> PseudoCorpusSpec:
    return PseudoCorpusSpec(senses=DEFAULT_SENSES, **overrides)


def make_pseudo_corpus(spec: PseudoCorpusSpec) -> PseudoCorpus:
    """Seeded pseudoword benchmark.

    Each sense's templates are expanded and shuffled; the first
    ``n_train_lm / S`` sentences (real content word kept) form the LM corpus,
    the next ``n_train_annotated`` become labelled training instances and the
    rest supply test instances. In annotated sentences the content word is
    replaced by the shared pseudoword. Test instances are spread evenly over
    senses.
    """
    S = len(spec.senses)
    rng = np.random.default_rng([spec.seed, 2])
    n_lm = [spec.n_train_lm // S + (i < spec.n_train_lm % S) for i in range(S)]
    n_te = [spec.n_test // S + (i < spec.n_test % S) for i in range(S)]
    lm: list[list[str]] = []
    splits: dict[str, list[tuple[int, str]]] = {"train": [], "test": []}
    for si, sense in enumerate(spec.senses):
        pool = sorted({s for t in sense.templates for s in expand_template(t)})
        need = n_lm[si] + spec.n_train_annotated + n_te[si]
        if len(pool) < need:
            raise PseudoCorpusError(
                f"templates of {sense.word!r} yield {len(pool)} distinct sentences; {need} needed for disjoint splits"
            )
        pool = [pool[i] for i in rng.permutation(len(pool))[:need]]
        lm += [sent.replace(SLOT, sense.word).split() for sent in pool[:n_lm[si]]]
        ann = pool[n_lm[si]:]
        splits["train"] += [(si, sent) for sent in ann[:spec.n_train_annotated]]
        splits["test"] += [(si, sent) for sent in ann[spec.n_train_annotated:]]
    out = {}
    for name, items in splits.items():
        instances = []
        for n, j in enumerate(rng.permutation(len(items))):
            si, sent = items[j]
            toks = sent.split()
            pos = toks.index(SLOT)
            toks[pos] = spec.surface
            sid = f"{name}.s{n:05d}"
            instances.append(AnnotatedInstance(
                instance_id=f"{sid}.t{pos:03d}", lemma=spec.surface, pos="noun", tokens=tuple(toks),
                target_position=pos, gold_keys=frozenset({spec.sense_key(si)}), sentence_id=sid,
            ))
        out[name] = instances
    order = rng.permutation(len(lm))
    return PseudoCorpus([lm[i] for i in order], out["train"], out["test"])


def toy_lm_corpus(n_sentences: int = 50, n_words: int = 20, n_patterns: int = 10,
                  min_len: int = 4, max_len: int = 7, seed: int = 0) -> tuple[list[list[int]], int]:
    """Encoded toy corpus of ``n_sentences`` drawn cyclically from seeded random word patterns.

    Returns ``(sentences, V)``; ids start after the four specials and every
    sentence ends with EOS. Small enough to be memorised, which makes it a
    training smoke test.
    """
    rng = np.random.default_rng([seed, 3])
    patterns = [
        [int(w) for w in rng.integers(4, 4 + n_words, size=int(rng.integers(min_len, max_len + 1)))] + [EOS]
        for _ in range(n_patterns)
    ]
    return [list(patterns[i % n_patterns]) for i in range(n_sentences)], 4 + n_words
