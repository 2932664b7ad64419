"""Corpus ingestion: plain-text LM corpora, unified-format WSD XML, key files, vocabulary."""
from __future__ import annotations

import hashlib
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence
from xml.parsers import expat
from xml.sax.saxutils import escape, quoteattr

log = logging.getLogger(__name__)

UNK, TGT, EOS, PAD = 0, 1, 2, 3
SPECIAL_FORMS = ("<unk>", "<tgt>", "<eos>", "<pad>")
NUM_FORM = "<num>"

POS_TAGS = ("noun", "verb", "adj", "adv", "other")

_DIGIT_RE = re.compile(r"[+-]?\d[\d.,:/-]*")


class CorpusError(Exception):
    pass


class IngestionError(CorpusError):
    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class AnnotatedCorpusError(CorpusError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class XmlSyntaxError(AnnotatedCorpusError):
    pass


class StructureError(AnnotatedCorpusError):
    pass


class MissingAttributeError(AnnotatedCorpusError):
    pass


class DuplicateInstanceError(AnnotatedCorpusError):
    pass


class KeyFileError(CorpusError):
    pass


class VocabularyFileError(CorpusError):
    pass


# --------------------------------------------------------------------------- tokens


def normalize_form(token: str, lowercase: bool = True, map_digits: bool = True) -> str:
    if map_digits and _DIGIT_RE.fullmatch(token):
        return NUM_FORM
    return token.casefold() if lowercase else token


def decode_utf8(data: bytes) -> str:
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as e:
        raise IngestionError(f"invalid UTF-8 at byte offset {e.start}", offset=e.start) from None


def tokenize(text: str | bytes, lowercase: bool = True, map_digits: bool = True) -> list[list[str]]:
    """Split a document into sentences (lines) of whitespace-separated tokens.

    Empty lines are dropped. ``bytes`` input is decoded as strict UTF-8.
    """
    if isinstance(text, (bytes, bytearray)):
        text = decode_utf8(bytes(text))
    sentences = []
    for line in text.split("\n"):
        toks = line.split()
        if toks:
            sentences.append([normalize_form(t, lowercase, map_digits) for t in toks])
    return sentences


def chunk_sentences(sentences: Iterable[Sequence[str]], max_len: int) -> list[list[str]]:
    """Split LM sentences longer than ``max_len`` tokens into consecutive pieces."""
    out = []
    for s in sentences:
        for i in range(0, len(s), max_len):
            out.append(list(s[i:i + max_len]))
    return out


def truncate_around(tokens: Sequence[str], target: int, max_len: int) -> tuple[list[str], int]:
    """Cut a window of at most ``max_len`` tokens centred on ``target``."""
    if len(tokens) <= max_len:
        return list(tokens), target
    start = max(0, min(target - max_len // 2, len(tokens) - max_len))
    return list(tokens[start:start + max_len]), target - start


# --------------------------------------------------------------------------- vocabulary


@dataclass(frozen=True)
class Vocabulary:
    """Dense word ids. Ids 0-3 are the specials UNK, TGT, EOS, PAD."""

    form_of: tuple[str, ...]
    count_of: tuple[int, ...]
    id_of: Mapping[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if tuple(self.form_of[:4]) != SPECIAL_FORMS:
            raise VocabularyFileError("vocabulary must start with the four special tokens")
        if len(self.form_of) != len(self.count_of):
            raise VocabularyFileError("form/count length mismatch")
        ids = {f: i for i, f in enumerate(self.form_of) if i >= 4}
        if len(ids) != len(self.form_of) - 4:
            raise VocabularyFileError("duplicate form in vocabulary")
        object.__setattr__(self, "id_of", MappingProxyType(ids))

    def __len__(self) -> int:
        return len(self.form_of)

    def lookup(self, form: str) -> int:
        return self.id_of.get(form, UNK)

    def to_text(self) -> str:
        return "".join(f"{f}\t{c}\n" for f, c in zip(self.form_of, self.count_of))

    @property
    def digest(self) -> bytes:
        """SHA-256 of the serialized vocabulary file."""
        return hashlib.sha256(self.to_text().encode("utf-8")).digest()

    @classmethod
    def from_text(cls, text: str) -> "Vocabulary":
        forms, counts = [], []
        for n, line in enumerate(text.split("\n"), 1):
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise VocabularyFileError(f"line {n}: expected 'form<TAB>count'")
            try:
                counts.append(int(parts[1]))
            except ValueError:
                raise VocabularyFileError(f"line {n}: bad count {parts[1]!r}") from None
            forms.append(parts[0])
        return cls(tuple(forms), tuple(counts))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(self.to_text())

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, "rb") as f:
            return cls.from_text(decode_utf8(f.read()))


def build_vocabulary(sentences: Iterable[Sequence[str]], max_size: int, min_count: int = 1) -> Vocabulary:
    """Keep the ``max_size - 4`` most frequent forms with count >= ``min_count``.

    Frequency ties are broken lexicographically, so the result does not depend
    on sentence order.
    """
    if max_size <= 4:
        raise ValueError("max_size must leave room for the 4 special tokens")
    counts: Counter[str] = Counter()
    n_sent = 0
    for s in sentences:
        n_sent += 1
        counts.update(t for t in s if t not in SPECIAL_FORMS)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    kept = [(f, c) for f, c in ranked if c >= min_count][: max_size - 4]
    unk = sum(counts.values()) - sum(c for _, c in kept)
    forms = SPECIAL_FORMS + tuple(f for f, _ in kept)
    cnts = (unk, 0, n_sent, 0) + tuple(c for _, c in kept)
    return Vocabulary(forms, cnts)


def encode(tokens: Sequence[str], vocab: Vocabulary) -> list[int]:
    """Map forms to ids (OOV -> UNK) and append EOS."""
    return [vocab.lookup(t) for t in tokens] + [EOS]


def decode(ids: Sequence[int], vocab: Vocabulary) -> list[str]:
    return [vocab.form_of[i] for i in ids if i != EOS]


# --------------------------------------------------------------------------- annotated corpora


def coarse_pos(tag: str | None) -> str:
    """Map UPOS / Penn / WordNet tags onto noun, verb, adj, adv or other."""
    if not tag:
        return "other"
    t = tag.strip()
    low = t.lower()
    if low in POS_TAGS:
        return low
    if low in ("n", "propn") or t.startswith("NN"):
        return "noun"
    if low == "v" or t.startswith("VB"):
        return "verb"
    if low in ("a", "s", "adj") or t.startswith("JJ"):
        return "adj"
    if low in ("r", "adv") or t.startswith("RB"):
        return "adv"
    return "other"


@dataclass(frozen=True)
class AnnotatedInstance:
    instance_id: str
    lemma: str
    pos: str
    tokens: tuple[str, ...]
    target_position: int
    gold_keys: frozenset[str] = frozenset()
    sentence_id: str = ""

    def __post_init__(self):
        if not 0 <= self.target_position < len(self.tokens):
            raise ValueError(
                f"{self.instance_id}: target position {self.target_position} outside sentence of {len(self.tokens)}"
            )

    @property
    def target_form(self) -> str:
        return self.tokens[self.target_position]


def parse_key_file(text: str | bytes) -> dict[str, tuple[str, ...]]:
    """Parse ``instance_id key [key ...]`` lines into a dict."""
    if isinstance(text, (bytes, bytearray)):
        text = decode_utf8(bytes(text))
    keys: dict[str, tuple[str, ...]] = {}
    for n, line in enumerate(text.split("\n"), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) < 2:
            raise KeyFileError(f"line {n}: instance {parts[0]!r} has no sense key")
        if parts[0] in keys:
            raise KeyFileError(f"line {n}: instance {parts[0]!r} listed twice")
        keys[parts[0]] = tuple(parts[1:])
    return keys


def format_key_file(keys: Mapping[str, Iterable[str]]) -> str:
    return "".join(f"{iid} {' '.join(sorted(ks))}\n" for iid, ks in keys.items() if ks)


class _XmlReader:
    """Expat handlers collecting instances from the unified WSD XML layout."""

    _PARENT = {"corpus": None, "text": "corpus", "sentence": "text", "wf": "sentence", "instance": "sentence"}

    def __init__(self, parser):
        self.p = parser
        self.stack: list[str] = []
        self.tokens: list[str] = []
        self.pending: list[tuple[dict, int, int]] = []
        self.text_buf: list[str] | None = None
        self.sentence_id = ""
        self.n_sentences = 0
        self.instances: list[AnnotatedInstance] = []
        self.seen: set[str] = set()

    def start(self, name, attrs):
        line = self.p.CurrentLineNumber
        parent = self._PARENT.get(name, "?")
        if parent == "?":
            raise StructureError(f"unexpected element <{name}>", line)
        if (self.stack[-1] if self.stack else None) != parent:
            where = f"<{self.stack[-1]}>" if self.stack else "document root"
            raise StructureError(f"<{name}> not allowed inside {where}", line)
        self.stack.append(name)
        if name == "sentence":
            self.tokens = []
            self.pending = []
            self.sentence_id = attrs.get("id") or f"s{self.n_sentences}"
            self.n_sentences += 1
        elif name in ("wf", "instance"):
            self.text_buf = []
            if name == "instance":
                for a in ("id", "lemma"):
                    if not attrs.get(a):
                        raise MissingAttributeError(f"<instance> lacks required attribute {a!r}", line)
                if attrs["id"] in self.seen:
                    raise DuplicateInstanceError(f"instance id {attrs['id']!r} repeated", line)
                self.seen.add(attrs["id"])
                self.pending.append((attrs, len(self.tokens), line))

    def end(self, name):
        self.stack.pop()
        if name in ("wf", "instance"):
            surface = "".join(self.text_buf).strip()
            self.text_buf = None
            if not surface:
                raise StructureError(f"empty <{name}> element", self.p.CurrentLineNumber)
            # multiword expressions become one token
            self.tokens.append("_".join(surface.split()))
        elif name == "sentence":
            toks = tuple(self.tokens)
            for attrs, pos, _ in self.pending:
                self.instances.append(AnnotatedInstance(
                    instance_id=attrs["id"],
                    lemma=attrs["lemma"],
                    pos=coarse_pos(attrs.get("pos")),
                    tokens=toks,
                    target_position=pos,
                    sentence_id=self.sentence_id,
                ))

    def chars(self, data):
        if self.text_buf is not None:
            self.text_buf.append(data)
        elif data.strip():
            raise StructureError(f"stray text {data.strip()[:20]!r}", self.p.CurrentLineNumber)


def parse_annotated_corpus(xml: str | bytes, keys: str | bytes | None = None) -> list[AnnotatedInstance]:
    """Read instances from unified-format XML, attaching gold keys when given.

    Key lines for unknown instance ids are logged and skipped; instances with
    no key line keep an empty ``gold_keys``.
    """
    parser = expat.ParserCreate("utf-8")
    reader = _XmlReader(parser)
    parser.StartElementHandler = reader.start
    parser.EndElementHandler = reader.end
    parser.CharacterDataHandler = reader.chars
    data = xml.encode("utf-8") if isinstance(xml, str) else bytes(xml)
    try:
        parser.Parse(data, True)
    except expat.ExpatError as e:
        raise XmlSyntaxError(expat.ErrorString(e.code), e.lineno) from None
    instances = reader.instances
    if keys is None:
        return instances
    gold = parse_key_file(keys)
    known = {inst.instance_id for inst in instances}
    for iid in gold:
        if iid not in known:
            log.warning("key file names unknown instance %r; skipped", iid)
    return [
        _with_keys(inst, gold.get(inst.instance_id, ())) for inst in instances
    ]


def _with_keys(inst: AnnotatedInstance, ks: Iterable[str]) -> AnnotatedInstance:
    return AnnotatedInstance(inst.instance_id, inst.lemma, inst.pos, inst.tokens,
                             inst.target_position, frozenset(ks), inst.sentence_id)


def read_annotated_corpus(xml_path, key_path=None) -> list[AnnotatedInstance]:
    with open(xml_path, "rb") as f:
        xml = f.read()
    keys = None
    if key_path is not None:
        with open(key_path, "rb") as f:
            keys = f.read()
    return parse_annotated_corpus(xml, keys)


def format_annotated_corpus(instances: Sequence[AnnotatedInstance]) -> str:
    """Serialize instances back to unified-format XML (one ``<text>``).

    Instances sharing a ``sentence_id`` are written into one ``<sentence>``.
    """
    sentences: dict[str, tuple[tuple[str, ...], dict[int, AnnotatedInstance]]] = {}
    for inst in instances:
        toks, targets = sentences.setdefault(inst.sentence_id, (inst.tokens, {}))
        if toks != inst.tokens:
            raise ValueError(f"sentence {inst.sentence_id!r} has conflicting tokens")
        targets[inst.target_position] = inst
    lines = ['<?xml version="1.0" encoding="UTF-8"?>', "<corpus>", '<text id="d0">']
    for sid, (toks, targets) in sentences.items():
        lines.append(f"<sentence id={quoteattr(sid)}>")
        for i, tok in enumerate(toks):
            inst = targets.get(i)
            if inst is None:
                lines.append(f"<wf>{escape(tok)}</wf>")
            else:
                lines.append(
                    f"<instance id={quoteattr(inst.instance_id)} lemma={quoteattr(inst.lemma)} "
                    f"pos={quoteattr(inst.pos)}>{escape(tok)}</instance>"
                )
        lines.append("</sentence>")
    lines += ["</text>", "</corpus>", ""]
    return "\n".join(lines)
