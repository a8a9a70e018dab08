"""Corpus ingestion, wordpiece tokenization, vocabulary, dataset splits.

Corpus format: UTF-8 text, one sentence per line. The tokenizer is a
corpus-trained greedy longest-match wordpiece segmenter with "##"
continuation pieces, so the artifact carries no pre-trained weights.
"""

from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass, field

MAX_TOKENS = 30
MIN_TOKENS = 5

PAD, UNK, CLS, SEP = 0, 1, 2, 3
SPECIAL_TOKENS = ["[PAD]", "[UNK]", "[CLS]", "[SEP]"]

# A sentence is a list of content-token ids (no specials, no padding).
Sentence = list[int]


class IngestionError(ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass
class Vocabulary:
    tokens: list[str]
    token_to_id: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if len(self.tokens) < 4 or self.tokens[:4] != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the 4 special tokens")
        self.token_to_id = {tok: i for i, tok in enumerate(self.tokens)}
        if len(self.token_to_id) != len(self.tokens):
            raise ValueError("vocabulary tokens must be unique")

    @property
    def size(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK)

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for tok in self.tokens:
                f.write(tok + "\n")

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            return cls([line.rstrip("\n") for line in f if line.rstrip("\n")])


@dataclass
class DatasetSplit:
    train: list[Sentence]
    validation: list[Sentence]
    test: list[Sentence]
    seed: int


def preprocess_corpus(raw_lines, vocab: Vocabulary | None = None) -> list[str]:
    """Keep pure-ASCII lines with at least MIN_TOKENS tokens, order preserved.

    Before a vocabulary exists the token count uses whitespace words; once a
    vocabulary is available the threshold is applied to the final wordpiece
    tokenization (pass the corpus through again after build_vocabulary).
    """
    kept = []
    for line_no, line in enumerate(raw_lines, start=1):
        if isinstance(line, bytes):
            try:
                line = line.decode("utf-8")
            except UnicodeDecodeError as e:
                raise IngestionError(line_no, f"undecodable input: {e}") from e
        line = line.rstrip("\n")
        if not line.strip():
            continue
        if not line.isascii():
            continue
        if vocab is None:
            n = len(line.split())
        else:
            try:
                n = len(tokenize(line, vocab))
            except ValueError:
                continue
        if n >= MIN_TOKENS:
            kept.append(line)
    return kept


def _piece_counts(words: Counter) -> Counter:
    counts: Counter = Counter()
    for word, freq in words.items():
        n = len(word)
        for i in range(n):
            for j in range(i + 1, n + 1):
                piece = word[i:j] if i == 0 else "##" + word[i:j]
                counts[piece] += freq
    return counts


def build_vocabulary(corpus: list[str], target_size: int) -> Vocabulary:
    """Greedy frequency-ranked wordpiece inventory of size <= target_size.

    All single characters (start and continuation forms) seen in the corpus
    are always included so segmentation can fall through to characters.
    Deterministic: ties break by longer piece, then lexicographic order.
    """
    if target_size < 16:
        raise ValueError("target_size must be at least 16")
    words = Counter()
    for line in corpus:
        words.update(line.split())
    if not words:
        raise ValueError("cannot build a vocabulary from an empty corpus")

    chars = set()
    for word in words:
        for c in word:
            chars.add(c)
            chars.add("##" + c)

    counts = _piece_counts(words)
    base = SPECIAL_TOKENS + sorted(chars)
    budget = max(target_size - len(base), 0)
    ranked = sorted(
        (p for p in counts if p not in set(base)),
        key=lambda p: (-counts[p], -len(p), p),
    )
    tokens = (base + ranked[:budget])[:max(target_size, 4)]
    return Vocabulary(tokens)


def tokenize(text: str, vocab: Vocabulary) -> Sentence:
    """Greedy longest-match wordpiece ids, truncated to MAX_TOKENS.

    If no inventory piece matches at a position, an UNK id is emitted and the
    scan advances one character.
    """
    if not text or not text.strip():
        raise ValueError("cannot tokenize an empty string")
    ids: Sentence = []
    for word in text.split():
        pos = 0
        at_start = True
        while pos < len(word):
            found = None
            for end in range(len(word), pos, -1):
                piece = word[pos:end] if at_start else "##" + word[pos:end]
                if piece in vocab.token_to_id:
                    found = (vocab.token_to_id[piece], end)
                    break
            if found is None:
                ids.append(UNK)
                pos += 1
            else:
                ids.append(found[0])
                pos = found[1]
            at_start = False
    return ids[:MAX_TOKENS]


def detokenize(ids: Sentence, vocab: Vocabulary) -> str:
    out = []
    for i in ids:
        tok = vocab.tokens[i]
        if tok.startswith("##") and out:
            out[-1] += tok[2:]
        else:
            out.append(tok)
    return " ".join(out)


def validate_sentence(ids: Sentence) -> None:
    if not MIN_TOKENS <= len(ids) <= MAX_TOKENS:
        raise ValueError(f"sentence length {len(ids)} outside [{MIN_TOKENS}, {MAX_TOKENS}]")
    if any(i == PAD for i in ids):
        raise ValueError("sentence contains PAD")


def split_dataset(sentences: list[Sentence], seed: int) -> DatasetSplit:
    """Seeded shuffle then contiguous 70/15/15 partition.

    Rounding: floor(0.70 N) train, floor(0.15 N) validation, remainder test.
    """
    if len(sentences) < 10:
        raise ValueError("need at least 10 sentences to split")
    order = list(range(len(sentences)))
    random.Random(seed).shuffle(order)
    n = len(sentences)
    n_train = int(0.70 * n)
    n_val = int(0.15 * n)
    train = [sentences[i] for i in order[:n_train]]
    val = [sentences[i] for i in order[n_train:n_train + n_val]]
    test = [sentences[i] for i in order[n_train + n_val:]]
    return DatasetSplit(train, val, test, seed)


def save_split_manifest(sentences: list[Sentence], split: DatasetSplit, path: str) -> None:
    """Manifest lists the index of each sentence (in the input order) per split."""
    by_identity = {id(s): i for i, s in enumerate(sentences)}
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"seed {split.seed}\n")
        for name, part in (("train", split.train), ("validation", split.validation),
                           ("test", split.test)):
            idxs = " ".join(str(by_identity[id(s)]) for s in part)
            f.write(f"{name} {idxs}\n")


def read_corpus(path: str) -> list[str]:
    with open(path, "rb") as f:
        raw = f.read()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        line_no = raw[: e.start].count(b"\n") + 1
        raise IngestionError(line_no, "invalid UTF-8 byte sequence") from e
    return text.splitlines()
