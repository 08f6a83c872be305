"""Readers and writers for vectors, labels, dictionaries and reports.

Vector files use the common word2vec/fastText text layout::

    <count> <dim>
    token v1 v2 ... vd

Floats are written with ``repr`` so every value survives a round trip exactly.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .errors import DataError, DomainError, ParseError
from .retrieval import PairDictionary

PathLike = Union[str, "os.PathLike[str]"]


@dataclass
class Vocabulary:
    tokens: list[str] = field(default_factory=list)
    index: dict[str, int] = field(default_factory=dict)

    @classmethod
    def from_tokens(cls, tokens: Sequence[str]) -> "Vocabulary":
        vocab = cls()
        for tok in tokens:
            vocab.add(tok)
        return vocab

    def add(self, token: str) -> int:
        if token in self.index:
            raise DataError(f"duplicate token {token!r}")
        self.index[token] = len(self.tokens)
        self.tokens.append(token)
        return self.index[token]

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def __getitem__(self, token: str) -> int:
        return self.index[token]


def _parse_float(text: str, path, lineno: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"not a number: {text!r}", path, lineno) from None
    if not math.isfinite(v):
        raise ParseError(f"non-finite value {text!r}", path, lineno)
    return v


def load_vectors(path: PathLike, limit: Optional[int] = None) -> tuple[Vocabulary, np.ndarray]:
    """Read a text vector file; with ``limit`` only the first rows are loaded."""
    vocab = Vocabulary()
    rows: list[list[float]] = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ParseError("header must be '<count> <dim>'", path, 1)
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError:
            raise ParseError("header must hold two integers", path, 1) from None
        if count < 0 or dim <= 0:
            raise ParseError("header count/dim out of range", path, 1)
        want = count if limit is None else min(limit, count)
        lineno = 1
        for line in fh:
            lineno += 1
            if len(rows) >= want:
                break
            parts = line.rstrip("\n").rstrip("\r").split(" ")
            if parts and parts[-1] == "":
                parts.pop()
            if len(parts) != dim + 1:
                raise ParseError(f"expected token plus {dim} values, got {len(parts) - 1} values", path, lineno)
            if parts[0] in vocab:
                raise DataError(f"{path}:{lineno}: duplicate token {parts[0]!r}")
            vocab.add(parts[0])
            rows.append([_parse_float(v, path, lineno) for v in parts[1:]])
    if len(rows) < want:
        raise ParseError(f"header declares {count} rows but body has {len(rows)}", path)
    matrix = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    return vocab, matrix


def write_vectors(path: PathLike, tokens: Sequence[str], matrix) -> None:
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or len(tokens) != len(matrix):
        raise DataError("need one token per matrix row")
    if not np.all(np.isfinite(matrix)):
        raise DataError("refusing to write non-finite values")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{matrix.shape[0]} {matrix.shape[1]}\n")
        for tok, row in zip(tokens, matrix):
            if not tok or any(ch.isspace() for ch in tok):
                raise DataError(f"token {tok!r} is empty or contains whitespace")
            fh.write(tok + " " + " ".join(repr(float(v)) for v in row) + "\n")


def load_labels(path: PathLike, vocabulary: Union[Vocabulary, int]) -> tuple[np.ndarray, list[str]]:
    """Read ``id_or_token,label`` rows and align them to embedding row order.

    ``vocabulary`` is either the vectors' vocabulary or a plain row count, in
    which case the first column holds integer row ids.  Class ids follow the
    order in which label names first appear.
    """
    n = vocabulary if isinstance(vocabulary, int) else len(vocabulary)
    labels = np.full(n, -1, dtype=np.int64)
    names: list[str] = []
    name_ids: dict[str, int] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) != 2:
            raise ParseError("expected a two-column header", path, 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ParseError("expected two columns", path, lineno)
            key, label = row
            if isinstance(vocabulary, int):
                try:
                    idx = int(key)
                except ValueError:
                    raise ParseError(f"row id {key!r} is not an integer", path, lineno) from None
                if not 0 <= idx < n:
                    raise DataError(f"{path}:{lineno}: row id {idx} outside [0, {n})")
            else:
                if key not in vocabulary:
                    raise DataError(f"{path}:{lineno}: unknown token {key!r}")
                idx = vocabulary[key]
            if label not in name_ids:
                name_ids[label] = len(names)
                names.append(label)
            labels[idx] = name_ids[label]
    missing = np.flatnonzero(labels < 0)
    if missing.size:
        shown = [vocabulary.tokens[i] if not isinstance(vocabulary, int) else str(i) for i in missing[:20]]
        raise DataError(f"{path}: no label for {missing.size} rows: {', '.join(shown)}")
    return labels, names


def write_labels(path: PathLike, keys: Sequence, labels, class_names: Sequence[str]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label"])
        for key, lab in zip(keys, labels):
            w.writerow([key, class_names[int(lab)]])


def load_dictionary(path: PathLike, source_vocab: Vocabulary, target_vocab: Vocabulary) -> PairDictionary:
    """Tab-separated ``source<TAB>target`` pairs; repeated sources are merged."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ParseError("expected 'source<TAB>target'", path, lineno)
            src, tgt = parts
            if src not in source_vocab:
                raise DataError(f"{path}:{lineno}: source token {src!r} not in the source vectors")
            if tgt not in target_vocab:
                raise DataError(f"{path}:{lineno}: target token {tgt!r} not in the target vectors")
            pairs.append((source_vocab[src], target_vocab[tgt]))
    return PairDictionary.from_pairs(pairs)


def write_json(doc: dict, path: PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def write_report(report, path: PathLike, format: str = "json") -> None:
    """Write a feature or retrieval report; CSV output appends under one header."""
    if format == "json":
        write_json(report.to_dict(), path)
        return
    if format != "csv":
        raise DomainError(f"unknown report format {format!r}")
    header = list(report.CSV_FIELDS)
    rows = report.csv_rows() if hasattr(report, "csv_rows") else [report.csv_row()]
    exists = os.path.exists(path) and os.path.getsize(path) > 0
    if exists:
        with open(path, encoding="utf-8", newline="") as fh:
            existing = next(csv.reader(fh), [])
        if existing != header:
            raise DataError(f"{path}: existing CSV header {existing} does not match {header}")
    with open(path, "a", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if not exists:
            w.writerow(header)
        w.writerows(rows)


def read_json(path: PathLike) -> dict:
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(str(exc), path) from exc
