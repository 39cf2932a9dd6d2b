"""Click-log ingestion and preprocessing into (prefix -> next item) instances.

The pipeline is parse -> group -> filter -> time split -> recency cut ->
vocabulary -> prefix augmentation.  Item ids stay raw strings until the
vocabulary is built; after that sessions carry dense 1-based indices and
index 0 is reserved for padding.
"""

from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Iterator, TextIO

import numpy as np

log = logging.getLogger(__name__)

MS_PER_DAY = 86_400_000
PAD = 0


class DataError(ValueError):
    """Unusable input data (unreadable, too many malformed lines, empty splits)."""


@dataclass(frozen=True)
class EventFormat:
    """Column mapping for a delimited click log."""

    delimiter: str = ","
    session_col: int = 0
    time_col: int = 1
    item_col: int = 2
    # iso | epoch_ms | epoch_s | date (YYYY-MM-DD, optionally plus an ms offset column)
    time_format: str = "iso"
    time_offset_col: int | None = None
    header: bool = False


PRESETS = {
    # yoochoose-clicks.dat: session,timestamp,item,category
    "yoochoose": EventFormat(",", 0, 1, 2, "iso"),
    # train-item-views.csv: sessionId;userId;itemId;timeframe;eventdate
    "diginetica": EventFormat(";", 0, 4, 2, "date", time_offset_col=3, header=True),
}

# holdout windows usually paired with each preset
DEFAULT_HOLDOUT_DAYS = {"yoochoose": 1, "diginetica": 7}


@dataclass(frozen=True)
class RawEvent:
    session_id: str
    timestamp: int  # epoch milliseconds
    item_id: str


@dataclass
class RawSession:
    session_id: str
    items: list[str]
    origin_time: int  # timestamp of the last click


@dataclass
class Session:
    """One training/evaluation instance: a click prefix and the next click."""

    items: list[int]
    label: int
    origin_time: int = 0


@dataclass
class Vocabulary:
    index_of: dict[str, int] = field(default_factory=dict)
    ids: list[str] = field(default_factory=lambda: [""])  # ids[0] is padding
    counts: list[int] = field(default_factory=lambda: [0])

    def __len__(self) -> int:
        return len(self.ids) - 1

    def add(self, item_id: str, count: int = 1) -> int:
        idx = self.index_of.get(item_id)
        if idx is None:
            idx = len(self.ids)
            self.index_of[item_id] = idx
            self.ids.append(item_id)
            self.counts.append(0)
        self.counts[idx] += count
        return idx

    def encode(self, items: Iterable[str]) -> list[int]:
        return [self.index_of[i] for i in items]

    def decode(self, indices: Iterable[int]) -> list[str]:
        return [self.ids[i] for i in indices]

    @classmethod
    def from_sessions(cls, sessions: list[RawSession]) -> "Vocabulary":
        """Indices assigned in order of first appearance."""
        vocab = cls()
        for s in sessions:
            for item in s.items:
                vocab.add(item)
        return vocab

    @classmethod
    def from_ids(cls, ids: Iterable[str]) -> "Vocabulary":
        vocab = cls()
        for item in ids:
            if item in vocab.index_of:
                raise DataError(f"duplicate vocabulary id {item!r}")
            vocab.add(item, 0)
        return vocab


def parse_time(text: str, fmt: str, offset: str | None = None) -> int:
    text = text.strip()
    if fmt == "iso":
        dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        ts = round(dt.timestamp() * 1000)
    elif fmt == "epoch_ms":
        ts = int(text)
    elif fmt == "epoch_s":
        ts = round(float(text) * 1000)
    elif fmt == "date":
        dt = datetime.strptime(text, "%Y-%m-%d").replace(tzinfo=timezone.utc)
        ts = int(dt.timestamp()) * 1000
    else:
        raise ValueError(f"unknown time format {fmt!r}")
    if offset is not None:
        ts += int(offset)
    if ts < 0:
        raise ValueError("negative timestamp")
    return ts


def parse_events(lines: Iterable[str], fmt: EventFormat = PRESETS["yoochoose"],
                 max_malformed: float = 0.01) -> tuple[list[RawEvent], int]:
    """Parse delimited click lines into events, in file order.

    Malformed lines are skipped and counted.  If more than ``max_malformed``
    of the non-blank lines are malformed a ``DataError`` is raised.
    Returns ``(events, n_malformed)``.
    """
    events = []
    malformed = 0
    total = 0
    need = max(fmt.session_col, fmt.time_col, fmt.item_col, fmt.time_offset_col or 0) + 1
    for lineno, line in enumerate(lines):
        if fmt.header and lineno == 0:
            continue
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        total += 1
        cols = line.split(fmt.delimiter)
        try:
            if len(cols) < need:
                raise ValueError("missing column")
            sid = cols[fmt.session_col].strip()
            item = cols[fmt.item_col].strip()
            if not sid or not item:
                raise ValueError("empty id")
            offset = cols[fmt.time_offset_col] if fmt.time_offset_col is not None else None
            ts = parse_time(cols[fmt.time_col], fmt.time_format, offset)
        except ValueError as exc:
            malformed += 1
            log.debug("skipping line %d: %s", lineno + 1, exc)
            continue
        events.append(RawEvent(sid, ts, item))
    if total and malformed / total > max_malformed:
        raise DataError(f"{malformed} of {total} lines malformed (limit {max_malformed:.2%})")
    if malformed:
        log.warning("skipped %d malformed line(s) of %d", malformed, total)
    return events, malformed


def read_events(path: str, fmt: EventFormat, max_malformed: float = 0.01) -> tuple[list[RawEvent], int]:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_events(fh, fmt, max_malformed)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def build_sessions(events: Iterable[RawEvent]) -> list[RawSession]:
    """Group by session id (first-seen order) and sort each group by time, stably."""
    groups: dict[str, list[RawEvent]] = defaultdict(list)
    for ev in events:
        groups[ev.session_id].append(ev)
    sessions = []
    for sid, evs in groups.items():
        evs.sort(key=lambda e: e.timestamp)  # list.sort is stable
        sessions.append(RawSession(sid, [e.item_id for e in evs], evs[-1].timestamp))
    return sessions


def filter_dataset(sessions: list[RawSession], min_item_count: int = 5,
                   min_session_len: int = 2) -> list[RawSession]:
    """Drop rare items, then sessions that became too short (one sweep)."""
    counts = Counter(item for s in sessions for item in s.items)
    out = []
    for s in sessions:
        kept = [i for i in s.items if counts[i] >= min_item_count]
        if len(kept) >= min_session_len:
            out.append(RawSession(s.session_id, kept, s.origin_time))
    if not out:
        log.warning("filtering removed every session")
    return out


def split_train_test(sessions: list[RawSession], holdout_ms: int,
                     min_session_len: int = 2) -> tuple[list[RawSession], list[RawSession]]:
    """Time split: sessions ending in the last ``holdout_ms`` of the span go to test."""
    if not sessions:
        raise DataError("no sessions to split")
    cutoff = max(s.origin_time for s in sessions) - holdout_ms
    train = [s for s in sessions if s.origin_time <= cutoff]
    test = [s for s in sessions if s.origin_time > cutoff]
    test = restrict_to_items(test, {i for s in train for i in s.items}, min_session_len)
    if not train or not test:
        raise DataError(f"empty split: {len(train)} train / {len(test)} test sessions")
    return train, test


def restrict_to_items(sessions: list[RawSession], known: set[str],
                      min_session_len: int = 2) -> list[RawSession]:
    out = []
    for s in sessions:
        kept = [i for i in s.items if i in known]
        if len(kept) >= min_session_len:
            out.append(RawSession(s.session_id, kept, s.origin_time))
    return out


def take_recent_fraction(train: list[RawSession], fraction: float = 1 / 64) -> list[RawSession]:
    """Keep the ceil(fraction * len) sessions with the latest origin time.

    Original order is preserved among the kept sessions.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    keep = math.ceil(fraction * len(train))
    if keep >= len(train):
        return list(train)
    # stable sort: among equal times the later-listed session counts as more recent
    order = sorted(range(len(train)), key=lambda i: train[i].origin_time)
    chosen = sorted(order[len(train) - keep:])
    return [train[i] for i in chosen]


def augment_prefixes(sessions: Iterable[Session | list[int]]) -> list[Session]:
    """Expand each click sequence [s1..sn] into n-1 (prefix -> next) instances."""
    out = []
    for s in sessions:
        items, t = (s.items, s.origin_time) if isinstance(s, Session) else (list(s), 0)
        for end in range(1, len(items)):
            out.append(Session(items[:end], items[end], t))
    return out


def encode_sessions(sessions: list[RawSession], vocab: Vocabulary) -> list[Session]:
    """Raw sessions -> full index sequences (label unset; feed to augment_prefixes)."""
    return [Session(vocab.encode(s.items), PAD, s.origin_time) for s in sessions]


@dataclass
class Batch:
    indices: np.ndarray  # (B, max_len), right-padded with 0
    lengths: np.ndarray
    labels: np.ndarray


def make_batch(instances: list[Session]) -> Batch:
    lengths = np.array([len(s.items) for s in instances], dtype=np.int64)
    indices = np.zeros((len(instances), int(lengths.max())), dtype=np.int64)
    for r, s in enumerate(instances):
        indices[r, : len(s.items)] = s.items
    labels = np.array([s.label for s in instances], dtype=np.int64)
    return Batch(indices, lengths, labels)


def batch_iter(instances: list[Session], batch_size: int = 100, seed: int | None = 0,
               shuffle: bool = True) -> Iterator[Batch]:
    """Yield padded batches; the last one may be short.

    With ``shuffle`` the order is a permutation drawn from ``seed`` (pass an
    epoch-dependent seed to reshuffle every epoch).
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.arange(len(instances))
    if shuffle:
        order = np.random.default_rng(seed).permutation(len(instances))
    for start in range(0, len(order), batch_size):
        yield make_batch([instances[i] for i in order[start:start + batch_size]])


@dataclass
class PreprocessResult:
    train: list[Session]
    test: list[Session]
    vocab: Vocabulary
    stats: dict


def preprocess(events: list[RawEvent], holdout_ms: int, fraction: float = 1.0,
               min_item_count: int = 5, min_session_len: int = 2) -> PreprocessResult:
    """Run the full pipeline on parsed events.

    The vocabulary comes from the (recency-cut) training sessions; test
    clicks on items outside it are removed.
    """
    sessions = build_sessions(events)
    sessions = filter_dataset(sessions, min_item_count, min_session_len)
    train_raw, test_raw = split_train_test(sessions, holdout_ms, min_session_len)
    train_raw = take_recent_fraction(train_raw, fraction)
    vocab = Vocabulary.from_sessions(train_raw)
    test_raw = restrict_to_items(test_raw, set(vocab.index_of), min_session_len)
    if not test_raw:
        raise DataError("recency cut left no test session with known items")
    train = augment_prefixes(encode_sessions(train_raw, vocab))
    test = augment_prefixes(encode_sessions(test_raw, vocab))
    clicks = sum(len(s.items) for s in train_raw) + sum(len(s.items) for s in test_raw)
    n_sessions = len(train_raw) + len(test_raw)
    stats = {
        "clicks": clicks,
        "train_sessions": len(train),
        "test_sessions": len(test),
        "items": len(vocab),
        "avg_length": round(clicks / n_sessions, 4),
        "raw_train_sessions": len(train_raw),
        "raw_test_sessions": len(test_raw),
    }
    return PreprocessResult(train, test, vocab, stats)


# --- instance / vocabulary files -------------------------------------------------

def write_instances(fh: TextIO, instances: list[Session], header: str | None = None) -> None:
    """One instance per line: space-separated item indices, a tab, the label."""
    if header:
        for line in header.splitlines():
            fh.write(f"# {line}\n")
    for s in instances:
        fh.write(" ".join(map(str, s.items)) + "\t" + str(s.label) + "\n")


def read_instances(fh: TextIO) -> list[Session]:
    out = []
    for lineno, line in enumerate(fh, 1):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            items, label = line.rstrip("\n").split("\t")
            s = Session([int(i) for i in items.split()], int(label))
        except ValueError as exc:
            raise DataError(f"bad instance line {lineno}: {line!r}") from exc
        if not s.items or s.label < 1 or min(s.items) < 1:
            raise DataError(f"bad instance line {lineno}: {line!r}")
        out.append(s)
    return out


def write_vocab(fh: TextIO, vocab: Vocabulary, header: str | None = None) -> None:
    """One ``index<TAB>raw id`` pair per line, in index order."""
    if header:
        for line in header.splitlines():
            fh.write(f"# {line}\n")
    for idx in range(1, len(vocab.ids)):
        fh.write(f"{idx}\t{vocab.ids[idx]}\n")


def read_vocab(fh: TextIO) -> Vocabulary:
    ids = []
    for line in fh:
        if not line.strip() or line.startswith("#"):
            continue
        idx, raw = line.rstrip("\n").split("\t", 1)
        if int(idx) != len(ids) + 1:
            raise DataError(f"vocabulary indices not contiguous at {idx}")
        ids.append(raw)
    return Vocabulary.from_ids(ids)
