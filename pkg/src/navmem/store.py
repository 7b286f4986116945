"""The vector memory: captioned segments indexed by meaning, place, and time.

A :class:`MemoryStore` holds one :class:`MemoryEntry` per captioned temporal
segment and answers three kinds of nearest-neighbor queries:

* ``retrieve_by_text``     -- greatest cosine similarity of caption embeddings
* ``retrieve_by_position`` -- least Euclidean distance of segment positions
* ``retrieve_by_time``     -- least distance of a query time to segment midpoints

All three are exact: results are always identical to a brute-force scan over
every entry, with ties broken by lower id.  Internally, byte-identical keys
(repeated captions, revisited positions) are collapsed into groups so that
scan cost grows with the number of *distinct* keys rather than the number of
entries.  Robot logs repeat themselves constantly, which is what keeps query
latency nearly flat as the deployment grows.

Concurrency: one writer may insert while any number of readers query.  An
entry becomes visible atomically when the entry count is published; readers
never block each other or the writer.  This relies on the CPython memory
model (appends and attribute stores are atomic under the GIL).
"""

from __future__ import annotations

import struct
import threading
import zlib
from dataclasses import dataclass, replace
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import (
    CorruptSnapshot,
    DimensionMismatch,
    EmptyStore,
    IoFailure,
    NonMonotonicTime,
)
from .timefmt import parse_timecode, wall_to_relative

SNAPSHOT_MAGIC = b"RMBR"
SNAPSHOT_VERSION = 1

UNIT_NORM_TOLERANCE = 1e-6


@dataclass(frozen=True)
class MemoryEntry:
    """One captioned temporal segment of the deployment.

    ``embedding`` is the unit-norm vector of the caption, ``position`` the
    mean robot position over the segment in meters, and ``t_start``/``t_end``
    the segment bounds in seconds since the deployment epoch.
    """

    caption: str
    embedding: np.ndarray
    position: np.ndarray
    t_start: float
    t_end: float
    id: Optional[int] = None

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.t_start + self.t_end)


def _as_position(value) -> np.ndarray:
    pos = np.asarray(value, dtype=np.float64).reshape(-1)
    if pos.size == 2:
        pos = np.append(pos, 0.0)
    if pos.shape != (3,):
        raise ValueError(f"position must be a 3-vector, got shape {pos.shape}")
    if not np.all(np.isfinite(pos)):
        raise ValueError("position must be finite")
    return pos


class _GroupedColumn:
    """Append-only exact top-m index over rows, deduplicated by byte equality.

    Rows with identical bytes share one group; a query scores each distinct
    row once and expands groups back to entry ids.  Selection is exact: the
    returned ids are the m lowest-cost ids with ties broken by lower id,
    computed over the first ``n_visible`` entries only.
    """

    def __init__(self, width: int):
        self._width = width
        self._rows = np.empty((16, width), dtype=np.float64)
        self._nunique = 0
        self._group_of_key: dict[bytes, int] = {}
        self._ids: list[list[int]] = []
        self._group_of_id: list[int] = []

    def add(self, entry_id: int, row: np.ndarray) -> None:
        key = row.tobytes()
        group = self._group_of_key.get(key)
        if group is None:
            group = self._nunique
            if group == len(self._rows):
                grown = np.empty((2 * len(self._rows), self._width), dtype=np.float64)
                grown[:group] = self._rows[:group]
                self._rows = grown
            self._rows[group] = row
            self._group_of_key[key] = group
            self._ids.append([])
            # Publish the unique row only after it is fully written.
            self._nunique = group + 1
        self._ids[group].append(entry_id)
        self._group_of_id.append(group)

    def row_for(self, entry_id: int) -> np.ndarray:
        return self._rows[self._group_of_id[entry_id]].copy()

    def unique_rows(self) -> np.ndarray:
        return self._rows[: self._nunique]

    def topm(self, costs: np.ndarray, n_visible: int, m: int) -> list[int]:
        """Ids of the ``m`` lowest-cost entries among ids < ``n_visible``.

        ``costs`` holds one cost per unique row (lower is better).  At most
        one id >= n_visible can exist (the writer's in-flight insert), so one
        extra candidate group is enough slack to stay exact.
        """
        nunique = len(costs)
        if nunique == 0 or n_visible == 0:
            return []
        j = min(m + 1, nunique)
        kth = np.partition(costs, j - 1)[j - 1]
        candidates = np.flatnonzero(costs <= kth)

        picked_ids: list[int] = []
        picked_costs: list[float] = []
        for group in candidates:
            taken = 0
            for entry_id in self._ids[group]:
                if entry_id >= n_visible:
                    break  # ids are appended in ascending order
                picked_ids.append(entry_id)
                picked_costs.append(costs[group])
                taken += 1
                if taken >= m:
                    break
        order = np.lexsort((picked_ids, picked_costs))[:m]
        return [picked_ids[k] for k in order]


class MemoryStore:
    """Ordered collection of memory entries with three exact retrieval indexes."""

    def __init__(
        self,
        embedding_dim: int,
        provider_name: str = "",
        wall_epoch: Optional[float] = None,
        embedder=None,
    ):
        if embedding_dim < 1:
            raise ValueError("embedding_dim must be positive")
        if embedder is not None:
            if embedder.dim != embedding_dim:
                raise DimensionMismatch(
                    f"embedder dim {embedder.dim} != store dim {embedding_dim}"
                )
            if provider_name and provider_name != embedder.name:
                raise ValueError(
                    f"store built with provider {provider_name!r}, got {embedder.name!r}"
                )
            provider_name = embedder.name
        self._dim = embedding_dim
        self.provider_name = provider_name
        self.wall_epoch = wall_epoch
        self.embedder = embedder

        self._captions: list[str] = []
        self._times: list[tuple[float, float]] = []
        self._semantic = _GroupedColumn(embedding_dim)
        self._spatial = _GroupedColumn(3)
        self._temporal = _GroupedColumn(1)
        self._count = 0
        self._write_lock = threading.Lock()

    # ------------------------------------------------------------------
    # Introspection

    @property
    def embedding_dim(self) -> int:
        return self._dim

    def __len__(self) -> int:
        return self._count

    @property
    def count(self) -> int:
        return self._count

    def entry(self, entry_id: int) -> MemoryEntry:
        if not 0 <= entry_id < self._count:
            raise IndexError(f"no entry with id {entry_id}")
        t_start, t_end = self._times[entry_id]
        return MemoryEntry(
            id=entry_id,
            caption=self._captions[entry_id],
            embedding=self._semantic.row_for(entry_id),
            position=self._spatial.row_for(entry_id),
            t_start=t_start,
            t_end=t_end,
        )

    def all_entries(self) -> Iterator[MemoryEntry]:
        for i in range(self._count):
            yield self.entry(i)

    # ------------------------------------------------------------------
    # Writing

    def insert(self, entry: MemoryEntry) -> int:
        """Append an entry; returns its assigned id (== previous count)."""
        embedding = np.ascontiguousarray(entry.embedding, dtype=np.float64).reshape(-1)
        if embedding.shape != (self._dim,):
            raise DimensionMismatch(
                f"embedding has dim {embedding.size}, store expects {self._dim}"
            )
        norm = float(np.linalg.norm(embedding))
        if abs(norm - 1.0) > UNIT_NORM_TOLERANCE:
            raise ValueError(f"embedding must be unit-norm, got |v| = {norm}")
        position = _as_position(entry.position)
        t_start, t_end = float(entry.t_start), float(entry.t_end)
        if not (np.isfinite(t_start) and np.isfinite(t_end)):
            raise ValueError("segment times must be finite")
        if t_start > t_end:
            raise ValueError(f"t_start {t_start} > t_end {t_end}")

        with self._write_lock:
            if self._count and t_start < self._times[-1][0]:
                raise NonMonotonicTime(
                    f"t_start {t_start} precedes previous {self._times[-1][0]}"
                )
            entry_id = self._count
            self._captions.append(entry.caption)
            self._times.append((t_start, t_end))
            self._semantic.add(entry_id, embedding)
            self._spatial.add(entry_id, position)
            self._temporal.add(entry_id, np.array([0.5 * (t_start + t_end)]))
            # Publishing the new count makes the entry visible to readers.
            self._count = entry_id + 1
        return entry_id

    # ------------------------------------------------------------------
    # Retrieval

    def retrieve_by_text(self, query_embedding, m: int) -> list[MemoryEntry]:
        """The ``min(m, count)`` entries most cosine-similar to the query."""
        n = self._require_nonempty(m)
        query = np.asarray(query_embedding, dtype=np.float64).reshape(-1)
        if query.shape != (self._dim,):
            raise DimensionMismatch(
                f"query has dim {query.size}, store expects {self._dim}"
            )
        rows = self._semantic.unique_rows()
        costs = -(rows @ query)
        ids = self._semantic.topm(costs, n, m)
        return [self.entry(i) for i in ids]

    def retrieve_by_position(self, p, m: int) -> list[MemoryEntry]:
        """The ``min(m, count)`` entries nearest to ``p`` in Euclidean distance."""
        n = self._require_nonempty(m)
        point = _as_position(p)
        rows = self._spatial.unique_rows()
        diff = rows - point
        costs = np.einsum("ij,ij->i", diff, diff)
        ids = self._spatial.topm(costs, n, m)
        return [self.entry(i) for i in ids]

    def retrieve_by_time(self, t, m: int, reference: str = "deployment") -> list[MemoryEntry]:
        """The ``min(m, count)`` entries whose interval midpoint is nearest ``t``.

        ``t`` may be numeric seconds or an ``HH:MM:SS`` string.  With
        ``reference="deployment"`` (default) the value counts from the
        deployment epoch; with ``reference="wall"`` it is a wall-clock time
        of day, mapped onto the timeline via the store's ``wall_epoch``.
        """
        n = self._require_nonempty(m)
        seconds = parse_timecode(t)
        if reference == "wall":
            if self.wall_epoch is None:
                raise ValueError("store has no wall_epoch; cannot resolve wall-clock time")
            seconds = wall_to_relative(seconds, self.wall_epoch)
        elif reference != "deployment":
            raise ValueError(f"unknown time reference {reference!r}")
        mids = self._temporal.unique_rows()[:, 0]
        costs = np.abs(mids - seconds)
        ids = self._temporal.topm(costs, n, m)
        return [self.entry(i) for i in ids]

    def _require_nonempty(self, m: int) -> int:
        if not isinstance(m, int) or isinstance(m, bool) or m < 1:
            raise ValueError(f"m must be a positive integer, got {m!r}")
        n = self._count
        if n == 0:
            raise EmptyStore("store has no entries")
        return n

    # ------------------------------------------------------------------
    # Maintenance

    def rebuild_indexes(self) -> None:
        """Reconstruct all indexes from the stored entries.

        Results are identical before and after; this exists to verify that
        and to defragment after a bulk load.  Not safe under concurrent use.
        """
        semantic = _GroupedColumn(self._dim)
        spatial = _GroupedColumn(3)
        temporal = _GroupedColumn(1)
        for i in range(self._count):
            semantic.add(i, self._semantic.row_for(i))
            spatial.add(i, self._spatial.row_for(i))
            temporal.add(i, self._temporal.row_for(i))
        self._semantic, self._spatial, self._temporal = semantic, spatial, temporal

    # ------------------------------------------------------------------
    # Persistence
    #
    # Snapshot layout (all integers little-endian):
    #
    #   magic          4 bytes  b"RMBR"
    #   version        u32
    #   embedding_dim  u32
    #   count          u64
    #   provider_len   u32      followed by provider name, UTF-8
    #   wall_epoch     f64      NaN when unset
    #   checksum       u32      CRC-32 of the records region
    #   records        count length-prefixed records:
    #       record_len u32
    #       t_start    f64
    #       t_end      f64
    #       position   3 x f64
    #       embedding  dim x f64
    #       caption_len u32     followed by caption, UTF-8
    #
    # Ids are implicit: records are written in id order.  The layout is
    # stable; bump `version` for any incompatible change.

    def save(self, path) -> None:
        try:
            payload = self._records_blob()
            header = SNAPSHOT_MAGIC + struct.pack(
                "<IIQ", SNAPSHOT_VERSION, self._dim, self._count
            )
            provider = self.provider_name.encode("utf-8")
            header += struct.pack("<I", len(provider)) + provider
            epoch = float("nan") if self.wall_epoch is None else float(self.wall_epoch)
            header += struct.pack("<d", epoch)
            header += struct.pack("<I", zlib.crc32(payload))
            with open(path, "wb") as fh:
                fh.write(header)
                fh.write(payload)
        except OSError as exc:
            raise IoFailure(f"cannot write snapshot {path}: {exc}") from exc

    def _records_blob(self) -> bytes:
        parts = []
        for i in range(self._count):
            t_start, t_end = self._times[i]
            caption = self._captions[i].encode("utf-8")
            body = struct.pack("<dd", t_start, t_end)
            body += self._spatial.row_for(i).tobytes()
            body += self._semantic.row_for(i).tobytes()
            body += struct.pack("<I", len(caption)) + caption
            parts.append(struct.pack("<I", len(body)) + body)
        return b"".join(parts)

    @classmethod
    def load(cls, path, embedder=None) -> "MemoryStore":
        try:
            with open(path, "rb") as fh:
                blob = fh.read()
        except OSError as exc:
            raise IoFailure(f"cannot read snapshot {path}: {exc}") from exc

        view = memoryview(blob)
        offset = 0

        def take(size: int) -> memoryview:
            nonlocal offset
            if offset + size > len(view):
                raise CorruptSnapshot(f"snapshot truncated at byte {offset}")
            chunk = view[offset : offset + size]
            offset += size
            return chunk

        if bytes(take(4)) != SNAPSHOT_MAGIC:
            raise CorruptSnapshot("bad magic; not a memory snapshot")
        version, dim, count = struct.unpack("<IIQ", take(16))
        if version != SNAPSHOT_VERSION:
            raise CorruptSnapshot(f"unsupported snapshot version {version}")
        (provider_len,) = struct.unpack("<I", take(4))
        provider = bytes(take(provider_len)).decode("utf-8")
        (epoch,) = struct.unpack("<d", take(8))
        (checksum,) = struct.unpack("<I", take(4))

        records = view[offset:]
        if zlib.crc32(records) != checksum:
            raise CorruptSnapshot("checksum mismatch; snapshot is corrupt")

        store = cls(
            embedding_dim=dim,
            provider_name=provider,
            wall_epoch=None if np.isnan(epoch) else epoch,
            embedder=embedder,
        )
        for _ in range(count):
            (record_len,) = struct.unpack("<I", take(4))
            body = take(record_len)
            pos = 0
            t_start, t_end = struct.unpack_from("<dd", body, pos)
            pos += 16
            position = np.frombuffer(body, dtype=np.float64, count=3, offset=pos).copy()
            pos += 24
            embedding = np.frombuffer(body, dtype=np.float64, count=dim, offset=pos).copy()
            pos += 8 * dim
            (caption_len,) = struct.unpack_from("<I", body, pos)
            pos += 4
            caption = bytes(body[pos : pos + caption_len]).decode("utf-8")
            store.insert(
                MemoryEntry(
                    caption=caption,
                    embedding=embedding,
                    position=position,
                    t_start=t_start,
                    t_end=t_end,
                )
            )
        if store.count != count:
            raise CorruptSnapshot("record count does not match header")
        return store


def sort_for_context(entries: Sequence[MemoryEntry]) -> list[MemoryEntry]:
    """Order entries the way they are presented to a reader: by time, then id."""
    return sorted(entries, key=lambda e: (e.t_start, e.id if e.id is not None else -1))


__all__ = [
    "MemoryEntry",
    "MemoryStore",
    "SNAPSHOT_MAGIC",
    "SNAPSHOT_VERSION",
    "sort_for_context",
    "replace",
]
