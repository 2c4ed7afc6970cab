from __future__ import annotations

import threading
from collections import OrderedDict
from typing import Hashable


class LRUCache:
    """Byte-bounded least-recently-used cache for fetched remote payloads.

    ``capacity_bytes=None`` disables eviction (debug mode). An item larger
    than the whole capacity is not cached at all.
    """

    def __init__(self, capacity_bytes: int | None = 64 * 1024 * 1024):
        self.capacity_bytes = capacity_bytes
        self._items: OrderedDict[Hashable, bytes] = OrderedDict()
        self._lock = threading.Lock()
        self.nbytes = 0
        self.hits = 0
        self.misses = 0
        self.evicted: list[Hashable] = []

    def get(self, key: Hashable) -> bytes | None:
        with self._lock:
            payload = self._items.get(key)
            if payload is None:
                self.misses += 1
                return None
            self._items.move_to_end(key)
            self.hits += 1
            return payload

    def put(self, key: Hashable, payload: bytes) -> None:
        with self._lock:
            if key in self._items:
                self._items.move_to_end(key)
                return
            if self.capacity_bytes is not None and len(payload) > self.capacity_bytes:
                return
            self._items[key] = payload
            self.nbytes += len(payload)
            if self.capacity_bytes is None:
                return
            while self.nbytes > self.capacity_bytes:
                old, data = self._items.popitem(last=False)
                self.nbytes -= len(data)
                self.evicted.append(old)

    def discard(self, key: Hashable) -> None:
        with self._lock:
            data = self._items.pop(key, None)
            if data is not None:
                self.nbytes -= len(data)

    def __contains__(self, key: Hashable) -> bool:
        return key in self._items

    def __len__(self) -> int:
        return len(self._items)

    def keys(self) -> list[Hashable]:
        """Keys from least to most recently used."""
        with self._lock:
            return list(self._items)

    @property
    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0
