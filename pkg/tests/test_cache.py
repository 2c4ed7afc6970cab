from chunkstasks.cache import LRUCache


def test_lru_trace_a_b_c_a():
    # capacity of exactly two 10-byte entries
    cache = LRUCache(20)
    for key in "ABC":
        assert cache.get(key) is None
        cache.put(key, bytes(10))
    assert cache.evicted == ["A"]
    assert cache.get("A") is None  # A was evicted: a miss
    cache.put("A", bytes(10))
    assert cache.evicted == ["A", "B"]
    assert cache.keys() == ["C", "A"]


def test_recency_updates_on_hit():
    cache = LRUCache(20)
    cache.put("A", bytes(10))
    cache.put("B", bytes(10))
    assert cache.get("A") is not None
    cache.put("C", bytes(10))
    assert cache.evicted == ["B"]
    assert cache.nbytes <= 20


def test_counters():
    cache = LRUCache(100)
    cache.put("k", b"v")
    cache.get("k")
    cache.get("missing")
    assert (cache.hits, cache.misses) == (1, 1)
    assert cache.hit_rate == 0.5


def test_unbounded_and_oversize():
    cache = LRUCache(None)
    for k in range(100):
        cache.put(k, bytes(1000))
    assert len(cache) == 100 and not cache.evicted
    small = LRUCache(4)
    small.put("big", bytes(5))
    assert "big" not in small


def test_discard():
    cache = LRUCache(10)
    cache.put("a", b"12345")
    cache.discard("a")
    assert cache.nbytes == 0 and "a" not in cache
