import threading
import hashlib
import json
from typing import Dict, Optional, Any, Callable
from collections import OrderedDict
import logging
from config import get_config

logger = logging.getLogger(__name__)


class CacheStats:
    """Cache statistics and monitoring"""

    def __init__(self):
        self.hits = 0
        self.misses = 0
        self.evictions = 0
        self.total_requests = 0
        self._lock = threading.Lock()

    def record_hit(self):
        with self._lock:
            self.hits += 1
            self.total_requests += 1

    def record_miss(self):
        with self._lock:
            self.misses += 1
            self.total_requests += 1

    def record_eviction(self):
        with self._lock:
            self.evictions += 1

    @property
    def hit_rate(self) -> float:
        if self.total_requests == 0:
            return 0.0
        return self.hits / self.total_requests

    def get_stats(self) -> Dict[str, Any]:
        with self._lock:
            return {
                "hits": self.hits,
                "misses": self.misses,
                "evictions": self.evictions,
                "total_requests": self.total_requests,
                "hit_rate": self.hit_rate
            }


def evaluation_key(scenario: Dict[str, Any], point: Dict[str, Any], seed: int) -> str:
    """SHA-256 of the canonical JSON of one evaluation"""
    payload = json.dumps({"scenario": scenario, "point": point, "seed": seed}, sort_keys=True, default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ResultCache:
    """LRU cache of per-seed evaluation metrics"""

    def __init__(self, max_size: int = None):
        self.max_size = max_size or get_config().cache.max_size
        self._cache: OrderedDict[str, Dict[str, float]] = OrderedDict()
        self._lock = threading.RLock()
        self.stats = CacheStats()

    def _evict_lru(self):
        if self._cache:
            key, _ = self._cache.popitem(last=False)
            self.stats.record_eviction()
            logger.debug(f"Evicted evaluation {key[:12]}")

    def get(self, key: str) -> Optional[Dict[str, float]]:
        with self._lock:
            if key in self._cache:
                self._cache.move_to_end(key)
                self.stats.record_hit()
                return self._cache[key]
            self.stats.record_miss()
            return None

    def set(self, key: str, value: Dict[str, float]) -> None:
        with self._lock:
            if key in self._cache:
                del self._cache[key]
            if len(self._cache) >= self.max_size:
                self._evict_lru()
            self._cache[key] = value

    def __contains__(self, key: str) -> bool:
        with self._lock:
            return key in self._cache

    def __len__(self) -> int:
        return len(self._cache)

    def get_or_set(self, key: str, compute: Callable[[], Dict[str, float]]) -> Dict[str, float]:
        value = self.get(key)
        if value is not None:
            return value
        value = compute()
        self.set(key, value)
        return value

    def clear(self) -> None:
        with self._lock:
            self._cache.clear()

    def get_stats(self) -> Dict[str, Any]:
        with self._lock:
            stats = self.stats.get_stats()
            stats.update({"size": len(self._cache), "max_size": self.max_size})
            return stats


_cache_instance: Optional[ResultCache] = None


def get_result_cache() -> ResultCache:
    """Process-wide evaluation cache"""
    global _cache_instance
    if _cache_instance is None:
        _cache_instance = ResultCache()
    return _cache_instance


def clear_result_cache():
    global _cache_instance
    if _cache_instance:
        _cache_instance.clear()
