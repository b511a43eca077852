"""Consistency-based confidence over a set of sampled generations.

Samples are clustered by execution result, schema links, or embedding
similarity; a sample's confidence is the share of samples in its cluster.
Samples that fail to execute share one FAILURE cluster and score zero.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import re
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Callable, Hashable, Protocol, Sequence

import numpy as np

from sqlconf import sql_exec
from sqlconf.schema_link import extract

DEFAULT_SAMPLES = 10
DEFAULT_TEMPERATURE = 1.0
DEFAULT_EMBED_THRESHOLD = 0.92
_COSINE_SLACK = 1e-9


class EmbedderUnavailable(RuntimeError):
    pass


class ClusterMethod(enum.Enum):
    EXECUTION = "Execution"
    EMBEDDING = "Embedding"
    SCHEMA = "Schema"


@dataclass(frozen=True)
class SampleSet:
    question_id: str
    samples: tuple[str, ...]
    temperature: float = DEFAULT_TEMPERATURE

    def __post_init__(self) -> None:
        if not self.samples:
            raise ValueError("a sample set needs at least one sample")


@dataclass(frozen=True)
class Clustering:
    """Cluster ids are contiguous from 0 in order of first appearance."""

    assignments: tuple[int, ...]
    method: ClusterMethod
    failure_cluster: int | None = None

    @property
    def n(self) -> int:
        return len(self.assignments)

    def sizes(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for c in self.assignments:
            out[c] = out.get(c, 0) + 1
        return out


def _group(keys: Sequence[Hashable], method: ClusterMethod, failure_key: object = None) -> Clustering:
    ids: dict[Hashable, int] = {}
    assignments = []
    for key in keys:
        if key not in ids:
            ids[key] = len(ids)
        assignments.append(ids[key])
    failure = ids.get(failure_key) if failure_key is not None else None
    return Clustering(tuple(assignments), method, failure)


_FAILURE = ("__failure__",)


def _result_key(result: sql_exec.ExecResult) -> Hashable:
    if not result.ok:
        return _FAILURE
    return frozenset(result.multiset().items())


def cluster_by_execution(samples: Sequence[str], db: sql_exec.Database,
                         timeout: float = sql_exec.DEFAULT_TIMEOUT) -> Clustering:
    results = [sql_exec.execute(db, s, timeout) for s in samples]
    return cluster_results(results)


def cluster_results(results: Sequence[sql_exec.ExecResult]) -> Clustering:
    """Cluster already-executed samples by row-multiset equality."""
    return _group([_result_key(r) for r in results], ClusterMethod.EXECUTION, _FAILURE)


def cluster_by_schema(samples: Sequence[str]) -> Clustering:
    return _group([extract(s) for s in samples], ClusterMethod.SCHEMA)


class Embedder(Protocol):
    def embed(self, text: str) -> Sequence[float]: ...


class HashingEmbedder:
    """Deterministic offline embedder: hashed character trigrams and word unigrams."""

    def __init__(self, dim: int = 256):
        self.dim = dim

    def _features(self, text: str) -> list[str]:
        norm = " ".join(text.lower().split())
        words = re.findall(r"\w+|[^\w\s]", norm)
        grams = [norm[i:i + 3] for i in range(max(len(norm) - 2, 1))]
        return [f"w:{w}" for w in words] + [f"c:{g}" for g in grams]

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim)
        for feat in self._features(text):
            h = hashlib.blake2b(feat.encode("utf-8"), digest_size=8).digest()
            idx = int.from_bytes(h[:4], "little") % self.dim
            sign = 1.0 if h[4] & 1 else -1.0
            vec[idx] += sign
        return vec


class HttpEmbedder:
    """Embeddings from an OpenAI-style ``/embeddings`` endpoint."""

    def __init__(self, url: str, model: str, api_key: str | None = None, timeout: float = 30.0):
        self.url = url
        self.model = model
        self.api_key = api_key
        self.timeout = timeout

    def embed(self, text: str) -> list[float]:
        body = json.dumps({"model": self.model, "input": text}).encode("utf-8")
        req = urllib.request.Request(self.url, data=body, method="POST",
                                     headers={"Content-Type": "application/json"})
        if self.api_key:
            req.add_header("Authorization", f"Bearer {self.api_key}")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                payload = json.load(resp)
            return payload["data"][0]["embedding"]
        except (urllib.error.URLError, OSError, KeyError, IndexError, ValueError) as exc:
            raise EmbedderUnavailable(str(exc)) from exc


def _unit(vec: Sequence[float]) -> np.ndarray:
    arr = np.asarray(vec, dtype=float)
    norm = np.linalg.norm(arr)
    return arr / norm if norm > 0 else arr


def cluster_vectors(vectors: Sequence[Sequence[float]],
                    threshold: float = DEFAULT_EMBED_THRESHOLD,
                    linkage: str = "centroid") -> Clustering:
    """Cluster vectors by cosine similarity.

    ``centroid`` (default) is greedy in input order: a vector joins the first
    cluster whose centroid has cosine similarity >= ``threshold`` with it,
    otherwise it opens a new cluster.  Centroids move as members join, so
    raising the threshold can occasionally *merge* clusters.  ``single``
    links any pair at or above the threshold and takes connected components;
    it only ever splits clusters as the threshold rises.
    """
    units = [_unit(v) for v in vectors]
    if linkage == "single":
        return _single_linkage(units, threshold)
    if linkage != "centroid":
        raise ValueError(f"unknown linkage {linkage!r}")
    members: list[list[int]] = []
    centroids: list[np.ndarray] = []
    assignments = []
    for i, u in enumerate(units):
        for c, centroid in enumerate(centroids):
            if float(u @ _unit(centroid)) >= threshold - _COSINE_SLACK:
                members[c].append(i)
                centroids[c] = np.mean([units[m] for m in members[c]], axis=0)
                assignments.append(c)
                break
        else:
            members.append([i])
            centroids.append(u.copy())
            assignments.append(len(centroids) - 1)
    return Clustering(tuple(assignments), ClusterMethod.EMBEDDING)


def _single_linkage(units: list[np.ndarray], threshold: float) -> Clustering:
    parent = list(range(len(units)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(units)):
        for j in range(i + 1, len(units)):
            if float(units[i] @ units[j]) >= threshold - _COSINE_SLACK:
                parent[find(j)] = find(i)
    return _group([find(i) for i in range(len(units))], ClusterMethod.EMBEDDING)


def cluster_by_embedding(samples: Sequence[str], embedder: Embedder,
                         threshold: float = DEFAULT_EMBED_THRESHOLD,
                         linkage: str = "centroid") -> Clustering:
    return cluster_vectors([embedder.embed(s) for s in samples], threshold, linkage)


def consistency_score(clustering: Clustering, sample_index: int) -> float:
    """Share of samples in the cluster of ``sample_index``; FAILURE scores 0."""
    if not 0 <= sample_index < clustering.n:
        raise IndexError(sample_index)
    cid = clustering.assignments[sample_index]
    if cid == clustering.failure_cluster:
        return 0.0
    return clustering.sizes()[cid] / clustering.n


def primary_consistency(primary: str, samples: Sequence[str],
                        cluster: Callable[[Sequence[str]], Clustering]) -> float:
    """Score the primary query clustered together with its samples (n + 1 items)."""
    return consistency_score(cluster([primary, *samples]), 0)


def weighted_score_sum(clustering: Clustering) -> float:
    """Size-weighted sum of cluster scores; equals sum(|c|^2)/n over non-failure clusters."""
    return math.fsum(consistency_score(clustering, i) for i in range(clustering.n))
