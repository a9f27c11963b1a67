"""Sparse QoS observation containers, dataset parsers, and a synthetic generator.

Three on-disk formats are supported:

* dense matrix: m lines of n whitespace-separated decimals, a marker value
  (default -1) standing for "not observed";
* sparse triples: one ``i j value`` record per line;
* sparse quadruples: one ``i j k value`` record per line.

Sparse files may contain ``#`` comment lines and blank lines; indices are
zero-based.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import IO, Iterable

import numpy as np

from .errors import ParseError

STATIC = "static"
DYNAMIC = "dynamic"


def _segment_index(keys: np.ndarray, order: np.ndarray):
    """Group entry positions by key.  Returns (order, group ids, segment starts).

    ``order`` sorts the entries by key; ``starts`` indexes the first entry of
    each group within the sorted arrays.  Keys with no entries simply do not
    appear, which the scatter step in the solvers has to handle.
    """
    sorted_keys = keys[order]
    if sorted_keys.size == 0:
        return order, sorted_keys[:0], np.zeros(0, dtype=np.intp)
    change = np.flatnonzero(np.diff(sorted_keys)) + 1
    starts = np.concatenate(([0], change))
    return order, sorted_keys[starts], starts


class ObservationMatrix:
    """Sparse user x service QoS observations as (user, service, value) triples."""

    def __init__(self, m: int, n: int, users, services, values):
        users = np.ascontiguousarray(users, dtype=np.intp)
        services = np.ascontiguousarray(services, dtype=np.intp)
        values = np.ascontiguousarray(values, dtype=float)
        if not (users.shape == services.shape == values.shape) or users.ndim != 1:
            raise ValueError("users, services, values must be equal-length 1-d arrays")
        if users.size:
            if users.min() < 0 or users.max() >= m:
                raise ValueError("user index out of range")
            if services.min() < 0 or services.max() >= n:
                raise ValueError("service index out of range")
            flat = users * n + services
            if np.unique(flat).size != flat.size:
                raise ValueError("duplicate (user, service) observation")
        self.m = int(m)
        self.n = int(n)
        self.users = users
        self.services = services
        self.values = values

    @classmethod
    def from_entries(cls, m: int, n: int, entries: Iterable[tuple]) -> "ObservationMatrix":
        rows = list(entries)
        if rows:
            i, j, x = zip(*rows)
        else:
            i, j, x = (), (), ()
        return cls(m, n, np.array(i, dtype=np.intp), np.array(j, dtype=np.intp), np.array(x, dtype=float))

    @property
    def n_entries(self) -> int:
        return self.values.size

    @property
    def density(self) -> float:
        return self.n_entries / (self.m * self.n) if self.m * self.n else 0.0

    def entry_set(self):
        return set(zip(self.users.tolist(), self.services.tolist(), self.values.tolist()))

    @cached_property
    def by_user(self):
        order = np.argsort(self.users, kind="stable")
        return _segment_index(self.users, order)

    @cached_property
    def by_service(self):
        order = np.argsort(self.services, kind="stable")
        return _segment_index(self.services, order)

    def transpose(self) -> "ObservationMatrix":
        return ObservationMatrix(self.n, self.m, self.services, self.users, self.values)

    def subset(self, positions) -> "ObservationMatrix":
        positions = np.asarray(positions, dtype=np.intp)
        return ObservationMatrix(
            self.m, self.n, self.users[positions], self.services[positions], self.values[positions]
        )


class ObservationTensor:
    """Sparse user x service x time observations as (user, service, time, value) quadruples."""

    def __init__(self, m: int, n: int, t: int, users, services, times, values):
        users = np.ascontiguousarray(users, dtype=np.intp)
        services = np.ascontiguousarray(services, dtype=np.intp)
        times = np.ascontiguousarray(times, dtype=np.intp)
        values = np.ascontiguousarray(values, dtype=float)
        shapes = {users.shape, services.shape, times.shape, values.shape}
        if len(shapes) != 1 or users.ndim != 1:
            raise ValueError("index and value arrays must be equal-length 1-d arrays")
        if users.size:
            for arr, bound, what in ((users, m, "user"), (services, n, "service"), (times, t, "time")):
                if arr.min() < 0 or arr.max() >= bound:
                    raise ValueError(f"{what} index out of range")
            flat = (users * n + services) * t + times
            if np.unique(flat).size != flat.size:
                raise ValueError("duplicate (user, service, time) observation")
        self.m = int(m)
        self.n = int(n)
        self.t = int(t)
        self.users = users
        self.services = services
        self.times = times
        self.values = values

    @classmethod
    def from_entries(cls, m: int, n: int, t: int, entries: Iterable[tuple]) -> "ObservationTensor":
        rows = list(entries)
        if rows:
            i, j, k, x = zip(*rows)
        else:
            i, j, k, x = (), (), (), ()
        return cls(
            m, n, t,
            np.array(i, dtype=np.intp), np.array(j, dtype=np.intp),
            np.array(k, dtype=np.intp), np.array(x, dtype=float),
        )

    @property
    def n_entries(self) -> int:
        return self.values.size

    @property
    def density(self) -> float:
        cells = self.m * self.n * self.t
        return self.n_entries / cells if cells else 0.0

    def entry_set(self):
        return set(zip(self.users.tolist(), self.services.tolist(), self.times.tolist(), self.values.tolist()))

    @cached_property
    def by_user(self):
        order = np.argsort(self.users, kind="stable")
        return _segment_index(self.users, order)

    @cached_property
    def by_service(self):
        order = np.argsort(self.services, kind="stable")
        return _segment_index(self.services, order)

    @cached_property
    def by_time(self):
        order = np.argsort(self.times, kind="stable")
        return _segment_index(self.times, order)

    def subset(self, positions) -> "ObservationTensor":
        positions = np.asarray(positions, dtype=np.intp)
        return ObservationTensor(
            self.m, self.n, self.t,
            self.users[positions], self.services[positions],
            self.times[positions], self.values[positions],
        )


@dataclass
class DatasetMeta:
    """Shape and convention info for an on-disk dataset."""

    kind: str = STATIC
    metric: str = "response_time"
    m: int = 0
    n: int = 0
    t: int = 0
    value_range: tuple[float, float] = (0.0, float("inf"))
    missing_marker: float = -1.0

    def __post_init__(self):
        if self.kind not in (STATIC, DYNAMIC):
            raise ValueError(f"kind must be '{STATIC}' or '{DYNAMIC}', got {self.kind!r}")
        lo, hi = self.value_range
        if lo > hi:
            raise ValueError("value_range min exceeds max")


@dataclass
class SyntheticSpec:
    """Recipe for a seeded synthetic dataset with planted structure and outliers."""

    m: int
    n: int
    t: int = 1
    true_rank: int = 2
    noise_sigma: float = 0.0
    outlier_fraction: float = 0.0
    outlier_magnitude: float = 10.0
    density: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.true_rank < 1:
            raise ValueError("true_rank must be >= 1")
        if not 0.0 <= self.outlier_fraction < 1.0:
            raise ValueError("outlier_fraction must be in [0, 1)")
        if not self.outlier_magnitude > 1.0:
            raise ValueError("outlier_magnitude must exceed 1")
        if not 0.0 < self.density <= 1.0:
            raise ValueError("density must be in (0, 1]")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")


def _as_stream(source) -> IO[str]:
    if hasattr(source, "read"):
        return source
    return open(source, "r", encoding="utf-8")


def _records(stream, n_fields: int):
    """Yield (line_number, fields) for data records; skip comments and blanks."""
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        if len(fields) != n_fields:
            raise ParseError(f"line {lineno}: expected {n_fields} fields, got {len(fields)}")
        yield lineno, fields


def parse_dense_matrix(source, meta: DatasetMeta) -> ObservationMatrix:
    """Parse an m x n dense matrix file, dropping cells equal to the missing marker."""
    stream = _as_stream(source)
    close = stream is not source
    try:
        users, services, values = [], [], []
        lineno = 0
        for lineno, raw in enumerate(stream, start=1):
            if lineno > meta.m:
                if raw.strip():
                    raise ParseError(f"line {lineno}: expected {meta.m} data lines")
                continue
            tokens = raw.split()
            if len(tokens) != meta.n:
                raise ParseError(f"line {lineno}: expected {meta.n} values, got {len(tokens)}")
            for j, tok in enumerate(tokens):
                try:
                    x = float(tok)
                except ValueError:
                    raise ParseError(f"line {lineno}: cannot parse value {tok!r}") from None
                if x == meta.missing_marker:
                    continue
                users.append(lineno - 1)
                services.append(j)
                values.append(x)
        if lineno < meta.m:
            raise ParseError(f"line {lineno}: expected {meta.m} data lines, file has {lineno}")
        return ObservationMatrix(
            meta.m, meta.n,
            np.array(users, dtype=np.intp), np.array(services, dtype=np.intp),
            np.array(values, dtype=float),
        )
    finally:
        if close:
            stream.close()


def parse_triples(source, m: int | None = None, n: int | None = None) -> ObservationMatrix:
    """Parse ``i j value`` records; dimensions default to max index + 1."""
    stream = _as_stream(source)
    close = stream is not source
    try:
        users, services, values = [], [], []
        seen: dict[tuple[int, int], int] = {}
        for lineno, (si, sj, sx) in _records(stream, 3):
            try:
                i, j, x = int(si), int(sj), float(sx)
            except ValueError:
                raise ParseError(f"line {lineno}: cannot parse record {si!r} {sj!r} {sx!r}") from None
            if i < 0 or j < 0:
                raise ParseError(f"line {lineno}: negative index ({i}, {j})")
            if (i, j) in seen:
                raise ParseError(f"line {lineno}: duplicate entry ({i}, {j}), first seen on line {seen[i, j]}")
            seen[i, j] = lineno
            users.append(i)
            services.append(j)
            values.append(x)
        dim_m = m if m is not None else (max(users) + 1 if users else 0)
        dim_n = n if n is not None else (max(services) + 1 if services else 0)
        return ObservationMatrix(
            dim_m, dim_n,
            np.array(users, dtype=np.intp), np.array(services, dtype=np.intp),
            np.array(values, dtype=float),
        )
    finally:
        if close:
            stream.close()


def parse_quads(source, m: int | None = None, n: int | None = None, t: int | None = None) -> ObservationTensor:
    """Parse ``i j k value`` records; dimensions default to max index + 1."""
    stream = _as_stream(source)
    close = stream is not source
    try:
        users, services, times, values = [], [], [], []
        seen: dict[tuple[int, int, int], int] = {}
        for lineno, (si, sj, sk, sx) in _records(stream, 4):
            try:
                i, j, k, x = int(si), int(sj), int(sk), float(sx)
            except ValueError:
                raise ParseError(f"line {lineno}: cannot parse record {si!r} {sj!r} {sk!r} {sx!r}") from None
            if i < 0 or j < 0 or k < 0:
                raise ParseError(f"line {lineno}: negative index ({i}, {j}, {k})")
            if (i, j, k) in seen:
                raise ParseError(
                    f"line {lineno}: duplicate entry ({i}, {j}, {k}), first seen on line {seen[i, j, k]}"
                )
            seen[i, j, k] = lineno
            users.append(i)
            services.append(j)
            times.append(k)
            values.append(x)
        dim_m = m if m is not None else (max(users) + 1 if users else 0)
        dim_n = n if n is not None else (max(services) + 1 if services else 0)
        dim_t = t if t is not None else (max(times) + 1 if times else 0)
        return ObservationTensor(
            dim_m, dim_n, dim_t,
            np.array(users, dtype=np.intp), np.array(services, dtype=np.intp),
            np.array(times, dtype=np.intp), np.array(values, dtype=float),
        )
    finally:
        if close:
            stream.close()


def write_triples(matrix: ObservationMatrix, target) -> None:
    stream = target if hasattr(target, "write") else open(target, "w", encoding="utf-8")
    close = stream is not target
    try:
        stream.write(f"# sparse triples, m={matrix.m} n={matrix.n}\n")
        for i, j, x in zip(matrix.users, matrix.services, matrix.values):
            stream.write(f"{i} {j} {float(x)!r}\n")
    finally:
        if close:
            stream.close()


def write_quads(tensor: ObservationTensor, target) -> None:
    stream = target if hasattr(target, "write") else open(target, "w", encoding="utf-8")
    close = stream is not target
    try:
        stream.write(f"# sparse quadruples, m={tensor.m} n={tensor.n} t={tensor.t}\n")
        for i, j, k, x in zip(tensor.users, tensor.services, tensor.times, tensor.values):
            stream.write(f"{i} {j} {k} {float(x)!r}\n")
    finally:
        if close:
            stream.close()


@dataclass
class SyntheticDataset:
    """Generated observations plus the ground truth that produced them."""

    observations: "ObservationMatrix | ObservationTensor"
    planted_outliers: np.ndarray  # positions into the entry arrays
    factors: tuple[np.ndarray, ...]  # ground-truth factor matrices
    spec: SyntheticSpec = field(repr=False, default=None)


def generate_synthetic(spec: SyntheticSpec) -> SyntheticDataset:
    """Draw a low-rank dataset with Gaussian noise and planted multiplicative outliers.

    Ground-truth factors are uniform on [0.5, 1.5); observed cells are an
    exact-count uniform sample at the requested density; outliers multiply the
    observed value by ``outlier_magnitude``, preserving sign.
    """
    rng = np.random.default_rng(spec.seed)
    cells = spec.m * spec.n * spec.t
    n_obs = int(round(spec.density * cells))
    if n_obs < 1:
        raise ValueError("density too small: no cells would be observed")

    u = rng.uniform(0.5, 1.5, size=(spec.m, spec.true_rank))
    s = rng.uniform(0.5, 1.5, size=(spec.n, spec.true_rank))
    flat = rng.choice(cells, size=n_obs, replace=False)
    flat.sort()

    if spec.t == 1:
        users, services = np.divmod(flat, spec.n)
        clean = np.einsum("ij,ij->i", u[users], s[services])
        factors = (u, s)
    else:
        users, rest = np.divmod(flat, spec.n * spec.t)
        services, times = np.divmod(rest, spec.t)
        w = rng.uniform(0.5, 1.5, size=(spec.t, spec.true_rank))
        clean = np.einsum("ij,ij,ij->i", u[users], s[services], w[times])
        factors = (u, s, w)

    values = clean + rng.normal(0.0, spec.noise_sigma, size=n_obs) if spec.noise_sigma > 0 else clean.copy()

    n_out = int(spec.outlier_fraction * n_obs)
    planted = rng.choice(n_obs, size=n_out, replace=False)
    planted.sort()
    values[planted] = values[planted] * spec.outlier_magnitude

    if spec.t == 1:
        obs = ObservationMatrix(spec.m, spec.n, users, services, values)
    else:
        obs = ObservationTensor(spec.m, spec.n, spec.t, users, services, times, values)
    return SyntheticDataset(obs, planted.astype(np.intp), factors, spec)


def write_manifest(dataset: SyntheticDataset, target) -> None:
    """Flat key = value sidecar recording the generating spec and planted outliers."""
    spec = dataset.spec
    stream = target if hasattr(target, "write") else open(target, "w", encoding="utf-8")
    close = stream is not target
    try:
        for key in ("m", "n", "t", "true_rank", "noise_sigma", "outlier_fraction",
                    "outlier_magnitude", "density", "seed"):
            stream.write(f"{key} = {getattr(spec, key)!r}\n")
        stream.write(f"n_entries = {dataset.observations.n_entries}\n")
        stream.write("planted_outliers = " + ",".join(str(p) for p in dataset.planted_outliers) + "\n")
    finally:
        if close:
            stream.close()


def read_manifest(source) -> dict:
    """Parse a flat key = value manifest back into plain Python values."""
    stream = _as_stream(source)
    close = stream is not source
    out: dict = {}
    try:
        for lineno, raw in enumerate(stream, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(f"line {lineno}: expected 'key = value'")
            key, _, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if key == "planted_outliers":
                out[key] = np.array([int(v) for v in val.split(",") if v], dtype=np.intp)
            else:
                try:
                    out[key] = int(val)
                except ValueError:
                    out[key] = float(val)
        return out
    finally:
        if close:
            stream.close()
