"""Chunked cutout download: plan z-slabs, write a TSV manifest, fetch and assemble.

A manifest line fully describes one cutout, so the same file can be fed
line-by-line to a distributed runner or consumed here by :func:`fetch_all`::

    chunk_id <TAB> token <TAB> resolution <TAB> x0 <TAB> x1 <TAB> y0 <TAB> y1 <TAB> z0 <TAB> z1
"""

from __future__ import annotations

import logging
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import requests

from emkit.errors import (
    AssemblyError,
    EmkitError,
    FetchError,
    FetchFailedError,
    InvalidExtentError,
    InvalidParameterError,
    ManifestParseError,
    PayloadSizeError,
    TemplateError,
)
from emkit.fsutil import atomic_write
from emkit.volume import Extent3D, Volume3D

log = logging.getLogger(__name__)

DEFAULT_SLAB_DEPTH = 16
DEFAULT_TEMPLATE = "{base}/ocp/ca/{token}/{format}/{res}/{x0},{x1}/{y0},{y1}/{z0},{z1}/"
INFO_TEMPLATE = "{base}/ocp/ca/{token}/info/"
REQUIRED_FIELDS = ("token", "res", "x0", "x1", "y0", "y1", "z0", "z1")

_PLACEHOLDER = re.compile(r"\{(\w+)\}")


@dataclass(frozen=True)
class CutoutSpec:
    token: str
    resolution: int
    extent: Extent3D
    chunk_id: int

    def __post_init__(self):
        if not self.token or any(c in self.token for c in "\t\n\r"):
            raise InvalidParameterError(f"bad token {self.token!r}")
        if self.resolution < 0:
            raise InvalidParameterError(f"resolution must be >= 0, got {self.resolution}")


@dataclass(frozen=True)
class ChunkManifest:
    entries: tuple
    source_extent: Extent3D

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def check_tiling(self):
        """Raise unless the entries are disjoint and exactly cover ``source_extent``."""
        ids = [c.chunk_id for c in self.entries]
        if len(set(ids)) != len(ids):
            raise InvalidParameterError("duplicate chunk ids in manifest")
        src = self.source_extent
        total = 0
        for c in self.entries:
            e = c.extent
            if not (src.x0 <= e.x0 and e.x1 <= src.x1 and src.y0 <= e.y0 and e.y1 <= src.y1
                    and src.z0 <= e.z0 and e.z1 <= src.z1):
                raise InvalidParameterError(f"chunk {c.chunk_id} lies outside the source extent")
            total += e.volume_count
        boxes = [c.extent for c in self.entries]
        for i, a in enumerate(boxes):
            for b in boxes[i + 1:]:
                if (a.x0 < b.x1 and b.x0 < a.x1 and a.y0 < b.y1 and b.y0 < a.y1
                        and a.z0 < b.z1 and b.z0 < a.z1):
                    raise InvalidParameterError("manifest chunks overlap")
        # disjoint boxes inside src whose volumes sum to src's volume cover it
        if total != src.volume_count:
            raise InvalidParameterError("manifest chunks do not cover the source extent")


@dataclass(frozen=True)
class FetchPolicy:
    parallelism: int = 4
    max_retries: int = 3
    backoff_base: float = 0.5
    timeout: float = 30.0

    def __post_init__(self):
        if self.parallelism < 1:
            raise InvalidParameterError("parallelism must be >= 1")
        if self.max_retries < 0:
            raise InvalidParameterError("max_retries must be >= 0")
        if not self.backoff_base > 0:
            raise InvalidParameterError("backoff_base must be > 0")
        if not self.timeout > 0:
            raise InvalidParameterError("timeout must be > 0")

    def delay(self, attempt):
        """Sleep before retry number ``attempt + 1`` (attempt counts from 0)."""
        return self.backoff_base * 2**attempt


def plan_chunks(token, resolution, extent, slab_depth=DEFAULT_SLAB_DEPTH):
    if slab_depth < 1:
        raise InvalidParameterError(f"slab_depth must be >= 1, got {slab_depth}")
    entries = []
    for i, z in enumerate(range(extent.z0, extent.z1, slab_depth)):
        sub = extent.with_z(z, min(z + slab_depth, extent.z1))
        entries.append(CutoutSpec(token, resolution, sub, i))
    return ChunkManifest(tuple(entries), extent)


def fill_template(template, values):
    """Substitute ``{name}`` placeholders literally; every placeholder must be known."""
    names = _PLACEHOLDER.findall(template)
    missing = [n for n in names if n not in values]
    if missing:
        raise TemplateError(f"no value for placeholder(s) {', '.join(missing)} in {template!r}")
    return _PLACEHOLDER.sub(lambda m: str(values[m.group(1)]), template)


def cutout_url(spec, template=DEFAULT_TEMPLATE, base="", format="raw"):
    """URL for one cutout.

    ``template`` must contain each of ``{token} {res} {x0} {x1} {y0} {y1} {z0}
    {z1}`` exactly once; ``{base}`` and ``{format}`` are optional extras.
    """
    names = _PLACEHOLDER.findall(template)
    for name in REQUIRED_FIELDS:
        n = names.count(name)
        if n != 1:
            what = "missing" if n == 0 else f"repeated {n} times"
            raise TemplateError(f"placeholder {{{name}}} {what} in {template!r}")
    e = spec.extent
    values = dict(
        token=spec.token, res=spec.resolution,
        x0=e.x0, x1=e.x1, y0=e.y0, y1=e.y1, z0=e.z0, z1=e.z1,
        base=base.rstrip("/"), format=format,
    )
    return fill_template(template, values)


def info_url(token, base, template=INFO_TEMPLATE):
    return fill_template(template, {"token": token, "base": base.rstrip("/")})


# ------------------------------------------------------------------ manifest


def format_manifest_line(spec):
    e = spec.extent
    fields = (spec.chunk_id, spec.token, spec.resolution, *e.as_tuple())
    return "\t".join(str(f) for f in fields)


def write_manifest(m, path):
    with atomic_write(path, "w") as fh:
        for spec in m.entries:
            fh.write(format_manifest_line(spec) + "\n")


def _parse_line(line, lineno):
    fields = line.split("\t")
    if len(fields) != 9:
        raise ManifestParseError(f"expected 9 tab-separated fields, got {len(fields)}", lineno)
    chunk_id, token, *nums = fields
    try:
        cid = int(chunk_id)
        res, x0, x1, y0, y1, z0, z1 = (int(n) for n in nums)
    except ValueError:
        raise ManifestParseError("non-integer numeric field", lineno) from None
    try:
        return CutoutSpec(token, res, Extent3D(x0, x1, y0, y1, z0, z1), cid)
    except (InvalidExtentError, InvalidParameterError) as exc:
        raise ManifestParseError(str(exc), lineno) from None


def parse_manifest(text):
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        entries.append(_parse_line(line, lineno))
    if not entries:
        raise ManifestParseError("manifest is empty")
    ids = [s.chunk_id for s in entries]
    if len(set(ids)) != len(ids):
        raise ManifestParseError("duplicate chunk_id")
    exts = [s.extent for s in entries]
    src = Extent3D(
        min(e.x0 for e in exts), max(e.x1 for e in exts),
        min(e.y0 for e in exts), max(e.y1 for e in exts),
        min(e.z0 for e in exts), max(e.z1 for e in exts),
    )
    return ChunkManifest(tuple(entries), src)


def read_manifest(path):
    return parse_manifest(Path(path).read_text())


# --------------------------------------------------------------------- fetch


class _Transient(Exception):
    pass


def _get_once(session, url, timeout):
    try:
        resp = session.get(url, timeout=timeout)
    except (requests.ConnectionError, requests.Timeout) as exc:
        raise _Transient(f"{type(exc).__name__}: {exc}") from exc
    if 500 <= resp.status_code < 600:
        raise _Transient(f"HTTP {resp.status_code} from {url}")
    if 400 <= resp.status_code < 500:
        raise FetchError(f"HTTP {resp.status_code} from {url}", status=resp.status_code)
    if not 200 <= resp.status_code < 300:
        raise FetchError(f"unexpected HTTP {resp.status_code} from {url}", status=resp.status_code)
    return resp.content


@dataclass
class FetchLog:
    """Attempt counts per chunk, filled in by :func:`fetch_chunk`."""

    attempts: dict = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def record(self, chunk_id, n):
        with self._lock:
            self.attempts[chunk_id] = n


def fetch_chunk(spec, template=DEFAULT_TEMPLATE, policy=FetchPolicy(), *, base="",
                format="raw", session=None, sleep=time.sleep, fetch_log=None):
    """GET one cutout and decode it as a raw 8-bit volume.

    Timeouts, connection errors and 5xx responses are retried up to
    ``policy.max_retries`` times with delays ``backoff_base * 2**attempt``.
    4xx is permanent.  A body of the wrong length is not retried.
    """
    url = cutout_url(spec, template, base=base, format=format)
    session = session or requests
    last = None
    attempts = 0
    try:
        for attempt in range(policy.max_retries + 1):
            if attempt:
                sleep(policy.delay(attempt - 1))
            attempts += 1
            try:
                body = _get_once(session, url, policy.timeout)
            except _Transient as exc:
                last = exc
                log.warning("chunk %s attempt %d: %s", spec.chunk_id, attempts, exc)
                continue
            except FetchError as exc:
                exc.attempts = attempts
                raise
            expected = spec.extent.volume_count
            if len(body) != expected:
                raise PayloadSizeError(url, expected, len(body))
            return Volume3D(spec.extent, np.frombuffer(body, dtype=np.uint8))
        raise FetchFailedError(
            f"chunk {spec.chunk_id}: gave up after {attempts} attempts: {last}",
            attempts=attempts, cause=last,
        )
    finally:
        if fetch_log is not None:
            fetch_log.record(spec.chunk_id, attempts)


def fetch_all(m, template=DEFAULT_TEMPLATE, policy=FetchPolicy(), *, base="",
              format="raw", sleep=time.sleep, fetch_log=None):
    """Fetch every chunk with at most ``policy.parallelism`` in flight and assemble.

    Each chunk fills a disjoint z-range of one preallocated buffer, so the
    result does not depend on completion order.  If any chunk fails, nothing
    is returned and :class:`AssemblyError` lists every failed chunk id.
    """
    m.check_tiling()
    src = m.source_extent
    buf = np.empty(src.shape, dtype=np.uint8)
    failures = {}
    local = threading.local()

    def session():
        if not hasattr(local, "s"):
            local.s = requests.Session()
        return local.s

    def work(spec):
        vol = fetch_chunk(spec, template, policy, base=base, format=format,
                          session=session(), sleep=sleep, fetch_log=fetch_log)
        e = spec.extent
        buf[e.z0 - src.z0:e.z1 - src.z0, e.y0 - src.y0:e.y1 - src.y0,
            e.x0 - src.x0:e.x1 - src.x0] = vol.data

    with ThreadPoolExecutor(max_workers=policy.parallelism) as pool:
        futures = {pool.submit(work, spec): spec.chunk_id for spec in m.entries}
        for fut, cid in futures.items():
            exc = fut.exception()
            if exc is None:
                continue
            if not isinstance(exc, (EmkitError, requests.RequestException)):
                raise exc
            log.error("chunk %s failed: %s", cid, exc)
            failures[cid] = exc
    if failures:
        raise AssemblyError(failures)
    return Volume3D(src, buf)
