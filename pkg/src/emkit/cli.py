"""``emkit`` command line: plan -> fetch -> convert -> sobel -> binarize -> graph.

Every subcommand is a thin wrapper over the library call of the same name;
files are written atomically.  Diagnostics go to stderr, and the summary
commands (``stats``, ``graph-stats``, ``dot``, ``components``) print a single
JSON object on stdout.

Exit status: 0 success, 1 operational error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import re
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from emkit import gradient as grad
from emkit import graph as cg
from emkit import ingest
from emkit import volume as vol
from emkit.errors import EmkitError
from emkit.fsutil import atomic_write

log = logging.getLogger("emkit")


@dataclass
class PipelineConfig:
    command: str
    input: Path | None = None
    output: Path | None = None
    manifest: Path | None = None
    extent: vol.Extent3D | None = None
    token: str = "kasthuri11"
    res: int = 0
    slab: int = ingest.DEFAULT_SLAB_DEPTH
    template: str = ingest.DEFAULT_TEMPLATE
    base: str = "http://localhost"
    format: str = "raw"
    p: float = 2.0
    k: float = 1.0
    polarity: str = "above"
    connectivity: int = 6
    parallelism: int = 4
    max_retries: int = 3
    backoff: float = 0.5
    timeout: float = 30.0
    workers: int = 1
    z: int | None = None
    u: int | None = None
    v: int | None = None
    verbose: bool = False


# ------------------------------------------------------------ value parsers


def _extent(text):
    parts = re.split(r"[,\s]+", text.strip())
    try:
        nums = [int(p) for p in parts]
        if len(nums) != 6:
            raise ValueError
        return vol.Extent3D(*nums)
    except (ValueError, EmkitError) as exc:
        detail = f": {exc}" if str(exc) else ""
        raise argparse.ArgumentTypeError(
            f"expected x0,x1,y0,y1,z0,z1 (non-empty, half-open){detail}"
        ) from None


def _bounded_int(lo):
    def parse(text):
        try:
            n = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
        if n < lo:
            raise argparse.ArgumentTypeError(f"must be >= {lo}, got {n}")
        return n

    return parse


def _positive_float(text):
    try:
        x = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not (x > 0 and math.isfinite(x)):
        raise argparse.ArgumentTypeError(f"must be a positive finite number, got {text}")
    return x


def _finite_float(text):
    try:
        x = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not math.isfinite(x):
        raise argparse.ArgumentTypeError(f"must be finite, got {text}")
    return x


def _norm_order(text):
    if text.strip().lower() in ("inf", "infinity", "max"):
        return math.inf
    try:
        return grad.check_norm_order(text)
    except EmkitError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


# ------------------------------------------------------------------ parser


def build_parser():
    parser = argparse.ArgumentParser(prog="emkit", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def cmd(name, help):
        return sub.add_parser(name, help=help, description=help)

    def io(p, in_help="input file", out_help="output file", out_required=True):
        p.add_argument("--in", dest="input", type=Path, required=True, help=in_help)
        p.add_argument("--out", dest="output", type=Path, required=out_required, help=out_help)

    p = cmd("plan", "partition an extent into z-slab cutouts and write a TSV manifest")
    p.add_argument("--token", default="kasthuri11")
    p.add_argument("--res", type=_bounded_int(0), default=0)
    p.add_argument("--extent", type=_extent, required=True, help="x0,x1,y0,y1,z0,z1")
    p.add_argument("--slab", type=_bounded_int(1), default=ingest.DEFAULT_SLAB_DEPTH)
    p.add_argument("--out", dest="output", type=Path, required=True)

    p = cmd("fetch", "download every manifest chunk and assemble one raw volume")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", dest="output", type=Path, required=True)
    p.add_argument("--base", default="http://localhost", help="server root substituted for {base}")
    p.add_argument("--template", default=ingest.DEFAULT_TEMPLATE)
    p.add_argument("--format", default="raw", help="value for the {format} placeholder")
    p.add_argument("--parallelism", type=_bounded_int(1), default=4)
    p.add_argument("--max-retries", dest="max_retries", type=_bounded_int(0), default=3)
    p.add_argument("--backoff", type=_positive_float, default=0.5, help="backoff base, seconds")
    p.add_argument("--timeout", type=_positive_float, default=30.0, help="per request, seconds")

    p = cmd("convert", "raw volume <-> PGM slice stack (direction from the input type)")
    io(p, "a .raw volume or a directory of slice_NNNN.pgm", "directory or .raw path")
    p.add_argument("--extent", type=_extent, help="extent of a PGM stack (default: inferred)")

    p = cmd("sobel", "3D Sobel gradient (gx, gy, gz) of a raw u8 volume")
    io(p)
    p.add_argument("--workers", type=_bounded_int(1), default=1)

    p = cmd("magnitude", "L_p magnitude of a gradient file")
    io(p)
    p.add_argument("--p", type=_norm_order, default=2.0, help="norm order >= 1 or inf")

    p = cmd("binarize", "threshold a magnitude (or gradient) volume at mean + k*sigma")
    io(p)
    p.add_argument("--p", type=_norm_order, default=2.0, help="norm order if the input is a gradient")
    p.add_argument("--k", type=_finite_float, default=1.0)
    p.add_argument("--polarity", choices=["above", "below"], default="above")

    p = cmd("graph-build", "compact graph over the foreground voxels of a binary volume")
    io(p)
    p.add_argument("--connectivity", type=int, choices=cg.CONNECTIVITIES, default=6)

    p = cmd("graph-stats", "vertex/edge counts and memory footprint of a graph file")
    p.add_argument("--in", dest="input", type=Path, required=True)

    p = cmd("dot", "number of common neighbours of two vertices")
    p.add_argument("--in", dest="input", type=Path, required=True)
    p.add_argument("--u", type=int, required=True)
    p.add_argument("--v", type=int, required=True)

    p = cmd("components", "connected components of a graph")
    io(p, "graph file", "optional TSV of vertex_id<TAB>component", out_required=False)

    p = cmd("slice-export", "write one z-slice of a raw u8 volume as PGM")
    io(p)
    p.add_argument("--z", type=int, required=True)

    p = cmd("stats", "mean, population sigma, min and max of a raw volume")
    p.add_argument("--in", dest="input", type=Path, required=True)

    return parser


def parse_args(argv=None):
    ns = build_parser().parse_args(argv)
    known = {f.name for f in fields(PipelineConfig)}
    return PipelineConfig(**{k: v for k, v in vars(ns).items() if k in known})


# ---------------------------------------------------------------- commands


def _emit(obj):
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")
    sys.stdout.flush()


def _plan(c):
    m = ingest.plan_chunks(c.token, c.res, c.extent, c.slab)
    ingest.write_manifest(m, c.output)
    log.info("wrote %d chunks to %s", len(m), c.output)


def _fetch(c):
    m = ingest.read_manifest(c.manifest)
    policy = ingest.FetchPolicy(c.parallelism, c.max_retries, c.backoff, c.timeout)
    try:
        v = ingest.fetch_all(m, c.template, policy, base=c.base, format=c.format)
    except ingest.AssemblyError as exc:
        for cid, cause in exc.failures.items():
            log.error("chunk %s: %s", cid, cause)
        raise
    vol.write_raw(v, c.output)
    log.info("assembled %d chunks into %s", len(m), c.output)


def _infer_stack_extent(directory):
    zs = sorted(int(m.group(1)) for p in Path(directory).iterdir()
                if (m := re.fullmatch(r"slice_(\d+)\.pgm", p.name)))
    if not zs:
        raise vol.MissingFileError(f"no slice_NNNN.pgm files in {directory}")
    first = vol.read_pgm(Path(directory) / vol.slice_filename(zs[0]))
    return vol.Extent3D(0, first.width, 0, first.height, zs[0], zs[-1] + 1)


def _convert(c):
    if c.input.is_dir():
        extent = c.extent or _infer_stack_extent(c.input)
        vol.write_raw(vol.read_pgm_stack(c.input, extent), c.output)
    else:
        v = vol.read_raw(c.input)
        if not isinstance(v, vol.Volume3D):
            raise vol.FormatError("only u8 volumes export to PGM", c.input)
        paths = vol.write_pgm_stack(v, c.output)
        log.info("wrote %d slices to %s", len(paths), c.output)


def _read_u8(path):
    v = vol.read_raw(path)
    if not isinstance(v, vol.Volume3D):
        raise vol.FormatError("expected a u8 volume", path)
    return v


def _sobel(c):
    grad.save_gradient(grad.gradient(_read_u8(c.input), workers=c.workers), c.output)


def _magnitude(c):
    vol.write_raw(grad.magnitude_lp(grad.load_gradient(c.input), c.p), c.output)


def _binarize(c):
    _, meta, _ = vol.read_raw_array(c.input)
    if meta.get("components", 1) == 3:
        m = grad.magnitude_lp(grad.load_gradient(c.input), c.p)
    else:
        m = vol.read_raw(c.input)
    b = grad.binarize(m, c.k, c.polarity)
    vol.write_raw(b.to_volume(), c.output)
    log.info("%d of %d voxels foreground", b.foreground_count, len(b.bits))


def _graph_build(c):
    b = grad.BinaryVolume.from_volume(_read_u8(c.input))
    g = cg.build_from_binary_volume(b, c.connectivity)
    cg.save(g, c.output)
    log.info("graph: %d vertices, %d edge slots", g.vertex_count, g.slot_count)


def _graph_stats(c):
    g = cg.load(c.input)
    deg = g.degrees()
    _emit({
        "vertices": g.vertex_count,
        "edge_slots": g.slot_count,
        "edges": g.edge_count,
        "memory_footprint": g.memory_footprint(),
        "max_degree": int(deg.max()) if len(deg) else 0,
        "mean_degree": float(deg.mean()) if len(deg) else 0.0,
    })


def _dot(c):
    g = cg.load(c.input)
    _emit({"u": c.u, "v": c.v, "dot": g.dot_product(c.u, c.v)})


def _components(c):
    g = cg.load(c.input)
    labels = cg.connected_components(g)
    sizes = cg.component_sizes(labels)
    if c.output is not None:
        with atomic_write(c.output, "w") as fh:
            for vid, lab in zip(g.vertex_ids.tolist(), labels.tolist()):
                fh.write(f"{vid}\t{lab}\n")
    _emit({
        "components": int(len(sizes)),
        "largest": int(sizes.max()) if len(sizes) else 0,
        "sizes": np.sort(sizes)[::-1][:10].tolist(),
    })


def _slice_export(c):
    vol.write_pgm(vol.extract_slice(_read_u8(c.input), c.z), c.output)


def _stats(c):
    _emit(vol.stats(vol.read_raw(c.input)).as_dict())


COMMANDS = {
    "plan": _plan,
    "fetch": _fetch,
    "convert": _convert,
    "sobel": _sobel,
    "magnitude": _magnitude,
    "binarize": _binarize,
    "graph-build": _graph_build,
    "graph-stats": _graph_stats,
    "dot": _dot,
    "components": _components,
    "slice-export": _slice_export,
    "stats": _stats,
}


def run(config):
    try:
        COMMANDS[config.command](config)
    except (EmkitError, OSError) as exc:
        log.error("%s: %s", config.command, exc)
        return 1
    return 0


def main(argv=None):
    try:
        config = parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    logging.basicConfig(
        level=logging.DEBUG if config.verbose else logging.INFO,
        format="emkit: %(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
