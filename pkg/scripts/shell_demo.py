#!/usr/bin/env python3
"""Synthetic closed-curve demo: shell volume vs noise control, end to end.

Serves each volume from a local stub, fetches it in z-slabs, runs Sobel ->
L_p magnitude -> mean + k*sigma binarization -> 6-connected graph ->
components, and writes mid-z slices of each stage as PGM for inspection.

    python scripts/shell_demo.py --out /tmp/shell_demo --p 2 --k 1.0
"""

import argparse
import json
from pathlib import Path

import numpy as np

from emkit import graph as cg
from emkit.gradient import binarize, gradient, magnitude_lp
from emkit.ingest import FetchPolicy, fetch_all, plan_chunks
from emkit.stubserver import StubCutoutServer
from emkit.volume import Extent3D, SliceImage, Volume3D, extract_slice, write_pgm


def make_volumes(n, radius, thickness, seed):
    rng = np.random.default_rng(seed)
    noise = np.clip(rng.normal(100, 12, (n, n, n)), 0, 255)
    z, y, x = np.indices((n, n, n))
    c = (n - 1) / 2
    r = np.sqrt((x - c) ** 2 + (y - c) ** 2 + (z - c) ** 2)
    shell = np.where(np.abs(r - radius) <= thickness / 2, 220.0, noise)
    e = Extent3D.from_shape(n, n, n)
    return {"shell": Volume3D(e, shell.astype(np.uint8)), "noise": Volume3D(e, noise.astype(np.uint8))}


def to_u8(plane):
    hi = plane.max()
    scaled = plane * (255.0 / hi) if hi > 0 else plane
    return np.round(scaled).astype(np.uint8)


def run_one(name, served, args, outdir):
    with StubCutoutServer(served) as srv:
        m = plan_chunks("kasthuri11", 0, served.extent, args.slab)
        v = fetch_all(m, policy=FetchPolicy(args.parallelism, 3, 0.01, 10), base=srv.base_url)
    mag = magnitude_lp(gradient(v, workers=args.parallelism), args.p)
    b = binarize(mag, args.k, "above")
    g = cg.build_from_binary_volume(b, args.connectivity)
    sizes = np.sort(cg.component_sizes(cg.connected_components(g)))[::-1]

    zmid = v.extent.z0 + v.extent.nz // 2
    e = v.extent
    write_pgm(extract_slice(v, zmid), outdir / f"{name}_original.pgm")
    mplane = mag.data[zmid - e.z0]
    write_pgm(SliceImage(e.nx, e.ny, to_u8(mplane).ravel()), outdir / f"{name}_magnitude.pgm")
    write_pgm(extract_slice(b.to_volume(255), zmid), outdir / f"{name}_binary.pgm")
    return {
        "chunks": len(m),
        "foreground": b.foreground_count,
        "vertices": g.vertex_count,
        "edge_slots": g.slot_count,
        "memory_footprint": g.memory_footprint(),
        "components": int(len(sizes)),
        "largest": sizes[:5].tolist(),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--out", type=Path, default=Path("shell_demo_out"))
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--radius", type=float, default=19.5)
    ap.add_argument("--thickness", type=float, default=3.0)
    ap.add_argument("--p", type=float, default=2.0)
    ap.add_argument("--k", type=float, default=1.0)
    ap.add_argument("--connectivity", type=int, default=6, choices=(6, 18, 26))
    ap.add_argument("--slab", type=int, default=16)
    ap.add_argument("--parallelism", type=int, default=4)
    ap.add_argument("--seed", type=int, default=11)
    args = ap.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    vols = make_volumes(args.size, args.radius, args.thickness, args.seed)
    report = {name: run_one(name, v, args, args.out) for name, v in vols.items()}
    print(json.dumps(report, indent=2))


if __name__ == "__main__":
    main()
