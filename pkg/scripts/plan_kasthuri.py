#!/usr/bin/env python3
"""Chunk plans over the Kasthuri11 frame (10752 x 13312, z = 1..1850).

Prints chunk count and per-chunk payload size for a few slab depths and
writes the manifest for ``--slab`` so it can be fed to ``emkit fetch`` or a
line-oriented batch runner.

    python scripts/plan_kasthuri.py --slab 16 --out kasthuri11.tsv
"""

import argparse
from pathlib import Path

from emkit.ingest import DEFAULT_TEMPLATE, cutout_url, plan_chunks, write_manifest
from emkit.volume import Extent3D

KASTHURI11 = Extent3D(0, 10752, 0, 13312, 1, 1850)


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--slab", type=int, default=16)
    ap.add_argument("--res", type=int, default=1)
    ap.add_argument("--out", type=Path)
    ap.add_argument("--base", default="http://openconnecto.me")
    args = ap.parse_args()

    print(f"{'slab':>6} {'chunks':>7} {'GiB/chunk':>10}")
    for slab in sorted({1, 8, 16, 32, 64, 128, args.slab}):
        m = plan_chunks("kasthuri11", args.res, KASTHURI11, slab)
        gib = m.entries[0].extent.volume_count / 2**30
        print(f"{slab:>6} {len(m):>7} {gib:>10.2f}")

    m = plan_chunks("kasthuri11", args.res, KASTHURI11, args.slab)
    print("first cutout:", cutout_url(m.entries[0], DEFAULT_TEMPLATE, base=args.base))
    if args.out:
        write_manifest(m, args.out)
        print(f"wrote {len(m)} lines to {args.out}")


if __name__ == "__main__":
    main()
