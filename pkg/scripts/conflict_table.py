"""Worst-case bank conflicts of every layout for one tile shape."""

from __future__ import annotations

import argparse

from kittensim import layouts


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--rows", type=int, default=32)
    ap.add_argument("--cols", type=int, default=64)
    ap.add_argument("--elem-bytes", type=int, choices=(2, 4), default=2)
    args = ap.parse_args()
    print(f"{'layout':8s} {'max-way':>8s}")
    for mode in layouts.SwizzleMode:
        try:
            lay = layouts.SharedLayout(args.rows, args.cols, args.elem_bytes, mode)
        except layouts.UnsupportedTileError as exc:
            print(f"{mode.value:8s} {'n/a':>8s}  ({exc})")
            continue
        rep = layouts.analyze_conflicts(lay, layouts.TensorCoreSegments())
        print(f"{mode.value:8s} {rep.max_way:8d}")


if __name__ == "__main__":
    main()
