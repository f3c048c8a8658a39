#!/usr/bin/env python3
"""Synthesize a small face-anti-spoofing corpus for offline experiments.

Real samples are smooth shaded gradients (a stand-in for genuine skin);
spoof samples overlay periodic stripes and sensor-style noise on the same
base (a stand-in for moire / print texture). The generator writes:

  <out>/images/*.png + <out>/manifest.jsonl   annotation-pipeline input
  <out>/expert/{real,spoof}/*.png             expert-training corpus

Everything is deterministic for a fixed --seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from fastools.imaging import Raster, encode_png

SPOOF_TYPES = ["photo attack", "screen attack", "replay attack", "mask attack"]


def real_raster(rng: np.random.Generator, size: int) -> Raster:
    """A smooth diagonal ramp with a soft highlight blob."""
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    base = 60.0 + 130.0 * (x + y) / (2 * (size - 1))
    cx, cy = rng.uniform(0.25 * size, 0.75 * size, 2)
    blob = 40.0 * np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * (0.3 * size) ** 2))
    field = base + blob + rng.uniform(-4.0, 4.0)
    return Raster(np.clip(field, 0, 255).astype(np.uint8))


def spoof_raster(rng: np.random.Generator, size: int) -> Raster:
    """The real base plus periodic stripes and per-pixel noise."""
    base = real_raster(rng, size).data.astype(np.float64)
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    period = float(rng.uniform(3.0, 6.0))
    phase = float(rng.uniform(0.0, 2 * np.pi))
    stripes = 28.0 * np.sin(2 * np.pi * x / period + phase)
    noise = rng.normal(0.0, 22.0, (size, size))
    return Raster(np.clip(base + stripes + noise, 0, 255).astype(np.uint8))


def build_corpus(out_dir: Path, n: int, size: int, seed: int) -> dict:
    """Write the full corpus; returns a summary dict with the key paths."""
    rng = np.random.default_rng(seed)
    images = out_dir / "images"
    images.mkdir(parents=True, exist_ok=True)
    for split in ("real", "spoof"):
        (out_dir / "expert" / split).mkdir(parents=True, exist_ok=True)

    manifest = out_dir / "manifest.jsonl"
    n_spoof = 0
    with open(manifest, "w", encoding="utf-8") as fh:
        for i in range(n):
            sid = f"syn{i:04d}"
            spoof = i % 2 == 0
            img = spoof_raster(rng, size) if spoof else real_raster(rng, size)
            path = images / f"{sid}.png"
            encode_png(img, path)
            row = {"id": sid, "image": str(path), "label": "Spoof" if spoof else "Real"}
            if spoof:
                row["spoof_type"] = SPOOF_TYPES[(i // 2) % len(SPOOF_TYPES)]
                n_spoof += 1
            fh.write(json.dumps(row) + "\n")

    n_train = max(n, 16)
    for i in range(n_train):
        encode_png(real_raster(rng, size), out_dir / "expert" / "real" / f"r{i:04d}.png")
        encode_png(spoof_raster(rng, size), out_dir / "expert" / "spoof" / f"s{i:04d}.png")

    return {
        "manifest": str(manifest),
        "images": n,
        "spoof": n_spoof,
        "real": n - n_spoof,
        "expert_dir": str(out_dir / "expert"),
        "expert_images_per_class": n_train,
        "size": size,
        "seed": seed,
    }


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--n", type=int, default=50, help="manifest size (default 50)")
    parser.add_argument("--size", type=int, default=64, help="image side in pixels")
    parser.add_argument("--seed", type=int, default=20240817)
    args = parser.parse_args(argv)

    summary = build_corpus(Path(args.out), args.n, args.size, args.seed)
    json.dump(summary, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
