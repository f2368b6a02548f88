"""Synthetic desk-scale corpora for tests, demos, and smoke training.

Each record is a simple solid (box, cylinder, or sphere) with three aligned
views: a surface point cloud, a sketch-like quantized token sequence encoding
its profile and extent, and a templated description whose wording tracks the
geometry (shape word, proportions, size words).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .corpus import quantize_coord

SHAPES = ("box", "cylinder", "sphere")

_SIZE_WORDS = ("tiny", "small", "medium", "large", "huge", "giant", "slender", "broad")
_FINISH_WORDS = ("polished", "cast", "machined", "forged", "stamped", "milled", "extruded", "turned")

SHAPE_ADJECTIVE = {"box": "rectangular", "cylinder": "cylindrical", "sphere": "spherical"}


def _box_points(rng: np.random.Generator, dims: np.ndarray, n: int) -> np.ndarray:
    # Sample faces proportionally to area.
    areas = np.array([dims[1] * dims[2], dims[0] * dims[2], dims[0] * dims[1]]) * 2
    face_axis = rng.choice(3, size=n, p=areas / areas.sum())
    signs = rng.choice([-0.5, 0.5], size=n)
    pts = rng.uniform(-0.5, 0.5, size=(n, 3))
    pts[np.arange(n), face_axis] = signs
    return pts * dims


def _cylinder_points(rng: np.random.Generator, radius: float, height: float, n: int) -> np.ndarray:
    side_area = 2 * np.pi * radius * height
    cap_area = 2 * np.pi * radius**2
    on_side = rng.random(n) < side_area / (side_area + cap_area)
    theta = rng.uniform(0, 2 * np.pi, n)
    r = np.where(on_side, radius, radius * np.sqrt(rng.random(n)))
    z = np.where(on_side, rng.uniform(-0.5, 0.5, n) * height, rng.choice([-0.5, 0.5], n) * height)
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


def _sphere_points(rng: np.random.Generator, radius: float, n: int) -> np.ndarray:
    v = rng.normal(size=(n, 3))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    return v * radius


def _profile_tokens(rng: np.random.Generator, shape: str, params: dict) -> list[list[int]]:
    """Sketch-like token pairs: profile corner/arc coordinates then extent."""
    q = lambda v: quantize_coord(float(np.clip(v, 0.0, 1.0)))
    tokens: list[list[int]] = []
    if shape == "box":
        w, d = params["w"], params["d"]
        corners = [(0.5 - w / 2, 0.5 - d / 2), (0.5 + w / 2, 0.5 - d / 2),
                   (0.5 + w / 2, 0.5 + d / 2), (0.5 - w / 2, 0.5 + d / 2)]
        tokens += [[q(x), q(y)] for x, y in corners]
    elif shape == "cylinder":
        r = params["r"]
        tokens += [[q(0.5), q(0.5)], [q(0.5 + r), q(0.5)]]
    else:  # sphere: arc through three points
        r = params["r"]
        tokens += [[q(0.5 - r), q(0.5)], [q(0.5), q(0.5 + r)], [q(0.5 + r), q(0.5)]]
    tokens.append([q(params.get("h", 0.5)), q(params.get("h", 0.5))])
    extra = rng.integers(0, 4)
    for _ in range(extra):  # vary lengths so padding paths are exercised
        tokens.append([int(rng.integers(0, 256)), int(rng.integers(0, 256))])
    return tokens


def _describe(rng: np.random.Generator, shape: str, params: dict, serial: int) -> str:
    adj = SHAPE_ADJECTIVE[shape]
    size = _SIZE_WORDS[serial % len(_SIZE_WORDS)]
    finish = _FINISH_WORDS[(serial // len(_SIZE_WORDS)) % len(_FINISH_WORDS)]
    if shape == "box":
        aspect = "flat" if params["h"] < 0.3 else ("tall" if params["h"] > 0.7 else "even")
        detail = f"{aspect} profile part number {serial}"
    elif shape == "cylinder":
        aspect = "disc like" if params["h"] < 0.3 else ("rod like" if params["h"] > 0.7 else "stout")
        detail = f"{aspect} barrel part number {serial}"
    else:
        detail = f"round shell part number {serial}"
    return f"a {size} {finish} {adj} base with a {detail}"


def generate_corpus(
    out_dir: str | Path,
    n: int = 64,
    seed: int = 0,
    source_points: int = 2048,
    splits: tuple[float, float] = (1.0, 0.0),
    collide_fraction: float = 0.25,
) -> Path:
    """Write a synthetic manifest + point files; returns the manifest path.

    ``splits`` gives the (train, val) fractions; the remainder is test.

    A ``collide_fraction`` of the records are sequence twins: they copy the
    previous record's token sequence verbatim while their solid gets a very
    different extent. This mimics quantization collisions, where distinct
    geometry shares one command sequence, so the token stream alone cannot
    fully rank the gallery but point clouds can.
    """
    out = Path(out_dir)
    (out / "points").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    manifest_path = out / "manifest.jsonl"
    prev_shape, prev_params, prev_tokens = None, None, None
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for i in range(n):
            shape = SHAPES[i % len(SHAPES)]
            params = {
                "w": float(rng.uniform(0.2, 0.9)),
                "d": float(rng.uniform(0.2, 0.9)),
                "h": float(rng.uniform(0.1, 0.9)),
                "r": float(rng.uniform(0.1, 0.45)),
            }
            make_twin = (
                collide_fraction > 0
                and prev_tokens is not None
                and prev_shape != "sphere"  # sphere clouds normalize identically
                and (i % max(round(1 / collide_fraction), 1)) == 1
            )
            if make_twin:
                shape = prev_shape
                params = dict(prev_params)
                # flip the extent so the point clouds are clearly different
                params["h"] = 0.85 if prev_params["h"] < 0.5 else 0.15
                tokens = [list(t) for t in prev_tokens]
            else:
                tokens = _profile_tokens(rng, shape, params)

            if shape == "box":
                pts = _box_points(rng, np.array([params["w"], params["d"], params["h"]]), source_points)
            elif shape == "cylinder":
                pts = _cylinder_points(rng, params["r"], params["h"], source_points)
            else:
                pts = _sphere_points(rng, params["r"], source_points)
            rel = f"points/{i:04d}.f32"
            pts.astype("<f4").tofile(out / rel)

            u = i / max(n, 1)
            split = "train" if u < splits[0] else ("val" if u < splits[0] + splits[1] else "test")
            record = {
                "id": f"model-{i:04d}",
                "split": split,
                "text": _describe(rng, shape, params, i),
                "tokens": tokens,
                "points": rel,
            }
            fh.write(json.dumps(record) + "\n")
            prev_shape, prev_params, prev_tokens = shape, params, tokens
    return manifest_path


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="Generate a synthetic demo corpus.")
    parser.add_argument("--out", required=True)
    parser.add_argument("--n", type=int, default=64)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--train-frac", type=float, default=0.8)
    parser.add_argument("--val-frac", type=float, default=0.1)
    args = parser.parse_args(argv)
    path = generate_corpus(args.out, args.n, args.seed, splits=(args.train_frac, args.val_frac))
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
