#!/usr/bin/env python3
"""Export an image folder as binary feature and label files.

Images are read in lexicographic order of their relative paths, resized to
224x224, and pushed through a convolutional network; the penultimate
fully-connected activations (4096 values per image for vgg19) become one
float32 row each. Output files use the `SAHF`/`SAHL` formats consumed by the
adahash trainer:

    SAHF: magic "SAHF" | u32 version=1 | u64 n | u64 d | n*d float32 LE
    SAHL: magic "SAHL" | u32 version=1 | u64 n | u32 c | per row u16 k + k u16

Features are exported unnormalized; the trainer computes cosine similarity
itself. Undecodable images are skipped with a warning and listed in an
exclusion log next to the feature file.

Pretrained weights are used when available (torchvision download or a local
state-dict via --weights PATH). Without network access, --weights none (or
the automatic fallback) initializes the network deterministically from
--seed; rows are then reproducible but not semantically meaningful, which is
sufficient for format-level pipelines and tests.
"""

from __future__ import annotations

import argparse
import csv
import struct
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from torchvision import models, transforms

IMAGE_EXTENSIONS = {".jpg", ".jpeg", ".png", ".bmp", ".gif", ".tiff", ".webp"}

PREPROCESS = transforms.Compose([
    transforms.Resize((224, 224)),
    transforms.ToTensor(),
    transforms.Normalize(mean=[0.485, 0.456, 0.406], std=[0.229, 0.224, 0.225]),
])

MODEL_LAYERS = {
    "vgg19": {"relu6": 4096, "relu7": 4096},
}


def list_images(root: Path) -> list[Path]:
    """Relative image paths under root, lexicographic (stable across machines)."""
    found = [
        p.relative_to(root)
        for p in root.rglob("*")
        if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS
    ]
    return sorted(found, key=lambda p: p.as_posix())


def build_model(name: str, layer: str, weights: str, seed: int, device: str):
    if name not in MODEL_LAYERS:
        raise SystemExit(f"extract: unsupported model '{name}' (have: {sorted(MODEL_LAYERS)})")
    if layer not in MODEL_LAYERS[name]:
        raise SystemExit(
            f"extract: unsupported layer '{layer}' for {name} (have: {sorted(MODEL_LAYERS[name])})"
        )
    torch.manual_seed(seed)
    if weights == "auto":
        try:
            net = models.vgg19(weights=models.VGG19_Weights.IMAGENET1K_V1)
        except Exception as exc:  # no network / no cache
            print(
                f"extract: warning: pretrained weights unavailable ({exc}); "
                f"falling back to a deterministic random initialization (seed={seed}). "
                "Features will be reproducible but not semantically meaningful.",
                file=sys.stderr,
            )
            net = models.vgg19(weights=None)
    elif weights == "none":
        net = models.vgg19(weights=None)
    else:
        net = models.vgg19(weights=None)
        state = torch.load(weights, map_location="cpu", weights_only=True)
        net.load_state_dict(state)
    # keep the classifier up to the requested activation: relu6 is the first
    # fully-connected relu, relu7 the second
    cut = 2 if layer == "relu6" else 5
    net.classifier = net.classifier[:cut]
    net.eval()
    return net.to(device)


def load_image(path: Path) -> torch.Tensor | None:
    try:
        with Image.open(path) as img:
            return PREPROCESS(img.convert("RGB"))
    except Exception as exc:
        print(f"extract: warning: skipping undecodable image {path}: {exc}", file=sys.stderr)
        return None


def extract_features(model, root: Path, rel_paths, batch_size: int, device: str):
    """Returns (feature rows, kept relative paths, excluded relative paths)."""
    rows = []
    kept = []
    excluded = []
    pending: list[torch.Tensor] = []

    def flush():
        if not pending:
            return
        batch = torch.stack(pending).to(device)
        with torch.no_grad():
            out = model(batch)
        rows.append(out.cpu().numpy().astype(np.float32))
        pending.clear()

    for rel in rel_paths:
        tensor = load_image(root / rel)
        if tensor is None:
            excluded.append(rel)
            continue
        pending.append(tensor)
        kept.append(rel)
        if len(pending) == batch_size:
            flush()
    flush()
    features = np.concatenate(rows, axis=0) if rows else np.zeros((0, 0), np.float32)
    return features, kept, excluded


def labels_from_folders(rel_paths) -> tuple[list[list[int]], list[str]]:
    """Class per image = its first path component; classes sorted by name."""
    names = sorted({p.parts[0] for p in rel_paths if len(p.parts) > 1})
    index = {name: i for i, name in enumerate(names)}
    rows = []
    for p in rel_paths:
        rows.append([index[p.parts[0]]] if len(p.parts) > 1 else [])
    return rows, names


def labels_from_csv(csv_path: Path, rel_paths) -> tuple[list[list[int]], list[str]]:
    """CSV rows: relative_path,label[;label...]; images absent from the file
    get an empty label set."""
    mapping: dict[str, list[str]] = {}
    with open(csv_path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#"):
                continue
            tags = [t.strip() for t in (row[1] if len(row) > 1 else "").split(";") if t.strip()]
            mapping[Path(row[0]).as_posix()] = tags
    names = sorted({t for tags in mapping.values() for t in tags})
    index = {name: i for i, name in enumerate(names)}
    rows = []
    for p in rel_paths:
        rows.append(sorted(index[t] for t in mapping.get(p.as_posix(), [])))
    return rows, names


def write_features_file(path: Path, features: np.ndarray) -> None:
    n, d = features.shape
    with open(path, "wb") as fh:
        fh.write(b"SAHF")
        fh.write(struct.pack("<IQQ", 1, n, d))
        fh.write(np.ascontiguousarray(features, dtype="<f4").tobytes())


def write_labels_file(path: Path, rows: list[list[int]], num_classes: int) -> None:
    with open(path, "wb") as fh:
        fh.write(b"SAHL")
        fh.write(struct.pack("<IQI", 1, len(rows), num_classes))
        for classes in rows:
            fh.write(struct.pack("<H", len(classes)))
            for c in classes:
                fh.write(struct.pack("<H", c))


def run(args) -> int:
    root = Path(args.images)
    if not root.is_dir():
        print(f"extract: error: image root {root} is not a directory", file=sys.stderr)
        return 2
    rel_paths = list_images(root)
    if not rel_paths:
        print(f"extract: error: no images under {root}", file=sys.stderr)
        return 2

    model = build_model(args.model, args.layer, args.weights, args.seed, args.device)
    features, kept, excluded = extract_features(model, root, rel_paths, args.batch, args.device)
    if not kept:
        print("extract: error: every image was undecodable", file=sys.stderr)
        return 2
    if not np.isfinite(features).all():
        print("extract: error: network produced non-finite activations", file=sys.stderr)
        return 3

    if args.labels == "folders":
        label_rows, class_names = labels_from_folders(kept)
    elif args.labels.startswith("csv:"):
        label_rows, class_names = labels_from_csv(Path(args.labels[4:]), kept)
    else:
        print(f"extract: error: --labels must be 'folders' or 'csv:PATH', got '{args.labels}'",
              file=sys.stderr)
        return 1

    write_features_file(Path(args.out_features), features)
    write_labels_file(Path(args.out_labels), label_rows, len(class_names))

    if excluded:
        log_path = Path(str(args.out_features) + ".excluded.txt")
        log_path.write_text("".join(f"{p.as_posix()}\n" for p in excluded))
        print(f"extract: {len(excluded)} image(s) excluded; see {log_path}", file=sys.stderr)

    print(f"extract: wrote {features.shape[0]} rows of {features.shape[1]} features "
          f"({len(class_names)} classes) to {args.out_features}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    parser.add_argument("--images", required=True, help="image folder root")
    parser.add_argument("--labels", default="folders",
                        help="'folders' (class per subfolder) or 'csv:PATH'")
    parser.add_argument("--out-features", required=True)
    parser.add_argument("--out-labels", required=True)
    parser.add_argument("--model", default="vgg19")
    parser.add_argument("--layer", default="relu7")
    parser.add_argument("--batch", type=int, default=32)
    parser.add_argument("--weights", default="auto",
                        help="'auto' (pretrained when reachable), 'none', or a state-dict path")
    parser.add_argument("--seed", type=int, default=0,
                        help="initialization seed for the no-weights fallback")
    parser.add_argument("--device", default="cpu", choices=["cpu", "cuda"])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return run(args)


if __name__ == "__main__":
    raise SystemExit(main())
