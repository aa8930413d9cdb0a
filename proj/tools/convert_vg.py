#!/usr/bin/env python3
"""Convert a Visual Genome release into the annotation format `crepe ingest` reads.

Inputs are the release's relationships.json and image_data.json. Output is a
JSON array with one record per image:

  {"image_id": "1", "width": 800, "height": 600,
   "objects": [{"label": "man", "x": 10, "y": 20, "w": 30, "h": 40}, ...],
   "relationships": [{"subject_index": 0, "object_index": 1, "predicate": "on"}, ...]}

With --labels, objects and predicates outside the given lists are dropped,
which is what the "vg150" vocabulary setting expects. With --images and
--ppm-dir, each kept image is re-encoded as binary PPM named <image_id>.ppm.
"""

import argparse
import json
import sys
from pathlib import Path


def normalize(label):
    return " ".join(label.strip().lower().split())


def object_label(obj):
    if "names" in obj and obj["names"]:
        return obj["names"][0]
    return obj.get("name", "")


def convert(relationships, image_data, labels=None):
    sizes = {img["image_id"]: (img["width"], img["height"]) for img in image_data}
    objects_ok = set(labels["objects"]) if labels else None
    predicates_ok = set(labels["predicates"]) if labels else None
    records = []
    for entry in relationships:
        image_id = entry["image_id"]
        if image_id not in sizes:
            continue
        index = {}
        objects = []
        rels = []

        def entity(obj):
            label = normalize(object_label(obj))
            if not label or (objects_ok is not None and label not in objects_ok):
                return None
            key = obj.get("object_id", id(obj))
            if key not in index:
                index[key] = len(objects)
                objects.append({"label": label, "x": obj["x"], "y": obj["y"],
                                "w": obj["w"], "h": obj["h"]})
            return index[key]

        for rel in entry.get("relationships", []):
            predicate = normalize(rel["predicate"])
            if not predicate or (predicates_ok is not None and predicate not in predicates_ok):
                continue
            s = entity(rel["subject"])
            o = entity(rel["object"])
            if s is None or o is None or s == o:
                continue
            rels.append({"subject_index": s, "object_index": o, "predicate": predicate})
        if not rels:
            continue
        width, height = sizes[image_id]
        records.append({"image_id": str(image_id), "width": width, "height": height,
                        "objects": objects, "relationships": rels})
    return records


def write_ppm(records, image_root, ppm_dir):
    from PIL import Image

    ppm_dir.mkdir(parents=True, exist_ok=True)
    for rec in records:
        src = image_root / f"{rec['image_id']}.jpg"
        if not src.exists():
            print(f"missing image {src}", file=sys.stderr)
            continue
        Image.open(src).convert("RGB").save(ppm_dir / f"{rec['image_id']}.ppm", format="PPM")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--relationships", type=Path, required=True)
    ap.add_argument("--image-data", type=Path, required=True)
    ap.add_argument("--labels", type=Path, help='JSON {"objects": [...], "predicates": [...]}')
    ap.add_argument("--images", type=Path, help="directory of <image_id>.jpg files")
    ap.add_argument("--ppm-dir", type=Path, help="where to write <image_id>.ppm files")
    ap.add_argument("--out", type=Path, required=True)
    args = ap.parse_args()

    labels = json.loads(args.labels.read_text()) if args.labels else None
    records = convert(json.loads(args.relationships.read_text()),
                      json.loads(args.image_data.read_text()), labels)
    args.out.write_text(json.dumps(records))
    print(f"wrote {len(records)} scenes to {args.out}")
    if args.images and args.ppm_dir:
        write_ppm(records, args.images, args.ppm_dir)


if __name__ == "__main__":
    main()
