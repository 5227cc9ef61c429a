# SPDX-License-Identifier: Apache-2.0
"""Regenerates data/counting: 20 synthetic images with red squares to count."""

import json
import random
from pathlib import Path

from PIL import Image, ImageDraw

SIZE = 64
SQUARE = 6
TARGET = 4


def place(rng, boxes, x_range, y_range):
    while True:
        x = rng.randrange(*x_range)
        y = rng.randrange(*y_range)
        box = (x, y, x + SQUARE, y + SQUARE)
        if all(box[2] + 1 < b[0] or b[2] + 1 < box[0] or box[3] + 1 < b[1] or b[3] + 1 < box[1] for b in boxes):
            boxes.append(box)
            return box


def main():
    root = Path(__file__).resolve().parent.parent / "data" / "counting"
    (root / "images").mkdir(parents=True, exist_ok=True)
    rng = random.Random(20240521)
    half = SIZE // 2
    records = []
    for i in range(20):
        img = Image.new("RGB", (SIZE, SIZE), (255, 255, 255))
        draw = ImageDraw.Draw(img)
        boxes = []
        for _ in range(TARGET):
            draw.rectangle(place(rng, boxes, (1, half - SQUARE - 1), (1, half - SQUARE - 1)), fill=(220, 20, 20))
        distractors = 1 + i % 6
        for _ in range(distractors):
            if rng.random() < 0.5:
                box = place(rng, boxes, (half + 1, SIZE - SQUARE - 1), (1, SIZE - SQUARE - 1))
            else:
                box = place(rng, boxes, (1, half - SQUARE - 1), (half + 1, SIZE - SQUARE - 1))
            draw.rectangle(box, fill=(220, 20, 20))
        name = f"images/count-{i:02d}.png"
        img.save(root / name)
        records.append({
            "id": f"count-{i:02d}",
            "question": "How many red squares are in the top-left quadrant of the image?",
            "images": [name],
            "answer": str(TARGET),
            "metadata": {"distractors": distractors},
        })
    with open(root / "instances.jsonl", "w") as f:
        for r in records:
            f.write(json.dumps(r) + "\n")


if __name__ == "__main__":
    main()
