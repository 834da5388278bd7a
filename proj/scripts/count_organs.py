#!/usr/bin/env python3
"""Counts organ tags in an index.jsonl, independently of the C++ reader."""

import collections
import json
import sys


def main(path):
    counts = collections.Counter()
    with open(path, encoding="utf-8") as f:
        for line in f:
            if line.strip():
                counts[json.loads(line)["image"]["organ"]] += 1
    for organ in ("chest", "gastrointestinal", "musculoskeletal", "brain_neuro", "other"):
        print(f"{organ},{counts.get(organ, 0)}")


if __name__ == "__main__":
    main(sys.argv[1])
