#!/usr/bin/env python3
"""Regenerates everything under fixtures/ from a fixed seed.

Images are 32x32 binary PGMs whose structure depends on organ, modality and
finding, so the toy model has something learnable. Cassettes stand in for the
remote text generator: each response is keyed by the SHA-256 of the exact
rendered prompt.
"""

import argparse
import hashlib
import json
import math
import random
from pathlib import Path

SIZE = 32
ORGANS = ["chest", "gastrointestinal", "musculoskeletal", "brain_neuro", "other"]
MODALITIES = ["xray", "ct", "mri", "ultrasound"]
MODALITY_WORDS = {"xray": "x-ray", "ct": "ct", "mri": "mri", "ultrasound": "ultrasound"}
ORGAN_WORDS = {
    "chest": "chest",
    "gastrointestinal": "abdomen",
    "musculoskeletal": "knee",
    "brain_neuro": "brain",
    "other": "neck",
}
FINDINGS = {
    "chest": ["nodule", "effusion"],
    "gastrointestinal": ["obstruction", "mass"],
    "musculoskeletal": ["fracture", "lesion"],
    "brain_neuro": ["hemorrhage", "lesion"],
    "other": ["mass", "lesion"],
}
QUADRANTS = ["upper left", "upper right", "lower left", "lower right"]
QUADRANT_CENTRES = {"upper left": (8, 8), "upper right": (23, 8), "lower left": (8, 23), "lower right": (23, 23)}

# Images per organ in the 100-image pool; the QA fixture has two records per image.
IMAGE_ORGAN_COUNTS = {"chest": 30, "gastrointestinal": 25, "musculoskeletal": 25, "brain_neuro": 15, "other": 5}

TABLE2 = {"chest": 15, "gastrointestinal": 28, "musculoskeletal": 39, "brain_neuro": 14}

CASE_TEMPLATE = """You are a radiologist writing teaching questions.
Image context ({context}).
Caption: {caption}
Write question-answer pairs about this case. Use blocks of the form
Q: <question>
A: <answer>
Type: open | short | mcq
Options: <a> | <b> | <c> | <d> (mcq only)
Separate blocks with a blank line.
"""

LITERATURE_TEMPLATE = """You are preparing review questions from the radiology literature.
Context: {context}
Source caption: {caption}
Write question-answer pairs grounded in the caption, one block per pair:
Q: <question>
A: <answer>
Type: open | short | mcq
"""

JUDGE_TEMPLATE = """You are grading an answer to a radiology question for factual correctness.
Question: {question}
Reference answer: {gold}
Model answer: {generated}
Reply with one line "VERDICT: correct" or "VERDICT: incorrect", then one line "RATIONALE: <reason>".
"""


def render(template, values):
    out = template
    for k, v in values.items():
        out = out.replace("{" + k + "}", v)
    return out


def sha(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def clamp(v):
    return max(0, min(255, int(round(v))))


def draw_image(rng, organ, modality, finding_quadrant):
    bg = {"xray": 20, "ct": 60, "mri": 40, "ultrasound": 30}[modality]
    fg = {"xray": 200, "ct": 170, "mri": 220, "ultrasound": 150}[modality]
    img = [[float(bg)] * SIZE for _ in range(SIZE)]
    for y in range(SIZE):
        for x in range(SIZE):
            v = bg
            if organ == "chest":
                body = 4 <= x <= 27 and 2 <= y <= 29
                lung = any(((x - cx) / 5.0) ** 2 + ((y - 15) / 10.0) ** 2 <= 1.0 for cx in (10, 21))
                if body:
                    v = fg * 0.8
                if lung:
                    v = bg + 15
            elif organ == "gastrointestinal":
                centre = 16 + 7 * math.sin(x / 4.0)
                if abs(y - centre) <= 2.5:
                    v = fg
                elif 3 <= x <= 28 and 3 <= y <= 28:
                    v = (bg + fg) * 0.4
            elif organ == "musculoskeletal":
                if abs(x - y) <= 2.5 or (x - 16) ** 2 + (y - 16) ** 2 <= 16:
                    v = fg
            elif organ == "brain_neuro":
                r = math.hypot(x - 15.5, y - 15.5)
                if 11.5 <= r <= 14:
                    v = fg
                elif r < 11.5:
                    v = (bg + fg) * 0.45
            else:
                if 10 <= x <= 21 and 6 <= y <= 25:
                    v = fg * 0.7
            img[y][x] = v
    if modality == "mri":
        img = [[255 - v for v in row] for row in img]
    if modality == "ultrasound":
        for y in range(SIZE):
            for x in range(SIZE):
                if abs(x - 15.5) > y * 0.6 + 2:
                    img[y][x] = 5
    if finding_quadrant:
        cx, cy = QUADRANT_CENTRES[finding_quadrant]
        for y in range(cy - 2, cy + 3):
            for x in range(cx - 2, cx + 3):
                img[y][x] = 250 if modality != "mri" else 250
    noise = {"xray": 6, "ct": 4, "mri": 5, "ultrasound": 18}[modality]
    return [[clamp(v + rng.gauss(0, noise)) for v in row] for row in img]


def write_pgm(path, img):
    header = f"P5\n{SIZE} {SIZE}\n255\n".encode("ascii")
    path.write_bytes(header + bytes(v for row in img for v in row))


def record(rid, image_path, organ, modality, kind, question, answer, options=None, source="native", tier="base"):
    r = {
        "id": rid,
        "image": {"path": image_path, "width": SIZE, "height": SIZE, "modality": modality, "organ": organ},
        "kind": kind,
    }
    if question:
        r["question"] = question
    r["answer"] = answer
    if options is not None:
        r["options"] = options
    r["source"] = source
    r["quality_tier"] = tier
    return r


def write_jsonl(path, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows), encoding="utf-8")


def finding_text(img):
    if img["quadrant"] is None:
        return "no abnormality"
    return f"a {img['finding']} in the {img['quadrant']} region"


def caption_for(img):
    m = MODALITY_WORDS[img["modality"]]
    o = ORGAN_WORDS[img["organ"]]
    if img["quadrant"] is None:
        return f"{m} of the {o} with no abnormality."
    return f"{m} of the {o} showing {finding_text(img)}."


def qa_for(img, slot):
    o = ORGAN_WORDS[img["organ"]]
    if slot == 0:
        return "open", "what abnormality is seen in this image?", finding_text(img), None
    if slot == 1:
        q = img["probe"]
        has = img["quadrant"] == q
        return "short", f"is there an abnormality in the {q} region?", "yes" if has else "no", None
    if slot == 2:
        opts = [MODALITY_WORDS[m] for m in MODALITIES]
        return "mcq", "which imaging modality was used?", MODALITY_WORDS[img["modality"]], opts
    return "open", "which body part is shown?", f"the {o}", None


def build_images(root, rng):
    organs = [o for o, n in IMAGE_ORGAN_COUNTS.items() for _ in range(n)]
    rng.shuffle(organs)
    images = []
    for i, organ in enumerate(organs):
        modality = MODALITIES[rng.randrange(len(MODALITIES))]
        quadrant = None if rng.random() < 0.35 else QUADRANTS[rng.randrange(4)]
        img = {
            "index": i,
            "organ": organ,
            "modality": modality,
            "quadrant": quadrant,
            "finding": rng.choice(FINDINGS[organ]),
            "probe": QUADRANTS[rng.randrange(4)] if rng.random() < 0.5 or quadrant is None else quadrant,
            "file": f"img_{i:03d}.pgm",
        }
        write_pgm(root / "images" / img["file"], draw_image(rng, organ, modality, quadrant))
        images.append(img)
    return images


def build_qa200(root, images):
    rows = []
    for img in images:
        for k in range(2):
            slot = (img["index"] * 2 + k) % 4
            kind, q, a, opts = qa_for(img, slot)
            rows.append(record(f"qa-{img['index']:03d}-{k}", f"../images/{img['file']}", img["organ"],
                               img["modality"], kind, q, a, opts))
    write_jsonl(root / "qa200" / "index.jsonl", rows)
    hist = {o: 0 for o in ORGANS}
    for r in rows:
        hist[r["image"]["organ"]] += 1
    (root / "qa200" / "organ_histogram.json").write_text(json.dumps(hist, indent=2) + "\n")
    return rows


def build_captions(root, images):
    rows = [
        record(f"cap-{img['index']:03d}", f"../images/{img['file']}", img["organ"], img["modality"], "caption", "",
               caption_for(img))
        for img in images
    ]
    write_jsonl(root / "captions" / "index.jsonl", rows)
    return rows


def qagen_response(img, caption, variant):
    o = ORGAN_WORDS[img["organ"]]
    m = MODALITY_WORDS[img["modality"]]
    blocks = []
    if variant == "no_pairs":
        return "I am unable to produce questions for this caption."
    if variant == "all_filtered":
        return "Q: what is the weather like today?\nA: sunny\nType: open\n"
    blocks.append(f"Q: what does the {m} of the {o} show?\nA: {finding_text(img)}\nType: open")
    blocks.append(f"Q: which body region is imaged in this {m}?\nA: the {o}\nType: open")
    blocks.append(
        f"Q: is the {o} study abnormal?\nA: {'no' if img['quadrant'] is None else 'yes'}\nType: short")
    opts = [MODALITY_WORDS[x] for x in MODALITIES]
    blocks.append(f"Q: which modality produced this {o} image?\nA: {m}\nOptions: {' | '.join(opts)}\nType: mcq")
    if variant == "truncated":
        blocks.append(f"Q: where is the {o} finding located?\nA:")
    return "\n\n".join(blocks) + "\n"


def build_captions10(root, images, captions):
    rows = []
    for cap in captions[:10]:
        r = dict(cap)
        r["image"] = dict(cap["image"])
        rows.append(r)
    write_jsonl(root / "captions10" / "index.jsonl", rows)
    variants = {2: "truncated", 5: "no_pairs", 8: "all_filtered"}
    cassette = {}
    for i, cap in enumerate(rows):
        img = images[i]
        context = f"modality: {cap['image']['modality']}; organ: {cap['image']['organ']}"
        for tmpl in (CASE_TEMPLATE, LITERATURE_TEMPLATE):
            prompt = render(tmpl, {"caption": cap["answer"], "context": context})
            cassette[sha(prompt)] = qagen_response(img, cap["answer"], variants.get(i, "plain"))
    write_jsonl(root / "captions10" / "cassette.jsonl",
                [{"prompt_hash": h, "text": t} for h, t in sorted(cassette.items())])


def build_judge20(root, rng):
    cases = [
        ("which body part is shown?", "the chest", "the chest"),
        ("which body part is shown?", "the knee", "knee"),
        ("what abnormality is seen in this image?", "a nodule in the upper left region", "a nodule in the upper left region"),
        ("what abnormality is seen in this image?", "a nodule in the upper left region", "a nodule in the lower right region"),
        ("what abnormality is seen in this image?", "no abnormality", "no abnormality"),
        ("what abnormality is seen in this image?", "no abnormality", "a mass in the upper right region"),
        ("what abnormality is seen in this image?", "a fracture in the lower left region", "fracture of the lower left region"),
        ("what abnormality is seen in this image?", "a hemorrhage in the upper right region", "a lesion in the upper right region"),
        ("which body part is shown?", "the abdomen", "the bowel"),
        ("which body part is shown?", "the brain", "the head"),
        ("what abnormality is seen in this image?", "an effusion in the lower left region", "pleural effusion, lower left"),
        ("what abnormality is seen in this image?", "an obstruction in the lower right region", "no abnormality"),
        ("which body part is shown?", "the neck", "the chest"),
        ("what abnormality is seen in this image?", "a mass in the upper left region", "a mass in the upper left region."),
        ("what abnormality is seen in this image?", "a lesion in the lower right region", "lesion lower right"),
        ("which body part is shown?", "the knee", "the knee"),
        ("what abnormality is seen in this image?", "a nodule in the upper right region", "a nodule"),
        ("what abnormality is seen in this image?", "no abnormality", "normal study"),
        ("which body part is shown?", "the chest", "the abdomen"),
        ("what abnormality is seen in this image?", "a fracture in the upper left region", "a fracture in the upper left region"),
    ]
    correct = {0, 1, 2, 4, 6, 8, 9, 10, 13, 14, 15, 17, 19}
    unparseable = {16}
    items = []
    cassette = {}
    for i, (q, gold, gen) in enumerate(cases):
        item = {"id": f"judge-{i:02d}", "question": q, "gold": gold, "generated": gen}
        items.append(item)
        prompt = render(JUDGE_TEMPLATE, {"question": q, "gold": gold, "generated": gen})
        if i in unparseable:
            text = "The answer is partially right but omits the location, so I cannot give a clean grade."
        elif i in correct:
            text = "VERDICT: correct\nRATIONALE: the model answer states the same finding as the reference."
        else:
            text = "VERDICT: incorrect\nRATIONALE: the model answer contradicts the reference."
        cassette[sha(prompt)] = text
    write_jsonl(root / "judge20" / "items.jsonl", items)
    write_jsonl(root / "judge20" / "cassette.jsonl",
                [{"prompt_hash": h, "text": t} for h, t in sorted(cassette.items())])


def build_table2(root, images):
    rows = []
    verdicts = []
    pools = {o: [img for img in images if img["organ"] == o] for o in TABLE2}
    for organ, n_correct in TABLE2.items():
        pool = pools[organ]
        for k in range(50):
            img = pool[k % len(pool)]
            rid = f"t2-{organ}-{k:02d}"
            rows.append(record(rid, f"../images/{img['file']}", organ, img["modality"], "open",
                               "what abnormality is seen in this image?", finding_text(img)))
            verdicts.append({"id": rid, "verdict": "correct" if k < n_correct else "incorrect"})
    write_jsonl(root / "table2" / "index.jsonl", rows)
    write_jsonl(root / "table2" / "verdicts.jsonl", verdicts)


def build_enrichment(root, images, rng):
    rows = []
    picked = [img for img in images if img["quadrant"] is not None][:40]
    for i, img in enumerate(picked):
        o = ORGAN_WORDS[img["organ"]]
        q = f"describe the key finding in this {MODALITY_WORDS[img['modality']]} of the {o}."
        rows.append(record(f"enr-{i:03d}", f"../images/{img['file']}", img["organ"], img["modality"], "open", q,
                           f"there is a {img['finding']} in the {img['quadrant']} region of the {o}."))
    write_jsonl(root / "enrichment" / "index.jsonl", rows)


def build_taxonomy(root):
    terms = [
        {"term": "nodule", "synonyms": ["nodules"]},
        {"term": "effusion", "synonyms": ["pleural effusion"]},
        {"term": "obstruction", "synonyms": ["blockage"]},
        {"term": "mass", "synonyms": ["tumour", "tumor"]},
        {"term": "fracture", "synonyms": ["break"]},
        {"term": "lesion", "synonyms": ["lesions"]},
        {"term": "hemorrhage", "synonyms": ["haemorrhage", "bleed"]},
    ]
    (root / "taxonomy.json").write_text(json.dumps({"terms": terms}, indent=2) + "\n")


def build_templates(root):
    t = root / "templates"
    t.mkdir(parents=True, exist_ok=True)
    (t / "case_based.txt").write_text(CASE_TEMPLATE)
    (t / "literature_based.txt").write_text(LITERATURE_TEMPLATE)
    (t / "judge.txt").write_text(JUDGE_TEMPLATE)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "fixtures"))
    ap.add_argument("--seed", type=int, default=20240611)
    args = ap.parse_args()
    root = Path(args.out)
    (root / "images").mkdir(parents=True, exist_ok=True)
    rng = random.Random(args.seed)
    images = build_images(root, rng)
    build_qa200(root, images)
    captions = build_captions(root, images)
    build_captions10(root, images, captions)
    build_judge20(root, rng)
    build_table2(root, images)
    build_enrichment(root, images, rng)
    build_taxonomy(root)
    build_templates(root)


if __name__ == "__main__":
    main()
