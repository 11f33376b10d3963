#!/usr/bin/env python3
"""Writes the 60-tweet synthetic CrisisMMD-style fixture and its expected counts.

Counts are derived here from the construction (agreement filter, merge,
multi-image tweets to train, floor(0.15 n) per class to dev and to test), not
by running the C++ pipeline.
"""
import argparse
import json
import math
import random
from pathlib import Path

RAW_COLUMNS = [
    "tweet_id", "image_id", "event_name", "text_info", "text_info_conf", "image_info", "image_info_conf",
    "text_human", "text_human_conf", "image_human", "image_human_conf", "image_damage", "image_damage_conf",
    "tweet_text", "image_url", "image_path",
]

WORDS = {
    "injured_or_dead_people": ["injured", "victims", "hospital", "casualties", "wounded"],
    "missing_or_found_people": ["missing", "found", "search", "family", "located"],
    "affected_individuals": ["displaced", "homeless", "evacuees", "stranded", "survivors"],
    "rescue_volunteering_or_donation_effort": ["donate", "volunteers", "rescue", "relief", "supplies"],
    "infrastructure_and_utility_damage": ["bridge", "collapsed", "power", "roads", "outage"],
    "vehicle_damage": ["cars", "trucks", "flipped", "crushed", "vehicles"],
    "other_relevant_information": ["forecast", "update", "warning", "advisory", "landfall"],
    "not_humanitarian": ["birthday", "pizza", "concert", "selfie", "weekend"],
}
MERGE = {
    "injured_or_dead_people": "affected_individuals",
    "missing_or_found_people": "affected_individuals",
    "vehicle_damage": "infrastructure_and_utility_damage",
}
HUMANITARIAN = ["affected_individuals", "rescue_volunteering_or_donation_effort",
                "infrastructure_and_utility_damage", "other_relevant_information", "not_humanitarian"]
INFORMATIVE = ["informative", "not_informative"]
COLORS = {
    "affected_individuals": (200, 60, 60),
    "rescue_volunteering_or_donation_effort": (60, 200, 60),
    "infrastructure_and_utility_damage": (200, 160, 40),
    "other_relevant_information": (150, 60, 200),
    "not_humanitarian": (60, 90, 210),
}
EVENTS = ["hurricane_harvey", "mexico_earthquake", "srilanka_floods"]


def write_ppm(path, color, rng, size=24):
    pixels = bytearray()
    for _ in range(size * size):
        for c in color:
            pixels.append(max(0, min(255, c + rng.randint(-30, 30))))
    path.write_bytes(b"P6\n%d %d\n255\n" % (size, size) + bytes(pixels))


def build(rng):
    raw_human = list(WORDS)
    rows = []
    for t in range(60):
        tweet_id = "9%05d" % (t * 37 % 1000 + t)
        text_h = raw_human[t % len(raw_human)] if t % 4 else "not_humanitarian"
        n_images = 3 if t in (0, 11) else 2 if t in (5, 17, 23, 40) else 1
        words = rng.sample(WORDS[text_h], 5) + rng.sample(["today", "near", "city", "#news", "2017", "via"], 2)
        rng.shuffle(words)
        text = " ".join(words).capitalize() + " http://t.co/x%d" % t
        for k in range(n_images):
            image_h = text_h
            if t in (7, 19, 33, 50) and k == 0:  # annotators disagree
                image_h = "not_humanitarian" if text_h != "not_humanitarian" else "rescue_volunteering_or_donation_effort"
            if t == 45:
                image_h = text_h = "dont_know_or_cant_judge"
            text_i = "dont_know_or_cant_judge" if text_h == "dont_know_or_cant_judge" else (
                "not_informative" if text_h == "not_humanitarian" else "informative")
            image_i = "dont_know_or_cant_judge" if image_h == "dont_know_or_cant_judge" else (
                "not_informative" if image_h == "not_humanitarian" else "informative")
            image_id = "%s_%d" % (tweet_id, k)
            rows.append({
                "tweet_id": tweet_id, "image_id": image_id, "event_name": EVENTS[t % 3],
                "text_info": text_i, "text_info_conf": "1.0", "image_info": image_i, "image_info_conf": "1.0",
                "text_human": text_h, "text_human_conf": "1.0", "image_human": image_h, "image_human_conf": "1.0",
                "image_damage": "", "image_damage_conf": "", "tweet_text": text,
                "image_url": "http://example.invalid/%s.jpg" % image_id, "image_path": "images/%s.ppm" % image_id,
            })
    return rows


def expected_counts(rows, task):
    text_col, image_col = ("text_info", "image_info") if task == "informative" else ("text_human", "image_human")
    classes = INFORMATIVE if task == "informative" else HUMANITARIAN
    kept = [r for r in rows if r[text_col] == r[image_col] and r[text_col] != "dont_know_or_cant_judge"]
    groups = {}
    for r in kept:
        label = MERGE.get(r[text_col], r[text_col]) if task == "humanitarian" else r[text_col]
        groups.setdefault(r["tweet_id"], []).append(label)
    counts = {}
    for c in classes:
        members = [g for g in groups.values() if g[0] == c]
        single = sum(1 for g in members if len(g) == 1)
        n = len(members)
        dev = test = math.floor(0.15 * n + 1e-9) if single >= 3 else 0
        if dev + test > single:
            dev = min(dev, single // 2)
            test = min(test, single - dev)
        train_tweets = n - dev - test
        train_images = sum(len(g) for g in members) - dev - test
        counts[c] = {"train_text": train_tweets, "train_image": train_images, "dev": dev, "test": test}
    return counts


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("out", type=Path)
    args = parser.parse_args()
    rng = random.Random(7)
    rows = build(rng)
    (args.out / "images").mkdir(parents=True, exist_ok=True)
    for r in rows:
        label = MERGE.get(r["image_human"], r["image_human"])
        color = COLORS.get(label, (128, 128, 128))
        write_ppm(args.out / r["image_path"], color, rng)
    with open(args.out / "annotations.tsv", "w", encoding="utf-8") as f:
        f.write("\t".join(RAW_COLUMNS) + "\n")
        for r in rows:
            f.write("\t".join(r[c] for c in RAW_COLUMNS) + "\n")
    golden = {task: expected_counts(rows, task) for task in ("informative", "humanitarian")}
    (args.out / "expected_counts.json").write_text(json.dumps(golden, indent=2) + "\n")


if __name__ == "__main__":
    main()
