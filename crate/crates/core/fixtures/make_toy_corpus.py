"""Regenerate toy_corpus.jsonl and the goldens derived from it.

Run from this directory: python3 make_toy_corpus.py
The goldens are computed here, independently of the Rust code.
"""
import json
import random
from collections import Counter

SEED = 20240611
TOPICS = {
    "optics": "laser photon lens beam mirror prism diode fiber wavelength spectrum coherent pulse cavity".split(),
    "polymer": "polymer resin monomer chain catalyst curing ester fiber coating film adhesive viscosity blend".split(),
    "circuit": "circuit transistor gate voltage current chip diode signal logic clock register capacitor wafer".split(),
    "battery": "battery anode cathode lithium electrolyte cell charge voltage separator ion capacity film".split(),
}
EMERGING = {1986: ["graphene"], 1989: ["nanotube", "quantum"], 1991: ["perovskite"]}
COMMON = "the and of a method system device improved using for with in".split()
START, END = 1981, 1995


def doc_text(rng, topics, year):
    words = []
    pool = [w for t in topics for w in TOPICS[t]]
    for y, extra in EMERGING.items():
        if year >= y:
            pool += extra * 2
    for _ in range(rng.randint(25, 45)):
        r = rng.random()
        if r < 0.25:
            words.append(rng.choice(COMMON))
        else:
            words.append(rng.choice(pool))
    # Exercise normalization: capitals, edge punctuation, short tokens.
    if words:
        words[0] = words[0].capitalize()
        words[-1] = words[-1] + "."
    pos = rng.randrange(len(words))
    words[pos] = "(" + words[pos] + ")"
    words.insert(rng.randrange(len(words)), "x")
    return " ".join(words)


def generate():
    rng = random.Random(SEED)
    names = sorted(TOPICS)
    creators = [f"c{i}" for i in range(24)]
    home = {c: names[i % len(names)] for i, c in enumerate(creators)}
    lines = []
    n = 0
    for year in range(START, END + 1):
        for _ in range(13 if year % 3 else 14):
            team = rng.sample(creators, rng.randint(2, 4))
            topics = sorted({home[c] for c in team})
            split = "background" if rng.random() < 0.2 else "project"
            cats = list(topics)
            if rng.random() < 0.3:
                cats.append(rng.choice(names))
            rec = {
                "doc_id": f"d{n:03d}",
                "year": year,
                "text": doc_text(rng, topics, year),
                "creators": team,
                "categories": sorted(set(cats)),
                "outcome": round(rng.random() * 10, 3),
                "split": split,
            }
            lines.append(json.dumps(rec))
            n += 1
    # One record outside the span and one malformed line.
    lines.append(json.dumps({"doc_id": "early", "year": 1979, "text": "laser beam", "creators": ["c7"]}))
    lines.append('{"doc_id": "broken", "year": ')
    return lines


def normalize(text, min_len=2):
    out = []
    for w in text.split():
        i, j = 0, len(w)
        while i < j and not w[i].isalnum():
            i += 1
        while j > i and not w[j - 1].isalnum():
            j -= 1
        w = w[i:j].lower()
        if len(w) >= min_len:
            out.append(w)
    return out


def goldens(lines):
    docs = []
    for line in lines:
        try:
            docs.append(json.loads(line))
        except json.JSONDecodeError:
            pass
    counts = Counter(t for d in docs for t in normalize(d["text"]))
    vocab = sorted(((t, c) for t, c in counts.items() if c >= 5), key=lambda x: (-x[1], x[0]))
    with open("toy_vocab_min5.tsv", "w") as f:
        for i, (t, c) in enumerate(vocab):
            f.write(f"{i}\t{t}\t{c}\n")
    history = {}
    for d in docs:
        if "c7" in d.get("creators", []) and START <= d["year"] <= END:
            t = (d["year"] - START) // 5
            history.setdefault(str(t), []).append(d["doc_id"])
    first = docs[0]
    with open("toy_goldens.json", "w") as f:
        json.dump(
            {
                "valid_records": len(docs),
                "skipped_lines": len(lines) - len(docs),
                "in_span_records": sum(START <= d["year"] <= END for d in docs),
                "first_doc_tokens": normalize(first["text"]),
                "c7_docs_by_slice": history,
                "vocab_size_min5": len(vocab),
            },
            f,
            indent=1,
            sort_keys=True,
        )
        f.write("\n")


if __name__ == "__main__":
    lines = generate()
    with open("toy_corpus.jsonl", "w") as f:
        f.write("\n".join(lines) + "\n")
    goldens(lines)
