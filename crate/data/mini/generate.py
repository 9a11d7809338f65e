"""Generates the bundled mini-corpus (documents, topics, qrels, folds).

The output is fixed by the seed; rerunning rewrites identical files.

    python3 data/mini/generate.py
"""

import json
import random
from pathlib import Path

SEED = 20190604
OUT = Path(__file__).resolve().parent

THEMES = [
    ("401", "river flood warning", ["river", "flood", "warning", "levee", "rainfall", "evacuation"]),
    ("402", "solar panel subsidies", ["solar", "panel", "subsidies", "rooftop", "grid", "tariff"]),
    ("403", "measles vaccination campaign", ["measles", "vaccination", "campaign", "clinic", "outbreak", "dose"]),
    ("404", "bridge collapse inquiry", ["bridge", "collapse", "inquiry", "engineers", "girder", "inspection"]),
    ("405", "coral reef bleaching", ["coral", "reef", "bleaching", "ocean", "temperature", "divers"]),
    ("406", "teacher strike negotiations", ["teacher", "strike", "negotiations", "union", "salary", "schools"]),
    ("407", "satellite launch delay", ["satellite", "launch", "delay", "rocket", "orbit", "countdown"]),
    ("408", "wildfire smoke health", ["wildfire", "smoke", "health", "asthma", "masks", "haze"]),
    ("409", "cargo ship grounding", ["cargo", "ship", "grounding", "harbor", "tugboats", "containers"]),
    ("410", "museum art theft", ["museum", "art", "theft", "painting", "gallery", "thieves"]),
]

FILLER = [
    "The city council met on Tuesday to discuss the annual budget.",
    "Local markets reported steady trading through the afternoon.",
    "Commuters faced delays after a signal fault near the central station.",
    "A new bakery opened on the high street last week.",
    "The weather office expects mild temperatures for the weekend.",
    "Several residents attended a public meeting about parking rules.",
    "The football club announced a new coach for the coming season.",
    "Volunteers cleaned the park before the summer festival.",
    "Officials said the report would be published next month.",
    "The mayor thanked staff for their work during the holidays.",
    "Ticket sales for the concert exceeded expectations.",
    "A spokesperson declined to comment on the matter.",
    "The library extended its opening hours on weekdays.",
    "Farmers expect a good harvest after a dry spring.",
    "The regional airport handled a record number of passengers.",
    "Students presented science projects at the town hall.",
    "Road works on the northern bypass will continue until autumn.",
    "The hospital opened a new wing for outpatient care.",
]

FOCUS = [
    "Authorities issued a {a} {b} {c} as {d} and {e} dominated the day.",
    "The {a} {b} {c} prompted talk of {d} across the region.",
    "Experts said the {a} {b} {c} was linked to {d} and {e}.",
    "Reporters confirmed the {a} {b} {c} after reviewing {d} records.",
]

PASSING = [
    "Nobody mentioned the {x} during the meeting.",
    "An unrelated {x} story ran on page twelve.",
    "The word {x} appeared in a crossword clue.",
]


def sentences(rng, n):
    return rng.sample(FILLER, n)


DECOY = [
    "A {a} of a different kind: the {b} in the film was staged.",
    "Critics called the novel's {a} and {b} scenes overwrought.",
]


def focus_sentence(rng, terms, partial):
    a, b, c = terms[:3]
    d, e = rng.sample(terms[3:], 2)
    if partial:
        a, b, c = rng.sample([a, b, c], 2) + [rng.choice(terms[3:])]
    return rng.choice(FOCUS).format(a=a, b=b, c=c, d=d, e=e)


def capitalize(s):
    return s[0].upper() + s[1:]


def main():
    rng = random.Random(SEED)
    docs = []
    qrels = []
    for topic, _title, terms in THEMES:
        for i in range(6):
            body = sentences(rng, rng.randint(3, 8))
            pos = rng.randint(0, len(body))
            body.insert(pos, focus_sentence(rng, terms, partial=i >= 3))
            if i % 2 == 0:
                body.insert(rng.randint(0, len(body)), capitalize(f"{rng.choice(terms[3:])} was also discussed."))
            doc_id = f"MINI-{topic}-R{i}"
            docs.append((doc_id, body))
            qrels.append((topic, doc_id, 2 if i < 2 else 1))
        for i in range(6):
            body = sentences(rng, rng.randint(6, 12))
            for term in rng.sample(terms[:3], 2):
                body.insert(rng.randint(0, len(body)), rng.choice(PASSING).format(x=term))
            for _ in range(rng.randint(1, 3)):
                body.insert(rng.randint(0, len(body)), rng.choice(PASSING).format(x=rng.choice(terms[:3])))
            doc_id = f"MINI-{topic}-P{i}"
            docs.append((doc_id, body))
            if i < 3:
                qrels.append((topic, doc_id, 0))
        for i in range(2):
            body = sentences(rng, rng.randint(2, 5))
            a, b = rng.sample(terms[:3], 2)
            body.insert(rng.randint(0, len(body)), rng.choice(DECOY).format(a=a, b=b))
            docs.append((f"MINI-{topic}-X{i}", body))
    for i in range(60):
        body = sentences(rng, rng.randint(2, 9))
        if i % 4 == 0:
            _, _, terms = rng.choice(THEMES)
            body.append(rng.choice(PASSING).format(x=rng.choice(terms)))
        docs.append((f"MINI-BG-{i:03d}", body))
    rng.shuffle(docs)

    with open(OUT / "corpus.trec", "w") as f:
        for doc_id, body in docs:
            f.write("<DOC>\n")
            f.write(f"<DOCNO> {doc_id} </DOCNO>\n")
            f.write(f"<HEADLINE>{body[0]}</HEADLINE>\n")
            f.write("<TEXT>\n<P>" + " ".join(body) + "</P>\n</TEXT>\n")
            f.write("</DOC>\n")

    with open(OUT / "topics.txt", "w") as f:
        for topic, title, _ in THEMES:
            f.write(f"<top>\n<num> Number: {topic} </num>\n<title> {title} </title>\n</top>\n\n")

    with open(OUT / "qrels.txt", "w") as f:
        for topic, doc_id, grade in sorted(qrels):
            f.write(f"{topic} 0 {doc_id} {grade}\n")

    ids = [t for t, _, _ in THEMES]
    (OUT / "folds2.json").write_text(json.dumps([ids[:5], ids[5:]]) + "\n")
    (OUT / "folds5.json").write_text(json.dumps([ids[i : i + 2] for i in range(0, 10, 2)]) + "\n")


if __name__ == "__main__":
    main()
