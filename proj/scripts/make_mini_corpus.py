#!/usr/bin/env python3
"""Generates the bundled 500-course mini corpus (deterministic)."""
import json
import re
import sys
from collections import Counter
from pathlib import Path

import numpy as np

SEED = 20240611
DIM = 32
N_DOCS = 500
VOCAB_WORDS = 400

SKILLS = [
    ("Python", "Data Analyst", ["pandas", "scripts", "functions", "modules"], ["reports", "dashboards", "datasets"]),
    ("Customer Service", "Front Desk Employee", ["complaints", "empathy", "guests", "service"], ["reception", "check-in", "hotel"]),
    ("Project Management", "Construction Manager", ["planning", "milestones", "stakeholders", "scope"], ["site", "contractors", "building"]),
    ("Excel", "Accountant", ["spreadsheets", "formulas", "pivot", "charts"], ["ledgers", "balance", "audit"]),
    ("Public Speaking", "Sales Representative", ["presentations", "audience", "confidence", "voice"], ["pitch", "clients", "deals"]),
    ("Leadership", "Nurse", ["teams", "motivation", "delegation", "vision"], ["ward", "patients", "care"]),
    ("Negotiation", "Purchasing Agent", ["bargaining", "agreements", "leverage", "concessions"], ["suppliers", "procurement", "contracts"]),
    ("Time Management", "Teacher", ["priorities", "schedules", "deadlines", "focus"], ["classroom", "lessons", "grading"]),
    ("Java", "Software Developer", ["classes", "objects", "jvm", "spring"], ["backend", "microservices", "apis"]),
    ("Copywriting", "Marketing Specialist", ["headlines", "persuasion", "tone", "drafts"], ["campaigns", "brands", "ads"]),
    ("First Aid", "Lifeguard", ["bandages", "cpr", "injuries", "emergencies"], ["pool", "drowning", "beach"]),
    ("Bookkeeping", "Office Manager", ["invoices", "receipts", "records", "payroll"], ["office", "vendors", "petty"]),
    ("Photography", "Real Estate Agent", ["exposure", "lenses", "lighting", "composition"], ["listings", "properties", "interiors"]),
    ("Conflict Resolution", "Police Officer", ["mediation", "disputes", "de-escalation", "listening"], ["patrol", "community", "incidents"]),
    ("SQL", "Business Analyst", ["queries", "joins", "tables", "databases"], ["requirements", "kpis", "stakeholder"]),
    ("Graphic Design", "Social Media Manager", ["typography", "layouts", "color", "illustrator"], ["posts", "instagram", "engagement"]),
    ("Food Safety", "Cook", ["hygiene", "haccp", "contamination", "storage"], ["kitchen", "restaurant", "recipes"]),
    ("Forklift Operation", "Warehouse Worker", ["pallets", "loads", "lifting", "inspection"], ["warehouse", "inventory", "shipping"]),
    ("Spanish", "Flight Attendant", ["grammar", "vocabulary", "pronunciation", "conversation"], ["passengers", "cabin", "airline"]),
    ("Risk Management", "Bank Teller", ["compliance", "controls", "exposure", "assessment"], ["branch", "cash", "fraud"]),
]

# Courses sharing a skill word but in an unrelated context (grade 0).
WRONG_CONTEXT = {
    "Python": "Python Snake Care for Reptile Keepers",
    "Java": "Java Coffee Roasting at Home",
    "Excel": "Excel at Marathon Running",
    "Spanish": "Spanish Guitar for Beginners",
    "Photography": "Wildlife Photography Safari Stories",
}

GENERIC_TITLES = [
    "{s} Fundamentals",
    "The Complete {s} Bootcamp",
    "Mastering {s}",
    "{s} Made Simple",
    "Introduction to {s}",
    "{s} Essentials",
    "Practical {s} Skills",
    "{s} Masterclass",
    "Advanced {s} Techniques",
    "{s} Step by Step",
    "{s}",
    "Learn {s} Fast",
]
SPECIFIC_TITLES = [
    "{s} for {o}s",
    "{s} Skills for Every {o}",
    "{s} on the Job: A Guide for {o}s",
    "Applied {s} for {o} Roles",
    "{s} in Practice for {o}s",
    "The {o}'s Guide to {s}",
]
FILLER_TOPICS = [
    ("Yoga", ["breathing", "poses", "flexibility"]),
    ("Watercolor Painting", ["brushes", "pigments", "landscapes"]),
    ("Chess Strategy", ["openings", "endgames", "tactics"]),
    ("Personal Finance", ["budgeting", "savings", "investing"]),
    ("Gardening", ["soil", "seeds", "pruning"]),
    ("Music Theory", ["scales", "chords", "rhythm"]),
    ("Creative Writing", ["plot", "characters", "dialogue"]),
    ("Mindfulness", ["meditation", "stress", "awareness"]),
    ("Home Baking", ["dough", "ovens", "pastry"]),
    ("Astronomy", ["telescopes", "planets", "stars"]),
]
PROVIDERS = ["udemy", "udemy_business", "edx", "goodhabitz"]
LEVELS = ["Beginner", "Intermediate", "Advanced", "All Levels"]
SENTENCES = [
    "In this course you will learn {a} and {b} through hands-on exercises.",
    "We cover {a}, {b} and much more with real-world examples.",
    "By the end you will be confident applying {a} to everyday {b} tasks.",
    "Each module combines short videos on {a} with quizzes about {b}.",
    "Our instructor has twenty years of experience with {a} and {b}.",
]
BOILERPLATE = [
    "Enroll now and get lifetime access.",
    "30 day money back guarantee!",
    "Rated 4.7 by over 10,000 students.",
    "Join thousands of happy learners &amp; start today.",
]


def sentence(rng, words):
    a, b = rng.choice(words, size=2, replace=False)
    return SENTENCES[rng.integers(len(SENTENCES))].format(a=a, b=b)


def html_description(rng, words, extra):
    body = [sentence(rng, words) for _ in range(3)]
    if extra:
        body.insert(1, sentence(rng, extra))
    parts = ["<p>" + body[0] + "</p>", "<ul>"]
    parts += ["<li><b>" + s + "</b></li>" for s in body[1:]]
    parts.append("</ul>")
    parts.append("<p>" + BOILERPLATE[rng.integers(len(BOILERPLATE))] + "&nbsp;</p>")
    return "\n".join(parts)


def summary(title, words, extra, rng, style):
    w = list(words) + list(extra)
    a, b = rng.choice(w, size=2, replace=False)
    if style == "longt5":
        return f"{title} teaches {a} and {b}. Learners practice with short exercises."
    return f"A course about {a} and {b} that builds practical skills step by step."


def main(out_dir: Path):
    rng = np.random.default_rng(SEED)
    centroids = rng.normal(size=(len(SKILLS) + len(FILLER_TOPICS), DIM))
    occ_dirs = rng.normal(size=(len(SKILLS), DIM))

    docs, grades, vectors = [], {}, {}

    def add(title, words, extra, topic, specific, rating_bias=0.0):
        doc_id = f"c{len(docs):04d}"
        d = {
            "id": doc_id,
            "provider": PROVIDERS[rng.integers(len(PROVIDERS))],
            "title": title,
            "description": html_description(rng, words, extra),
            "summaries": {"longt5": summary(title, words, extra, rng, "longt5")},
            "level": LEVELS[rng.integers(len(LEVELS))],
            "rating": round(float(np.clip(rng.normal(4.3 + rating_bias, 0.3), 1.0, 5.0)), 1),
            "url": f"https://courses.example.org/{doc_id}",
        }
        if rng.random() < 0.8:
            d["summaries"]["vicuna"] = summary(title, words, extra, rng, "vicuna")
        docs.append(d)
        v = centroids[topic] + 0.25 * rng.normal(size=DIM)
        if specific is not None:
            v = v + 0.5 * occ_dirs[specific]
        vectors[doc_id] = v
        return doc_id

    for s_idx, (skill, occ, words, occ_words) in enumerate(SKILLS):
        qid = f"q{s_idx + 1:02d}"
        grades[qid] = {}
        for t in SPECIFIC_TITLES:
            doc = add(t.format(s=skill, o=occ), words, occ_words, s_idx, s_idx)
            grades[qid][doc] = 2
        for t in GENERIC_TITLES:
            doc = add(t.format(s=skill), words, [], s_idx, None)
            grades[qid][doc] = 1
        if skill in WRONG_CONTEXT:
            f = rng.integers(len(FILLER_TOPICS))
            doc = add(WRONG_CONTEXT[skill], FILLER_TOPICS[f][1] + [skill.lower()], [], len(SKILLS) + f, None)
            grades[qid][doc] = 0
    while len(docs) < N_DOCS:
        f = int(rng.integers(len(FILLER_TOPICS)))
        name, words = FILLER_TOPICS[f]
        t = GENERIC_TITLES[rng.integers(len(GENERIC_TITLES))].format(s=name)
        add(t, words + ["skills", "practice"], [], len(SKILLS) + f, None)

    queries = []
    qvecs = {}
    for s_idx, (skill, occ, words, occ_words) in enumerate(SKILLS):
        qid = f"q{s_idx + 1:02d}"
        q = {
            "id": qid,
            "skill": skill,
            "occupation": occ,
            "skill_description": f"The ability to use {skill.lower()} including {words[0]} and {words[1]}",
        }
        queries.append(q)
        qvecs[f"{skill} for {occ}"] = centroids[s_idx] + 0.5 * occ_dirs[s_idx] + 0.1 * rng.normal(size=DIM)

    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "courses.jsonl", "w") as f:
        for d in docs:
            f.write(json.dumps(d) + "\n")
    with open(out_dir / "queries.jsonl", "w") as f:
        for q in queries:
            f.write(json.dumps(q) + "\n")
    with open(out_dir / "qrels.txt", "w") as f:
        for qid in sorted(grades):
            for doc in sorted(grades[qid]):
                f.write(f"{qid} 0 {doc} {grades[qid][doc]}\n")

    def write_vectors(path, rows):
        with open(path, "w") as f:
            f.write(f"dim={DIM} count={len(rows)}\n")
            for key in sorted(rows):
                f.write(key + "\t" + " ".join(f"{x:.6f}" for x in rows[key]) + "\n")

    write_vectors(out_dir / "doc_embeddings.tsv", vectors)
    write_vectors(out_dir / "query_embeddings.tsv", qvecs)

    counts = Counter()
    for d in docs:
        text = d["title"] + " " + re.sub(r"<[^>]+>", " ", d["description"])
        for s in d["summaries"].values():
            text += " " + s
        counts.update(text.lower().split())
    for q in queries:
        counts.update(f"query: {q['skill']} for {q['occupation']}. {q['skill_description']} document: title: description:".lower().split())
    words = [w for w, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))][:VOCAB_WORDS]
    with open(out_dir / "vocab.txt", "w") as f:
        f.write("\n".join(words) + "\n")


if __name__ == "__main__":
    main(Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).resolve().parent.parent / "data" / "mini")
