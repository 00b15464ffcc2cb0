#!/usr/bin/env python3
"""Generate crates/core/fixtures/calibration_corpus.jsonl.

Each document carries one definition sentence whose component tags,
summed per domain, reproduce TABLE below exactly. Run from the repo root.
"""
import json
import re
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
LEXICON = ROOT / "crates/core/data/lexicon.json"
OUT = ROOT / "crates/core/fixtures/calibration_corpus.jsonl"

DOMAINS = ["building", "architecture", "urban", "manufacturing"]

# component -> counts per domain, lexicon order
TABLE = {
    "2D/3D data": [14, 12, 4, 1],
    "Real-time data": [3, 1, 4, 10],
    "Data modeling": [6, 6, 5, 1],
    "Simulation models": [3, 2, 1, 10],
    "Data analytics and AI/ML models": [2, 2, 1, 9],
    "Data Catalogue": [2, 2, 2, 1],
    "Cloud platform and architecture": [1, 1, 2, 6],
    "HPC": [0, 0, 1, 5],
    "IoT and sensor network": [3, 1, 12, 6],
    "API": [1, 2, 2, 3],
    "Visualization": [6, 5, 4, 1],
    "Dashboards": [2, 2, 3, 1],
    "Data validation": [3, 4, 4, 1],
    "Security protocols": [1, 1, 2, 5],
    "Policy": [2, 1, 14, 0],
    "User management and administration": [2, 2, 1, 1],
}

CLAUSES = {
    "2D/3D data": [
        "stores 3D geometry of every room and corridor",
        "links BIM objects to maintenance records",
        "keeps point clouds captured during laser surveys",
        "holds 2D floor plans next to the facade layout",
        "maintains CAD models of structural elements",
        "organises spatial data about parcels and streets",
        "records geometric detail for each component",
    ],
    "Real-time data": [
        "streams real-time readings to operators",
        "stays synchronized with the physical plant",
        "ingests live data from the shop floor",
        "updates in real time as conditions change",
        "receives streaming data from field equipment",
    ],
    "Data modeling": [
        "follows an ontology for asset classes",
        "uses a shared data model for all subsystems",
        "adopts a schema describing spatial relationships between rooms",
        "relies on a semantic model of occupied spaces",
        "supports digitization of legacy drawings",
        "complies with open data standards for exchange",
    ],
    "Simulation models": [
        "runs simulations of energy demand",
        "couples finite element analysis with load histories",
        "executes physics-based forecasts of tool wear",
        "embeds multi-physics solvers for thermal behaviour",
        "simulates traffic flows during peak hours",
    ],
    "Data analytics and AI/ML models": [
        "applies machine learning to detect faults",
        "uses deep learning for defect recognition",
        "performs analytics on production logs",
        "trains neural networks on historical records",
        "uses artificial intelligence to schedule tasks",
    ],
    "Data Catalogue": [
        "indexes assets in a searchable catalogue",
        "organises metadata for every component",
        "connects entities through a knowledge graph",
        "supports data discovery across departments",
    ],
    "Cloud platform and architecture": [
        "runs on a cloud platform shared by suppliers",
        "relies on edge computing near the machines",
        "is deployed as loosely coupled microservices",
        "uses cloud services for long term storage",
        "scales through cloud computing resources",
    ],
    "HPC": [
        "depends on high-performance computing for large runs",
        "uses GPU acceleration for heavy workloads",
        "executes on a supercomputer overnight",
        "exploits parallel computing across many cores",
    ],
    "IoT and sensor network": [
        "collects measurements from sensors installed on site",
        "connects IoT devices across neighbourhoods",
        "gathers telemetry from street equipment",
        "reads smart meters in every household",
        "drives actuators that adjust ventilation rates",
        "integrates the internet of things into public services",
    ],
    "API": [
        "exposes an API to partner systems",
        "offers web services for third parties",
        "connects tools through a common middleware layer",
        "publishes APIs for external developers",
        "routes requests through a data gateway",
    ],
    "Visualization": [
        "visualizes conditions for facility managers",
        "renders scenes for design reviews",
        "offers immersive walkthroughs for clients",
        "supports virtual reality inspections",
        "projects augmented reality overlays on site",
    ],
    "Dashboards": [
        "presents key indicators on a dashboard",
        "provides a web application for residents",
        "offers a user interface for operators",
        "shows alerts in a control panel",
    ],
    "Data validation": [
        "validates incoming records before storage",
        "tracks data quality across sources",
        "verifies measurements against design values",
        "calibrates its parameters with field observations",
        "applies quality control to survey results",
    ],
    "Security protocols": [
        "protects records with strong encryption",
        "enforces cybersecurity rules for remote access",
        "secures communication between connected devices",
        "preserves the privacy of occupants",
        "detects intrusions on the network",
    ],
    "Policy": [
        "informs policy decisions for planners",
        "supports regulation of land use",
        "reflects ethical concerns raised by citizens",
        "supports governance of public infrastructure",
        "guides legislation on emissions targets",
        "helps officials test zoning policies",
        "tracks compliance with municipal regulations",
    ],
    "User management and administration": [
        "manages user access for each stakeholder",
        "controls permissions for different teams",
        "handles user management for tenants",
        "applies access control to sensitive views",
        "supports authorization of maintenance staff",
    ],
}

HEADS = [
    "virtual counterpart",
    "digital counterpart",
    "virtual replica",
    "digital replica",
    "living representation",
    "virtual image",
    "digital mirror",
    "persistent digital copy",
    "connected virtual duplicate",
]

OBJECTS = {
    "building": [
        "an office building", "a hospital building", "a residential tower",
        "a school campus", "a commercial complex", "a university library",
        "an airport terminal", "a sports arena", "a hotel",
    ],
    "architecture": [
        "an architectural design", "a heritage structure", "a museum project",
        "a pavilion under design", "a historic church", "a timber facade",
        "a concert hall concept", "a housing prototype",
    ],
    "urban": [
        "a city district", "a metropolitan region", "an urban neighbourhood",
        "a municipal road network", "a coastal city", "a public transport corridor",
        "a river waterfront", "a historic town centre", "a growing suburb",
    ],
    "manufacturing": [
        "a production line", "a machining cell", "an assembly plant",
        "a robotic workcell", "a packaging line", "a turbine factory",
        "a foundry", "a battery plant",
    ],
}

INTROS = {
    "building": "This paper studies the operation of {obj}.",
    "architecture": "This paper reports on the design of {obj}.",
    "urban": "This paper examines planning for {obj}.",
    "manufacturing": "This paper investigates the operation of {obj}.",
}


def compile_lexicon():
    comps = json.loads(LEXICON.read_text())
    out = []
    for c in comps:
        phrases = []
        for p in c["patterns"]:
            words = [w for w in re.split(r"[^0-9a-z*]+", p.lower()) if w and w != "*"]
            if words:
                phrases.append(words)
        out.append((c["name"], phrases))
    return out


def tag(sentence, lexicon):
    words = [w for w in re.split(r"[^0-9a-z]+", sentence.lower()) if w]

    def hit(phrase):
        for i in range(len(words) - len(phrase) + 1):
            ok = True
            for w, p in zip(words[i:], phrase):
                if p.endswith("*"):
                    ok = w.startswith(p.rstrip("*"))
                else:
                    ok = w == p
                if not ok:
                    break
            if ok:
                return True
        return False

    return [name for name, phrases in lexicon if any(hit(p) for p in phrases)]


def pairs_for(counts):
    """Greedy pairing of the two largest remaining components."""
    remaining = dict(counts)
    order = list(TABLE)
    groups = []
    while any(remaining.values()):
        live = sorted((c for c in order if remaining[c] > 0),
                      key=lambda c: (-remaining[c], order.index(c)))
        pick = live[:2]
        for c in pick:
            remaining[c] -= 1
        groups.append(sorted(pick, key=order.index))
    return groups


def main():
    lexicon = compile_lexicon()
    names = [n for n, _ in lexicon]
    if names != list(TABLE):
        sys.exit(f"lexicon order differs from TABLE: {names}")
    usage = {c: 0 for c in TABLE}
    combos = set()
    docs = []
    n = 0
    for j, domain in enumerate(DOMAINS):
        counts = {c: TABLE[c][j] for c in TABLE}
        for i, group in enumerate(pairs_for(counts)):
            # a repeated clause combination would be a fuzzy duplicate
            for shift in range(len(CLAUSES[group[-1]])):
                clauses = []
                for k, c in enumerate(group):
                    bank = CLAUSES[c]
                    extra = shift if k == len(group) - 1 else 0
                    clauses.append(bank[(usage[c] + extra) % len(bank)])
                if tuple(clauses) not in combos:
                    break
            else:
                sys.exit(f"no unused clause combination for {group}")
            combos.add(tuple(clauses))
            for c in group:
                usage[c] += 1
            objs = OBJECTS[domain]
            obj = objs[i % len(objs)]
            head = HEADS[(n * 5 + j) % len(HEADS)]
            sentence = f"Digital twin is a {head} of {obj} that {' and '.join(clauses)}."
            got = tag(sentence, lexicon)
            if got != group:
                sys.exit(f"tag mismatch for {sentence!r}: {got} != {group}")
            intro = INTROS[domain].format(obj=obj)
            n += 1
            docs.append({
                "id": f"cal-{n:03d}",
                "title": f"Digital twin for {obj.split(' ', 1)[1]}",
                "year": 2015 + n % 10,
                "venue": "Calibration",
                "subject": domain,
                "domain": domain,
                "source": "article",
                "text": f"{intro} {sentence}",
            })
    seen = set()
    for d in docs:
        if d["text"] in seen:
            sys.exit(f"duplicate text {d['text']!r}")
        seen.add(d["text"])
    OUT.parent.mkdir(parents=True, exist_ok=True)
    with OUT.open("w") as f:
        for d in docs:
            f.write(json.dumps(d) + "\n")
    print(f"wrote {len(docs)} documents to {OUT.relative_to(ROOT)}")


if __name__ == "__main__":
    main()
