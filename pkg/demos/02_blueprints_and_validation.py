"""Blueprint bundles: parsing, static validation, and the transition graph.

A pipeline is declared as a directory of JSON documents (one experiment,
rule, or split per file, plus pipeline.json). This demo loads the two
shipped bundles, prints their control-flow graphs, and shows the
validator catching a broken variant of the parallel bundle.

Run from the repository root:  python demos/02_blueprints_and_validation.py
"""

import json
import shutil
import tempfile
from pathlib import Path

from abpipe.blueprints import parse_blueprints
from abpipe.model import transition_graph, validate
from abpipe.webstore import DEFAULT_CATALOG

ROOT = Path(__file__).resolve().parent.parent

for bundle in ("scenarios/sequential", "scenarios/parallel"):
    spec = parse_blueprints(ROOT / bundle)
    report = validate(spec, DEFAULT_CATALOG)
    print(f"=== {spec.name} ({bundle})")
    print(f"validation: {report}")
    graph = transition_graph(spec)
    print(f"nodes: {', '.join(graph.nodes)}")
    for edge in graph.edges:
        label = f"  [{edge.label}]" if edge.label else ""
        print(f"  {edge.src} -> {edge.dst}{label}  ({edge.kind})")
    print()

# --- breaking the bundle on purpose -----------------------------------------

with tempfile.TemporaryDirectory() as tmp:
    broken = Path(tmp) / "broken"
    shutil.copytree(ROOT / "scenarios/parallel", broken)
    split_file = broken / "splits" / "Population-split-purchases-prediction.json"
    record = json.loads(split_file.read_text())
    # both branches now claim class 0: the classes no longer partition users
    record["conditionalStatements"] = [
        {"op": "==", "value": 0},
        {"op": "==", "value": 0},
    ]
    split_file.write_text(json.dumps(record, indent=2))
    report = validate(parse_blueprints(broken), DEFAULT_CATALOG)
    print("=== deliberately broken split conditions")
    for violation in report:
        print(f"  {violation}")
