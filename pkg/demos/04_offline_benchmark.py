"""Evaluate a small synthetic benchmark end to end through the harness.

Answers are planted in a local corpus and a retrieval-following model reads
them back, so the run is offline and should score perfectly. Outputs land in
a temporary directory whose path is printed.
"""

import json
import tempfile
from pathlib import Path

from agree.harness import RunConfig, run_eval

root = Path(tempfile.mkdtemp(prefix="agree-demo-"))
relations = [("R1", "founded by"), ("R2", "located in"), ("R3", "genre")]

catalog = [f"{rid}\t{label}\t\t" for rid, label in relations]
catalog += [f"A{i}\tanswer entity {i}\t\t" for i in range(10)]
catalog += [f"K{i}\tknown entity {i}\t\t" for i in range(3)]
train = [f"K{i}\t{relations[i][0]}\tA{i}" for i in range(3)]
test, corpus = [], []
for i in range(12):
    rid, label = relations[i % 3]
    catalog.append(f"E{i}\tnew entity {i}\t\temerging entity")
    test.append(f"E{i}\t{rid}\tA{(i * 7) % 10}")
    corpus.append({"source_id": f"d{i}", "title": f"new entity {i}", "text": f"The {label} of new entity {i} is answer entity {(i * 7) % 10}."})

(root / "catalog.tsv").write_text("\n".join(catalog) + "\n")
(root / "train.tsv").write_text("\n".join(train) + "\n")
(root / "test.tsv").write_text("\n".join(test) + "\n")
(root / "corpus.jsonl").write_text("\n".join(json.dumps(d) for d in corpus) + "\n")
(root / "run.ini").write_text("""[data]
train = train.tsv
test = test.tsv
catalog = catalog.tsv

[llm]
mode = follow

[basic]
mode = corpus
path = corpus.jsonl

[advanced]
mode = recorded

[run]
concurrency = 4
cache_dir = cache
out_dir = run
offline = true
""")

report = run_eval(RunConfig.from_file(root / "run.ini"))
print((root / "run" / "report.txt").read_text())
print("outputs in", root / "run")
