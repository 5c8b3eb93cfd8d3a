#!/usr/bin/env python3
"""Dump the bundled task/plan corpus as SAS+ and plan files.

Usage: python scripts/write_corpus.py [output-dir]
"""

import sys
from pathlib import Path

from popflex.corpus import micro_corpus, scaling_task
from popflex.task import emit_plan, emit_sas


def main() -> None:
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "corpus")
    out.mkdir(parents=True, exist_ok=True)
    entries = dict(micro_corpus())
    entries["scaling300"] = scaling_task()
    for name, (task, plan) in sorted(entries.items()):
        (out / f"{name}.sas").write_text(emit_sas(task), encoding="utf-8")
        (out / f"{name}.plan").write_text(emit_plan(task, plan),
                                          encoding="utf-8")
        print(f"wrote {name}: {len(task.operators)} operators, "
              f"{len(plan.steps)} steps")


if __name__ == "__main__":
    main()
