"""Print every aggregate CSV under a results directory as an aligned table.

    python scripts/summarize.py [results]
"""
import csv
import sys
from pathlib import Path


def show(path: Path) -> None:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        return
    cells = [[c if len(c) < 10 else f"{float(c):.4f}" if _is_float(c) else c for c in r] for r in rows]
    widths = [max(len(r[j]) for r in cells) for j in range(len(cells[0]))]
    print(f"\n== {path}")
    for r in cells:
        print("  ".join(c.ljust(w) for c, w in zip(r, widths)))


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def main():
    root = Path(sys.argv[1] if len(sys.argv) > 1 else "results")
    for p in sorted(root.rglob("*-aggregate.csv")):
        show(p)


if __name__ == "__main__":
    main()
