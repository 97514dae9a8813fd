"""Rebuild the bundled ARFF corpus from the Orange 3.10 and keel-ds distributions.

Usage: python3 convert.py ORANGE_DATASETS_DIR KEEL_RAW_DIR
"""
import os
import sys


def write_arff(path, relation, names, domains, rows):
    with open(path, "w") as out:
        out.write(f"@relation {relation}\n\n")
        for name, dom in zip(names, domains):
            out.write(f"@attribute {name} {{{','.join(dom)}}}\n")
        out.write("\n@data\n")
        for r in rows:
            out.write(",".join(r) + "\n")


def from_orange_tab(path, class_first=False, drop=()):
    lines = [l.rstrip("\n").split("\t") for l in open(path)]
    names, decl, rows = lines[0], lines[1], lines[3:]
    cls = 0 if class_first else len(names) - 1
    order = [j for j in range(len(names)) if j != cls and names[j] not in drop] + [cls]
    out_rows = [[(r[j] if r[j] != "" else "?") for j in order] for r in rows]
    domains = []
    for j in order:
        declared = decl[j].split() if decl[j] not in ("d", "discrete") else []
        seen = []
        for r in rows:
            v = r[j]
            if v != "" and v != "?" and v not in seen:
                seen.append(v)
        domains.append(declared if declared else seen)
    return [names[j] for j in order], domains, out_rows


def from_keel_raw(path, names=None):
    rows = [[v.strip() for v in l.strip().split(",")] for l in open(path) if l.strip()]
    n = len(rows[0])
    names = names or [f"a{j + 1}" for j in range(n - 1)] + ["class"]
    domains = []
    for j in range(n):
        vals = sorted({r[j] for r in rows if r[j] != "?"})
        domains.append(vals)
    return names, domains, rows


def main():
    orange, keel = sys.argv[1], sys.argv[2]
    here = os.path.dirname(os.path.abspath(__file__))
    jobs = [
        ("house-votes-84", from_orange_tab(os.path.join(orange, "voting.tab"), class_first=True)),
        ("tic-tac-toe", from_orange_tab(os.path.join(orange, "tic_tac_toe.tab"))),
        ("car", from_orange_tab(os.path.join(orange, "car.tab"))),
        ("flare", from_orange_tab(os.path.join(orange, "flare2.tab"), class_first=True,
                                  drop=("area_of_largest",))),
        ("kr-vs-kp", from_keel_raw(os.path.join(keel, "chess.dat"))),
        ("mushroom", from_keel_raw(os.path.join(keel, "mushroom.dat"))),
        ("splice", from_keel_raw(os.path.join(keel, "splice.dat"))),
    ]
    for name, (names, domains, rows) in jobs:
        write_arff(os.path.join(here, f"{name}.arff"), name, names, domains, rows)
        print(name, len(rows), len(names) - 1, len(domains[-1]))


if __name__ == "__main__":
    main()
