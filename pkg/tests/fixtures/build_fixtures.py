"""Regenerate the frozen fixture files. Run from this directory; outputs are committed."""

import os

import numpy as np

HERE = os.path.dirname(os.path.abspath(__file__))

WORDS = ("river", "delta", "bridge", "harbor", "castle", "forest", "valley", "island",
         "market", "temple", "garden", "tower", "canal", "meadow", "glacier", "desert")


def write(path, lines):
    with open(os.path.join(HERE, path), "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(line + "\n" for line in lines)


def months(first=(2014, 1), last=(2016, 6)):
    y, m = first
    while (y, m) <= last:
        yield f"{y:04d}-{m:02d}"
        m += 1
        if m == 13:
            y, m = y + 1, 1


def tiny():
    """12 entities, 3 seeds with search traffic, two monthly dumps."""
    os.makedirs(os.path.join(HERE, "tiny"), exist_ok=True)
    rng = np.random.default_rng(7)
    titles = ["Amazon River", "Nile", "Danube", "Rhine", "Volga", "Mekong", "Yangtze",
              "Thames", "Seine", "Loire", "Ganges", "São_Francisco"]
    abstracts = [f"{i + 1}\t{t.replace(' ', '_')}\t" + " ".join(rng.choice(WORDS, 6)) for i, t in enumerate(titles)]
    write("tiny/abstracts.tsv", abstracts)
    links = {1: [4, 5, 6, 7], 2: [4, 8, 9], 3: [5, 6, 10, 11], 4: [1, 2], 5: [3], 6: [1, 3, 12],
             7: [1], 8: [2, 9], 9: [8], 10: [3], 11: [3, 12], 12: [6]}
    write("tiny/links.tsv", [f"{k}\t{' '.join(map(str, v))}" for k, v in links.items()])
    name = {i + 1: t.replace(" ", "_") for i, t in enumerate(titles)}
    for label, bump in (("2016-05", 0), ("2016-06", 3)):
        rows = [f"other-google\t{name[1]}\texternal\t{900 + bump}",
                f"other-bing\t{name[2]}\texternal\t{500 + bump}",
                f"other-google\t{name[3]}\texternal\t{300 + bump}",
                f"other-empty\t{name[4]}\texternal\t{5000}",
                f"other-wikipedia\t{name[5]}\texternal\t{40}"]
        for s, targets in ((1, {4: 50, 5: 40, 6: 30, 7: 12 + bump}), (2, {4: 25, 8: 18, 9: 11 + bump}),
                           (3, {5: 33, 6: 21, 10: 15 + bump, 11: 9})):
            rows += [f"{name[s]}\t{name[t]}\tlink\t{c}" for t, c in targets.items()]
        rows += [f"{name[1]}\t{name[12]}\tother\t77", f"{name[2]}\tUnknown_Page\tlink\t60"]
        write(f"tiny/clickstream-{label}.tsv", rows)
    pv = []
    for e in range(1, 13):
        base = 200 * e
        for i, m in enumerate(months()):
            pv.append(f"{name[e]}\t{m}\t{base + 10 * i + int(rng.integers(0, 50))}")
    write("tiny/pageviews.tsv", pv)


def ingest():
    """130 entities, 10 seeds; seed 1 has 110 qualifying targets to exercise the cap."""
    os.makedirs(os.path.join(HERE, "ingest"), exist_ok=True)
    rng = np.random.default_rng(11)
    n = 130
    name = {i: f"Page_{i:03d}" for i in range(1, n + 1)}
    write("ingest/abstracts.tsv", [f"{i}\t{name[i]}\t" + " ".join(rng.choice(WORDS, 5)) for i in name])
    write("ingest/links.tsv", [f"{i}\t" + " ".join(str(int(t)) for t in rng.choice(n, 4, replace=False) + 1)
                               for i in name])
    for label in ("2016-05", "2016-06"):
        rows = []
        for s in range(1, 13):
            engine = "other-google" if s % 2 else "other-bing"
            rows.append(f"{engine}\t{name[s]}\texternal\t{int(10000 - 500 * s + rng.integers(0, 100))}")
        rows.append(f"other-yahoo\t{name[20]}\texternal\t99999")
        for s in range(1, 11):
            k = 110 if s == 1 else int(rng.integers(3, 30))
            targets = rng.choice(np.arange(13, n + 1), size=k, replace=False)
            for t in targets:
                c = int(rng.integers(10, 400)) if s == 1 else int(rng.integers(1, 300))
                rows.append(f"{name[s]}\t{name[int(t)]}\tlink\t{c}")
        rows.append(f"{name[2]}\t{name[50]}\tother\t500")
        rows.append("this line is malformed")
        write(f"ingest/clickstream-{label}.tsv", rows)


if __name__ == "__main__":
    tiny()
    ingest()
