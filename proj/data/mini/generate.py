#!/usr/bin/env python3
"""Regenerates the 50-document mini-corpus and its reference data.

Six themes drift in popularity over 1968-2015; every document mixes a primary
and a secondary theme. Running headers, bibliographies, taxon names and a few
book reviews are planted so every pipeline stage has something to do. Output
is deterministic.
"""
import json
import pathlib
import random

HERE = pathlib.Path(__file__).resolve().parent
rng = random.Random(1968)

THEMES = {
    "heredity": "gene mutation chromosome heredity allele linkage mendelian genotype phenotype inheritance "
                "recombination breeding cross hybrid dominance segregation trait pedigree locus mapping".split(),
    "evolution": "selection darwin adaptation variation fitness origin divergence speciation descent lineage "
                 "struggle survival modification transmutation gradualism saltation variety natural fossil record".split(),
    "ecology": "habitat ecosystem niche succession predator prey competition energy flow biomass food web "
               "equilibrium carrying capacity island biogeography community diversity stability".split(),
    "molecular": "protein enzyme dna rna sequence molecule structure synthesis crystallography helix code "
                 "ribosome replication transcription nucleotide laboratory virus phage bacterial".split(),
    "embryology": "embryo development cell tissue organ differentiation induction organizer morphogenesis "
                  "gastrula regeneration growth germ layer blastula limb egg fertilization".split(),
    "expedition": "expedition collection museum specimen survey voyage collector herbarium catalogue "
                  "naturalist field station colony empire trade garden botanical exploration map".split(),
}
# Theme weight as a function of the year's position in [0, 1].
TREND = {
    "heredity": lambda x: 1.2 - 0.6 * x,
    "evolution": lambda x: 1.0,
    "ecology": lambda x: 0.3 + 1.0 * x,
    "molecular": lambda x: 0.2 + 1.2 * x * x,
    "embryology": lambda x: 0.9 - 0.4 * x,
    "expedition": lambda x: 0.2 + 0.9 * x,
}
FILLER = "history study science scientists work view idea period account argument century question".split()
STOP = ("the of and a to in is was that for as by with on his their this which were from be it an at "
        "not but or had are have its also been these one more other they such into when there").split()
TAXA = ["mouse", "house mouse", "Mus musculus", "bear", "brown bear", "black bear", "medium ground finch",
        "finch", "fruit fly", "Drosophila", "Drosophila melanogaster", "grove snail", "oak", "English oak"]
THEME_TAXA = {"heredity": ["fruit fly", "Drosophila melanogaster", "mouse"],
              "evolution": ["medium ground finch", "finch", "grove snail"],
              "ecology": ["oak", "brown bear", "English oak"],
              "molecular": ["Mus musculus", "Drosophila"],
              "embryology": ["house mouse", "Drosophila"],
              "expedition": ["black bear", "bear", "finch"]}

PLACES = [  # name, uri, lat, lon, country
    ("Paris", "geo:2988507", 48.85341, 2.3488, "FR"),
    ("London", "geo:2643743", 51.50853, -0.12574, "GB"),
    ("Cambridge", "geo:2653941", 52.2, 0.11667, "GB"),
    ("Cambridge", "geo:4931972", 42.3751, -71.10561, "US"),
    ("Boston", "geo:4930956", 42.35843, -71.05977, "US"),
    ("Berlin", "geo:2950159", 52.52437, 13.41053, "DE"),
    ("Tokyo", "geo:1850147", 35.6895, 139.69171, "JP"),
    ("Sydney", "geo:2147714", -33.86785, 151.20732, "AU"),
    ("Nairobi", "geo:184745", -1.28333, 36.81667, "KE"),
    ("Quito", "geo:3652462", -0.22985, -78.52495, "EC"),
    ("Puerto Ayora", "geo:3652764", -0.74018, -90.31380, "EC"),
    ("Moscow", "geo:524901", 55.75222, 37.61556, "RU"),
    ("Cape Town", "geo:3369157", -33.92584, 18.42322, "ZA"),
    ("Buenos Aires", "geo:3435910", -34.61315, -58.37723, "AR"),
]
THEME_PLACES = {"heredity": ["London", "Cambridge", "geo:4931972", "Moscow"],
                "evolution": ["London", "Puerto Ayora", "Quito", "Cambridge"],
                "ecology": ["Nairobi", "Sydney", "Boston", "Cape Town"],
                "molecular": ["Paris", "geo:4931972", "Boston", "Tokyo"],
                "embryology": ["Berlin", "Paris", "Tokyo"],
                "expedition": ["Buenos Aires", "Cape Town", "Sydney", "Puerto Ayora", "Nairobi"]}
AUTHOR_HOME = ["London", "Boston", "Paris", "Berlin", "Tokyo", "Sydney", "Cambridge", "Moscow", "Cape Town",
               "Buenos Aires", "Quito", "Nairobi", "geo:4931972"]

TAXONOMY = """1\t\tno rank\troot\tUnassigned
131567\t1\tno rank\tcellular organisms\tUnassigned
2759\t131567\tsuperkingdom\tEukaryota\tUnassigned
33208\t2759\tkingdom\tMetazoa\tInvertebrates
7711\t33208\tphylum\tChordata\tVertebrates
40674\t7711\tclass\tMammalia\tMammals
9989\t40674\torder\tRodentia\tRodents
10066\t9989\tfamily\tMuridae\tRodents
10088\t10066\tgenus\tMus\tRodents
10090\t10088\tspecies\tMus musculus\tRodents
33554\t40674\torder\tCarnivora\tMammals
9632\t33554\tfamily\tUrsidae\tMammals
9639\t9632\tgenus\tUrsus\tMammals
9644\t9639\tspecies\tUrsus arctos\tMammals
9643\t9639\tspecies\tUrsus americanus\tMammals
8782\t7711\tclass\tAves\tVertebrates
9126\t8782\torder\tPasseriformes\tVertebrates
48155\t9126\tgenus\tGeospiza\tVertebrates
48157\t48155\tspecies\tGeospiza fortis\tVertebrates
6656\t33208\tphylum\tArthropoda\tInvertebrates
50557\t6656\tclass\tInsecta\tInvertebrates
7147\t50557\torder\tDiptera\tInvertebrates
7215\t7147\tgenus\tDrosophila\tInvertebrates
7227\t7215\tspecies\tDrosophila melanogaster\tInvertebrates
6447\t33208\tphylum\tMollusca\tInvertebrates
6448\t6447\tclass\tGastropoda\tInvertebrates
6449\t6448\tspecies\tCepaea nemoralis\tInvertebrates
33090\t2759\tkingdom\tViridiplantae\tPlants
35493\t33090\tphylum\tStreptophyta\tPlants
3511\t35493\tgenus\tQuercus\tPlants
38942\t3511\tspecies\tQuercus robur\tPlants
"""
LEXICON = """mouse\t10090
house mouse\t10090
mus musculus\t10090
bear\t9639
brown bear\t9644
black bear\t9643
medium ground finch\t48157
finch\t48155
fruit fly\t7227
drosophila\t7215
drosophila melanogaster\t7227
grove snail\t6449
oak\t3511
english oak\t38942
"""


def pick(weights):
    names = list(weights)
    return rng.choices(names, [weights[n] for n in names])[0]


def page_lines(primary, secondary, n_lines):
    lines = []
    for _ in range(n_lines):
        words = []
        for _ in range(12):
            r = rng.random()
            if r < 0.50:
                words.append(rng.choice(THEMES[primary]))
            elif r < 0.68:
                words.append(rng.choice(THEMES[secondary]))
            elif r < 0.75:
                words.append(rng.choice(FILLER))
            elif r < 0.97:
                words.append(rng.choice(STOP))
            else:
                words.append(rng.choice(THEME_TAXA[primary] if rng.random() < 0.8 else TAXA))
        if primary == "evolution" and rng.random() < 0.5:
            at = rng.randrange(len(words))
            words[at:at] = ["natural", "selection"]
        lines.append(" ".join(words).capitalize() + ".")
    return lines


def bibliography(doc_no):
    out = ["References"]
    for i in range(rng.randint(3, 6)):
        year = rng.randint(1850, 1965)
        author = rng.choice(["Smith, J.", "Moreau, P.", "Tanaka, K.", "Weber, H.", "Lopez, M."])
        out.append(f"{author} ({year}) On the {rng.choice(FILLER)} of {rng.choice(FILLER)}. "
                   f"Annals {rng.randint(1, 40)}({rng.randint(1, 4)}), {rng.randint(1, 300)}-{rng.randint(301, 600)}.")
    return out


def main():
    docs, geo, cites = [], [], []
    authors = [f"a{i:02d}" for i in range(1, 14)]
    for i in range(50):
        year = 1968 + round(i * 47 / 49)
        x = (year - 1968) / 47
        weights = {t: f(x) for t, f in TREND.items()}
        primary = pick(weights)
        secondary = pick({t: w for t, w in weights.items() if t != primary})
        doc_type = "book_review" if i % 9 == 4 else ("essay_review" if i % 11 == 7 else "article")
        n_pages = 2 if doc_type == "book_review" else rng.randint(4, 7)
        pages = []
        for p in range(n_pages):
            header = [f"Journal of the History of Biology {year - 1967}: {100 + p}"] if p > 0 else []
            body = page_lines(primary, secondary, 10 if doc_type != "book_review" else 6)
            if p == n_pages - 1 and doc_type != "book_review":
                body += bibliography(i)
            pages.append("\n".join(header + body))
        doc_id = f"jhb{i + 1:03d}"
        if i in (40, 45):
            doc_authors = ["a14", "a15"]
        else:
            doc_authors = sorted(rng.sample(authors, rng.choice([1, 1, 2])))
        docs.append({"doc_id": doc_id, "year": year, "doc_type": doc_type, "authors": doc_authors, "pages": pages})
        for place in rng.sample(THEME_PLACES[primary], rng.randint(1, min(3, len(THEME_PLACES[primary])))):
            geo.append((doc_id, "content", place))
        for a in doc_authors:
            geo.append((doc_id, "author", AUTHOR_HOME[int(a[1:]) % len(AUTHOR_HOME)]))
        if i > 3:
            for j in sorted(rng.sample(range(i), rng.randint(0, 2))):
                cites.append((doc_id, f"jhb{j + 1:03d}"))

    with open(HERE / "corpus.jsonl", "w") as f:
        for d in docs:
            f.write(json.dumps(d, sort_keys=True) + "\n")
    (HERE / "taxonomy.tsv").write_text(TAXONOMY)
    (HERE / "lexicon.tsv").write_text(LEXICON)
    (HERE / "stopwords.txt").write_text("\n".join(sorted(set(STOP))) + "\n")
    (HERE / "gazetteer.tsv").write_text("".join(f"{n}\t{u}\t{la}\t{lo}\t{c}\n" for n, u, la, lo, c in PLACES))
    (HERE / "geo.csv").write_text("doc_id,role,place_or_uri\n" + "".join(f"{d},{r},{p}\n" for d, r, p in geo))
    (HERE / "citations.csv").write_text("doc_id,cited_doc_id\n" + "".join(f"{a},{b}\n" for a, b in cites))


if __name__ == "__main__":
    main()
