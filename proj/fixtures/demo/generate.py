#!/usr/bin/env python3
"""Regenerates the demo corpus: a film catalog (TSV) and a music catalog
(JSONL) totalling 2000 entities, with a handful of typo duplicates for the
linker and cross-source title references for object resolution.

Names are three-word combinations drawn from pools whose words sit at
Levenshtein distance >= 4 from each other, so two distinct entities differ by
at least 4 edits while a typo duplicate differs by exactly 2. The script
asserts that margin before writing anything, which keeps the checked-in match
model's thresholds valid. Output is deterministic, so the files never drift.
"""

import itertools
import json
import pathlib

HERE = pathlib.Path(__file__).parent

ADJECTIVES = [
    "Crimson", "Silent", "Golden", "Hollow", "Winter", "Electric", "Broken",
    "Midnight", "Scarlet", "Copper", "Velvet", "Distant", "Burning",
    "Emerald", "Twilight", "Savage", "Obsidian", "Wandering", "Shattered",
    "Lunar",
]

NOUNS = [
    "Harbor", "Empire", "Garden", "Horizon", "Station", "Kingdom", "Voyage",
    "Castle", "Meridian", "Orchard", "Lantern", "Summit", "Archive",
    "Mirror", "Compass", "Prophet", "Cathedral", "Frontier", "Signal",
    "Labyrinth",
]

MOVIE_THIRDS = ["Rising", "Returns", "Forever"]

BAND_WORDS = [
    "Sparrows", "Engines", "Pilots", "Wolves", "Lanterns", "Rivers",
    "Comets", "Anchors", "Cranes", "Embers", "Herons", "Ravens", "Cedars",
    "Vines", "Gulls", "Tigers", "Bisons", "Falcons", "Owlets", "Drums",
]

BAND_THIRDS = ["Quartet", "Ensemble"]

GENRES = ["drama", "thriller", "comedy", "noir", "adventure", "romance",
          "mystery", "western"]

DIRECTORS = [
    "Ava Norwood", "Felix Ambrose", "Greta Hollis", "Ishan Patel",
    "Lena Kovacs", "Marco Tiberi", "Noor Haddad", "Oscar Lindqvist",
    "Priya Raman", "Quentin Dubois", "Rosa Delgado", "Stefan Brandt",
    "Tilda Morrow", "Umar Farouk", "Vera Castellanos", "Wesley Okafor",
    "Xenia Petrova", "Yusuf Demir", "Zofia Nowak", "Hal Berenson",
]

MUSIC_GENRES = ["folk", "jazz", "electronic", "rock", "ambient", "soul"]


def edit_distance(a, b):
    prev = list(range(len(b) + 1))
    for i in range(1, len(a) + 1):
        cur = [i] + [0] * len(b)
        for j in range(1, len(b) + 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1,
                         prev[j - 1] + (a[i - 1] != b[j - 1]))
        prev = cur
    return prev[-1]


def edit_similarity(a, b):
    return 1.0 - edit_distance(a, b) / max(len(a), len(b))


def check_pool(pool, label):
    for a, b in itertools.combinations(pool, 2):
        d = edit_distance(a.lower(), b.lower())
        assert d >= 4, f"{label}: {a!r} vs {b!r} at distance {d}"


def swap_typo(name):
    """Swaps two interior letters of the longest non-leading word, so the
    duplicate stays 2 edits away and keeps the blocking prefix intact."""
    words = name.split(" ")
    skip = 2 if words[0] == "The" else 1
    k = max(range(skip, len(words)), key=lambda i: len(words[i]))
    w = words[k]
    p = len(w) // 2
    words[k] = w[:p] + w[p + 1] + w[p] + w[p + 2:]
    return " ".join(words)


def movie_title(i):
    adjective = ADJECTIVES[i % 20]
    noun = NOUNS[(i // 20) % 20]
    third = MOVIE_THIRDS[i // 400]
    return f"{adjective} {noun} {third}"


def band_name(i):
    adjective = ADJECTIVES[(i * 7) % 20]
    word = BAND_WORDS[(i // 20) % 20]
    third = BAND_THIRDS[i // 400]
    return f"The {adjective} {word} {third}"


def check_margins(names, typo_pairs):
    """Distinct same-block names must stay clearly below the match cut while
    typo pairs stay clearly above it."""
    legit_ceiling = 0.0
    by_prefix = {}
    for n in names:
        by_prefix.setdefault(n.lower()[:8], []).append(n.lower())
    for group in by_prefix.values():
        for a, b in itertools.combinations(group, 2):
            legit_ceiling = max(legit_ceiling, edit_similarity(a, b))
    typo_floor = min(edit_similarity(a.lower(), b.lower()) for a, b in typo_pairs)
    assert legit_ceiling + 0.02 < typo_floor, (legit_ceiling, typo_floor)
    return legit_ceiling, typo_floor


def write_movies():
    base = 1185
    rows = []
    titles = []
    typo_pairs = []
    for i in range(base):
        title = movie_title(i)
        titles.append(title)
        sequel = titles[i - 1] if i % 40 == 39 else ""
        rows.append([
            f"m{i:04d}",
            title,
            str(1950 + i % 70),
            GENRES[i % len(GENRES)],
            DIRECTORS[i % len(DIRECTORS)],
            sequel,
        ])
    for k in range(15):
        source = rows[k * 70]
        typo = swap_typo(source[1])
        typo_pairs.append((source[1], typo))
        rows.append([source[0] + "d", typo, source[2], source[3], source[4], ""])

    legit, floor = check_margins(titles, typo_pairs)
    print(f"movies: legit ceiling {legit:.3f}, typo floor {floor:.3f}")

    header = "movie_id\ttitle\trelease_year\tgenre\tdirected_by\tsequel_of"
    lines = [header] + ["\t".join(r) for r in rows]
    (HERE / "movies.tsv").write_text("\n".join(lines) + "\n")

    pop_lines = ["movie_id\tpopularity"]
    for index, row in enumerate(rows):
        pop_lines.append(f"{row[0]}\t{(index * 37) % 100 + 1}")
    (HERE / "movie_popularity.tsv").write_text("\n".join(pop_lines) + "\n")
    return titles


def write_music(movie_titles):
    base = 792
    records = []
    names = []
    typo_pairs = []
    for i in range(base):
        name = band_name(i)
        names.append(name)
        record = {
            "artist_id": f"a{i:04d}",
            "name": name,
            "founded_year": str(1960 + i % 60),
            "genre": MUSIC_GENRES[i % len(MUSIC_GENRES)],
        }
        if i % 3 == 2:
            record["influenced_by"] = names[i - 2]
        if i % 4 == 1:
            record["theme_for"] = movie_titles[(i * 13) % len(movie_titles)]
        records.append(record)
    for k in range(8):
        source = records[k * 90]
        typo = swap_typo(source["name"])
        typo_pairs.append((source["name"], typo))
        records.append({
            "artist_id": source["artist_id"] + "d",
            "name": typo,
            "founded_year": source["founded_year"],
            "genre": source["genre"],
        })

    legit, floor = check_margins(names, typo_pairs)
    print(f"music: legit ceiling {legit:.3f}, typo floor {floor:.3f}")

    lines = [json.dumps(r) for r in records]
    (HERE / "music.jsonl").write_text("\n".join(lines) + "\n")


def main():
    check_pool(ADJECTIVES, "adjectives")
    check_pool(NOUNS, "nouns")
    check_pool(MOVIE_THIRDS, "movie thirds")
    check_pool(BAND_WORDS, "band words")
    check_pool(BAND_THIRDS, "band thirds")
    titles = write_movies()
    write_music(titles)
    print(f"wrote {HERE / 'movies.tsv'}, {HERE / 'movie_popularity.tsv'}, "
          f"{HERE / 'music.jsonl'}")


if __name__ == "__main__":
    main()
