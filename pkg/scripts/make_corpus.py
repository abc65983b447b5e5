#!/usr/bin/env python3
"""Build the bundled training corpus (src/credmark/data/corpus.txt).

The n-gram realism stack needs ~1 MB of natural-looking English with a
Zipf-shaped vocabulary and enough branching that next-token entropy stays
above the gate. Licensing-clean approach: synthesize the corpus from a
seeded phrase grammar instead of bundling third-party text. Regenerating
with the same seed reproduces the file byte for byte.
"""

from __future__ import annotations

import pathlib
import numpy as np

OUT = pathlib.Path(__file__).resolve().parents[1] / "src" / "credmark" / "data" / "corpus.txt"

DETERMINERS = ["the", "a", "this", "that", "each", "every", "some", "another", "its", "their"]
ADJECTIVES = [
    "old", "quiet", "bright", "narrow", "heavy", "distant", "early", "late", "gray",
    "green", "warm", "cold", "long", "small", "great", "hidden", "open", "broken",
    "steady", "sudden", "gentle", "rough", "clear", "dark", "pale", "deep", "dry",
    "wet", "sharp", "soft", "plain", "strange", "familiar", "crowded", "empty",
    "silver", "golden", "iron", "wooden", "stone", "northern", "southern", "eastern",
    "western", "foreign", "local", "ancient", "modern", "careful", "careless",
]
NOUNS = [
    "river", "road", "house", "window", "door", "garden", "field", "forest", "hill",
    "valley", "mountain", "village", "town", "city", "market", "bridge", "tower",
    "wall", "roof", "floor", "table", "chair", "lamp", "book", "letter", "page",
    "story", "song", "voice", "sound", "light", "shadow", "morning", "evening",
    "night", "winter", "summer", "spring", "autumn", "rain", "snow", "wind", "storm",
    "cloud", "sky", "star", "moon", "sun", "sea", "shore", "boat", "harbor", "train",
    "station", "engine", "wheel", "machine", "clock", "bell", "coin", "key", "rope",
    "ladder", "basket", "bottle", "cup", "plate", "knife", "thread", "cloth", "coat",
    "shoe", "hat", "glove", "farmer", "teacher", "doctor", "sailor", "soldier",
    "merchant", "neighbor", "stranger", "child", "brother", "sister", "mother",
    "father", "friend", "crowd", "family", "horse", "dog", "cat", "bird", "fish",
    "sheep", "cattle", "garden", "orchard", "meadow", "path", "gate", "fence",
    "barn", "mill", "well", "spring", "stone", "sand", "dust", "smoke", "fire",
    "ash", "water", "bread", "salt", "sugar", "tea", "coffee", "dinner", "supper",
]
VERBS_PAST = [
    "walked", "turned", "opened", "closed", "carried", "lifted", "dropped", "found",
    "lost", "watched", "heard", "saw", "felt", "remembered", "forgot", "followed",
    "crossed", "reached", "left", "entered", "climbed", "descended", "waited",
    "rested", "worked", "studied", "wrote", "read", "spoke", "answered", "asked",
    "called", "whispered", "shouted", "laughed", "smiled", "wondered", "believed",
    "hoped", "feared", "traveled", "returned", "arrived", "departed", "gathered",
    "scattered", "built", "repaired", "painted", "measured", "counted", "weighed",
]
ADVERBS = [
    "slowly", "quickly", "quietly", "carefully", "suddenly", "finally", "nearly",
    "almost", "often", "rarely", "again", "already", "still", "soon", "together",
    "alone", "everywhere", "somewhere", "early", "late", "gently", "firmly",
]
PREPOSITIONS = ["over", "under", "near", "beyond", "behind", "beside", "through",
                "across", "along", "against", "toward", "within", "around"]
CONJUNCTIONS = ["and", "but", "while", "because", "although", "until", "before", "after"]
PRONOUN_CLAUSES = [
    "they said", "she thought", "he knew", "we remembered", "no one noticed",
    "everyone agreed", "someone asked", "it seemed",
]


def make_names(rng, count: int = 720) -> list[str]:
    """Zipf-weighted pool of invented proper nouns (places and people)."""
    onsets = ["b", "br", "c", "cl", "d", "dr", "f", "g", "gr", "h", "k", "l",
              "m", "n", "p", "r", "s", "st", "t", "tr", "v", "w"]
    mids = ["a", "e", "i", "o", "u", "ar", "el", "en", "il", "or", "an", "em"]
    ends = ["ton", "field", "ford", "bury", "dale", "mere", "wick", "holm",
            "stead", "by", "ham", "worth", "er", "in", "a", "o"]
    names = set()
    while len(names) < count:
        n = onsets[rng.integers(len(onsets))] + mids[rng.integers(len(mids))]
        if rng.random() < 0.6:
            n += mids[rng.integers(len(mids))]
        n += ends[rng.integers(len(ends))]
        names.add(n)
    return sorted(names)


def noun_phrase(rng, names) -> str:
    if rng.random() < 0.12:
        # proper nouns drawn with a zipf-ish tilt toward the front of the pool
        idx = min(int(rng.zipf(1.3)) - 1, len(names) - 1)
        return names[idx]
    det = DETERMINERS[rng.integers(len(DETERMINERS))]
    words = [det]
    if rng.random() < 0.55:
        words.append(ADJECTIVES[rng.integers(len(ADJECTIVES))])
    words.append(NOUNS[rng.integers(len(NOUNS))])
    return " ".join(words)


def clause(rng, names) -> str:
    parts = [noun_phrase(rng, names), VERBS_PAST[rng.integers(len(VERBS_PAST))]]
    roll = rng.random()
    if roll < 0.5:
        parts.append(noun_phrase(rng, names))
    elif roll < 0.8:
        parts.append(PREPOSITIONS[rng.integers(len(PREPOSITIONS))])
        parts.append(noun_phrase(rng, names))
    if rng.random() < 0.35:
        parts.append(ADVERBS[rng.integers(len(ADVERBS))])
    return " ".join(parts)


def sentence(rng, names) -> str:
    pieces = [clause(rng, names)]
    while rng.random() < 0.4 and len(pieces) < 3:
        joiner = CONJUNCTIONS[rng.integers(len(CONJUNCTIONS))]
        if rng.random() < 0.2:
            pieces.append(joiner + " " + PRONOUN_CLAUSES[rng.integers(len(PRONOUN_CLAUSES))]
                          + " that " + clause(rng, names))
        else:
            pieces.append(joiner + " " + clause(rng, names))
    body = ", ".join(pieces)
    return body[0].upper() + body[1:] + "."


def main(target_bytes: int = 1_100_000, seed: int = 20240601):
    rng = np.random.default_rng(seed)
    names = make_names(rng)
    out = []
    size = 0
    while size < target_bytes:
        para = " ".join(sentence(rng, names) for _ in range(int(rng.integers(3, 8))))
        out.append(para)
        size += len(para) + 2
    text = "\n\n".join(out) + "\n"
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(text)
    print(f"wrote {OUT} ({len(text)} bytes)")


if __name__ == "__main__":
    main()
