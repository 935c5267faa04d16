#!/usr/bin/env python3
"""Regenerates the bundled desk-scale corpora under data/fixtures/.

Output is fully determined by the fixed seeds below, so rerunning the script
reproduces the committed files byte for byte.

  char_small.txt  ~100KB lower-case treebank-style text, exactly 51 symbols
  word_small.txt  ~100KB capitalised sentences, one per line, with <unk>
  bytes_small.bin 1,000,000 bytes of markup-like text, exactly 205 byte values
"""

import os
import random

HERE = os.path.dirname(os.path.abspath(__file__))
OUT = os.path.join(HERE, "..", "data", "fixtures")

DETERMINERS = ["the", "a", "this", "that", "every", "some", "its", "their"]
NOUNS = [
    "company", "market", "share", "price", "stock", "bank", "year", "month",
    "investor", "trader", "report", "plan", "deal", "board", "group", "unit",
    "firm", "index", "bond", "rate", "loss", "profit", "sale", "order",
    "chairman", "analyst", "fund", "issue", "week", "quarter", "president",
    "official", "government", "court", "agency", "house", "dollar", "yen",
    "contract", "offer", "bid", "value", "debt", "program", "system", "case",
]
ADJECTIVES = [
    "new", "big", "small", "major", "federal", "strong", "weak", "high",
    "low", "recent", "early", "late", "financial", "foreign", "local",
    "chief", "net", "annual", "public", "private", "total", "current",
]
VERBS = [
    "said", "expects", "reported", "sold", "bought", "raised", "cut",
    "posted", "agreed", "announced", "rejected", "approved", "filed",
    "offered", "acquired", "lowered", "increased", "reduced", "held",
]
ADVERBS = ["also", "still", "recently", "sharply", "slightly", "again"]
PREPS = ["in", "of", "for", "on", "with", "at", "by", "from", "after"]
CONJ = ["and", "but", "while", "because"]


def noun_phrase(rng):
    words = [rng.choice(DETERMINERS)]
    if rng.random() < 0.5:
        words.append(rng.choice(ADJECTIVES))
    words.append(rng.choice(NOUNS))
    if rng.random() < 0.08:
        words[-1] = "<unk>"
    return words


def clause(rng):
    words = noun_phrase(rng)
    if rng.random() < 0.25:
        words.append(rng.choice(ADVERBS))
    words.append(rng.choice(VERBS))
    words += noun_phrase(rng)
    if rng.random() < 0.5:
        words.append(rng.choice(PREPS))
        words += noun_phrase(rng)
    return words


def number_phrase(rng):
    kind = rng.random()
    if kind < 0.4:
        return ["$", "N", "million"]
    if kind < 0.7:
        return [str(rng.randint(1, 999)), "shares"]
    return ["N", "N"]


def sentence(rng):
    words = clause(rng)
    if rng.random() < 0.3:
        words.append(rng.choice(CONJ))
        words += clause(rng)
    if rng.random() < 0.3:
        words += ["for"] + number_phrase(rng)
    return words


def char_fixture(rng, target):
    # 26 letters, space, newline, 10 digits and 13 punctuation symbols.
    alphabet = set("abcdefghijklmnopqrstuvwxyz") | set(" \n0123456789")
    alphabet |= set(".,'-$&#*/<>N\\")
    assert len(alphabet) == 51
    lines = [
        "the company 's chief said n't & # 1 * 2 / 3 \\ 4 - 5 , 6 . 7 $ 8 N 9 0 <unk> jumped quickly over zoo box",
    ]
    size = len(lines[0]) + 1
    while size < target:
        words = sentence(rng)
        if rng.random() < 0.1:
            words.insert(rng.randrange(len(words)), rng.choice(["'s", "n't", "-", "&", "#", "*", "/"]))
        line = " ".join(words) + " ."
        if rng.random() < 0.5:
            line = line.replace(" and ", " , and ", 1)
        lines.append(line)
        size += len(line) + 1
    text = "\n".join(lines) + "\n"
    assert set(text) == alphabet, sorted(set(text) ^ alphabet)
    return text


def word_fixture(rng, target):
    lines = []
    size = 0
    while size < target:
        words = sentence(rng)
        if rng.random() < 0.4:
            words[0] = "the"
        words[0] = words[0].capitalize()
        line = " ".join(words) + " ."
        lines.append(line)
        size += len(line) + 1
    return "\n".join(lines) + "\n"


def byte_fixture(rng, length):
    high_chars = [chr(cp) for cp in range(0x80, 0x800, 7)]
    high_chars += [chr(0x1000 * lead + 0x123) for lead in range(1, 16)]
    printable = "".join(chr(c) for c in range(32, 127))
    chunks = [printable + "\n", "".join(high_chars) + "\n"]
    size = sum(len(c.encode("utf-8")) for c in chunks)
    page = 0
    while size < length:
        page += 1
        body = " ".join(" ".join(sentence(rng)) for _ in range(rng.randint(2, 5)))
        if rng.random() < 0.3:
            body += " " + "".join(rng.choice(high_chars) for _ in range(rng.randint(1, 4)))
        chunk = "<page id=\"%d\"><title>%s</title><text>[[%s]] %s</text></page>\n" % (
            page, rng.choice(NOUNS).title(), rng.choice(NOUNS), body)
        chunks.append(chunk)
        size += len(chunk.encode("utf-8"))
    data = "".join(chunks).encode("utf-8")[:length]
    return data


def main():
    os.makedirs(OUT, exist_ok=True)
    with open(os.path.join(OUT, "char_small.txt"), "w", newline="\n") as f:
        f.write(char_fixture(random.Random(1), 100_000))
    with open(os.path.join(OUT, "word_small.txt"), "w", newline="\n") as f:
        f.write(word_fixture(random.Random(2), 100_000))
    data = byte_fixture(random.Random(3), 1_000_000)
    assert len(set(data)) == 205, len(set(data))
    with open(os.path.join(OUT, "bytes_small.bin"), "wb") as f:
        f.write(data)


if __name__ == "__main__":
    main()
