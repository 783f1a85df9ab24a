"""Hand-computed expectations and independent reference checkers shared by the test files."""
import math
import random

# (prediction, golds, profile, f1, em); every value worked out by hand
SQUAD_CASES = [
    ("cat", ["black cat"], "en", 2 * (1.0 * 0.5) / 1.5, 0.0),
    ("the cat", ["cat"], "en", 1.0, 1.0),
    ("the cat", ["cat"], "whitespace", 2 * (0.5 * 1.0) / 1.5, 0.0),
    ("Paris", ["Paris"], "en", 1.0, 1.0),
    ("Paris!", ["paris"], "en", 1.0, 1.0),
    ("dog", ["cat"], "en", 0.0, 0.0),
    ("cat", ["dog", "cat"], "en", 1.0, 1.0),
    ("x x y", ["x y y"], "en", 2 / 3, 0.0),
    ("  big   red  ", ["big red"], "en", 1.0, 1.0),
    ("", ["cat"], "en", 0.0, 0.0),
    ("東京都", ["東京"], "char", 2 * (2 / 3) / (2 / 3 + 1), 0.0),
]

# (x, y, rho)
SPEARMAN_CASES = [
    ([1, 2, 2], [1, 2, 3], math.sqrt(3) / 2),
    ([1, 2, 3, 4], [10, 20, 30, 40], 1.0),
    ([1, 2, 3, 4], [4, 3, 2, 1], -1.0),
]

APPENDIX_EXAMPLE = "this is *0* an example span #0# delimited by placeholders"


def scan_markers(text):
    """Marker list [(kind, key)] found by a left-to-right character scan (no regex)."""
    out = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch in "*#":
            j = i + 1
            while j < len(text) and text[j].isdigit():
                j += 1
            if j > i + 1 and j < len(text) and text[j] == ch:
                out.append(("open" if ch == "*" else "close", int(text[i + 1 : j])))
                i = j + 1
                continue
        i += 1
    return out


def doc_is_valid(text):
    """Each key opened once and closed once, opener first, spans neither nested nor overlapping."""
    marks = scan_markers(text)
    if len(marks) % 2:
        return False
    seen = set()
    for a, b in zip(marks[::2], marks[1::2]):
        if a[0] != "open" or b[0] != "close" or a[1] != b[1] or a[1] in seen:
            return False
        seen.add(a[1])
    return True


def translation_is_valid(source, translation):
    return doc_is_valid(translation) and sorted(scan_markers(source)) == sorted(scan_markers(translation))


WORDS = "alpha beta gamma delta eps zeta eta theta iota kappa".split()


def random_doc(rng, keys):
    order = list(keys)
    rng.shuffle(order)
    parts = []
    for k in order:
        parts += rng.sample(WORDS, rng.randint(0, 2))
        parts += [f"*{k}*"] + rng.sample(WORDS, rng.randint(1, 3)) + [f"#{k}#"]
    parts += rng.sample(WORDS, rng.randint(0, 2))
    return " ".join(parts)


def mutate(rng, text):
    toks = text.split(" ")
    marker_idx = [i for i, t in enumerate(toks) if scan_markers(t)]
    op = rng.choice(["none", "delete", "duplicate", "swap", "rekey", "move", "insert", "flip"])
    if op == "none" or not marker_idx:
        return text
    i = rng.choice(marker_idx)
    if op == "delete":
        del toks[i]
    elif op == "duplicate":
        toks.insert(rng.randrange(len(toks) + 1), toks[i])
    elif op == "swap":
        j = rng.choice(marker_idx)
        toks[i], toks[j] = toks[j], toks[i]
    elif op == "rekey":
        c = toks[i][0]
        toks[i] = f"{c}{rng.randint(0, 6)}{c}"
    elif op == "move":
        t = toks.pop(i)
        toks.insert(rng.randrange(len(toks) + 1), t)
    elif op == "insert":
        c = rng.choice("*#")
        toks.insert(rng.randrange(len(toks) + 1), f"{c}{rng.randint(0, 6)}{c}")
    elif op == "flip":
        t = toks[i]
        c = "#" if t[0] == "*" else "*"
        toks[i] = c + t[1:-1] + c
    return " ".join(toks)


def fuzz_cases(n, seed=0):
    rng = random.Random(seed)
    for _ in range(n):
        keys = rng.sample(range(7), rng.randint(0, 4))
        source = random_doc(rng, keys)
        translation = mutate(rng, random_doc(rng, keys))
        yield source, translation
