#!/usr/bin/env python3
"""Generate the bundled synthetic Turkish-like UD treebank.

Writes 300 sentences of CoNLL-U to stdout. The first 200 (sent_id syn-m-NNN)
follow modern head-final noun phrase order; the last 100 (syn-h-NNN) add
historical constructions: head-initial izafet phrases ("harb-i umumi"),
case marking on the dependent of an izafet, and more light-verb compounds.

The output is deterministic for a given --seed. The committed file at
crates/core/testdata/synthetic-tr-300.conllu was produced with the default.
"""

import argparse
import random

NOUNS = [
    "memleket", "millet", "hükümet", "asker", "şehir", "kitap", "mektup",
    "adam", "padişah", "paşa", "vezir", "ordu", "köy", "ev", "yol", "deniz",
    "kale", "mesele", "zaman", "sefer", "devlet", "halk", "kadı", "tüccar",
    "gemi", "saray", "nehir", "dağ", "haber", "kanun",
]
IZAFET_HEADS = [
    "harb", "mebde", "hedef", "sû", "itâ", "ehl", "bab", "dar", "şehr", "ilm",
]
ADJS = [
    "büyük", "küçük", "eski", "yeni", "güzel", "umumî", "siyasî", "mühim",
    "azîm", "cesur", "uzak", "zengin",
]
VERBS = [
    "gel", "git", "gör", "yaz", "al", "ver", "bul", "yap", "oku", "bırak",
    "kur", "sev",
]
LVC_NOUNS = ["sevk", "ihraç", "tayin", "tesis", "inşa", "ilan", "kabul", "tahrir"]
LIGHT_VERBS = ["et", "eyle"]
ADVS = ["sonra", "çok", "hemen", "yine", "evvela"]
DETS = ["bir", "bu", "şu", "her"]
PRONS = ["o", "biz", "onlar"]
POSTPS = [("ile", "Case=Ins"), ("için", "_"), ("kadar", "_")]

FRONT = set("eiöüêîû")


def harmony(stem, back, front):
    for ch in reversed(stem):
        if ch in "aeıioöuüâêîû":
            return front if ch in FRONT else back
    return back


CASES = {
    "Nom": ("", ""),
    "Acc": ("ı", "i"),
    "Dat": ("a", "e"),
    "Loc": ("da", "de"),
    "Gen": ("ın", "in"),
    "Abl": ("dan", "den"),
}


def inflect(stem, case):
    back, front = CASES[case]
    if not back:
        return stem
    return stem + harmony(stem, back, front)


class Builder:
    """Accumulates tokens; heads are filled in as 1-based ids."""

    def __init__(self):
        self.toks = []

    def add(self, form, lemma, upos, feats="_", head=None, deprel=None):
        self.toks.append([form, lemma, upos, feats, head, deprel, "_"])
        return len(self.toks)

    def set(self, idx, head, deprel):
        self.toks[idx - 1][4] = head
        self.toks[idx - 1][5] = deprel


def noun_phrase(rng, b, case, historical):
    """Emit a noun phrase; returns the id of its head."""
    before = []
    if rng.random() < 0.3:
        before.append(("det", b.add(rng.choice(DETS), None, "DET")))
    if historical and rng.random() < 0.55:
        # izafet: N-i ADJ or N-i N ; case suffix lands on the last word
        head_stem = rng.choice(IZAFET_HEADS)
        head = b.add(head_stem + "-i", head_stem, "NOUN", "Case=Nom")
        if rng.random() < 0.5:
            dep_stem = rng.choice(ADJS)
            dep = b.add(
                inflect(dep_stem, case), dep_stem, "ADJ",
                "_" if case == "Nom" else f"Case={case}",
            )
            b.set(dep, head, "amod")
        else:
            dep_stem = rng.choice(NOUNS)
            dep = b.add(inflect(dep_stem, case), dep_stem, "NOUN", f"Case={case}")
            b.set(dep, head, "nmod:poss")
        for rel, i in before:
            b.set(i, head, rel)
        return head
    if rng.random() < 0.3:
        poss_stem = rng.choice(NOUNS)
        before.append(("nmod:poss", b.add(inflect(poss_stem, "Gen"), poss_stem, "NOUN", "Case=Gen")))
    for _ in range(rng.choice([0, 0, 1, 1, 2])):
        adj = rng.choice(ADJS)
        before.append(("amod", b.add(adj, adj, "ADJ")))
    stem = rng.choice(NOUNS)
    head = b.add(inflect(stem, case), stem, "NOUN", f"Case={case}")
    for rel, i in before:
        b.set(i, head, rel)
    return head


def sentence(rng, historical):
    b = Builder()
    args = []  # (head id, relation)
    if rng.random() < 0.8:
        if rng.random() < 0.25:
            p = rng.choice(PRONS)
            args.append((b.add(p, p, "PRON", "Case=Nom"), "nsubj"))
        else:
            h = noun_phrase(rng, b, "Nom", historical)
            if rng.random() < 0.15:
                cc = b.add("ve", "ve", "CCONJ")
                h2 = noun_phrase(rng, b, "Nom", historical)
                b.set(cc, h2, "cc")
                b.set(h2, h, "conj")
            args.append((h, "nsubj"))
    if rng.random() < 0.6:
        case = rng.choice(["Dat", "Loc", "Abl"])
        args.append((noun_phrase(rng, b, case, historical), "obl"))
    if rng.random() < 0.3:
        post, feats = rng.choice(POSTPS)
        h = noun_phrase(rng, b, "Nom", historical)
        c = b.add(post, post, "ADP", feats)
        b.set(c, h, "case")
        args.append((h, "obl"))
    if rng.random() < 0.7:
        args.append((noun_phrase(rng, b, "Acc", historical), "obj"))
    if rng.random() < 0.35:
        a = rng.choice(ADVS)
        args.append((b.add(a, a, "ADV"), "advmod"))
    lvc_rate = 0.55 if historical else 0.2
    if rng.random() < lvc_rate:
        n = rng.choice(LVC_NOUNS)
        args.append((b.add(n, n, "NOUN"), "compound:lvc"))
        lv = rng.choice(LIGHT_VERBS)
        suffix = rng.choice(["di", "miş", "mişti", "yor"])
        verb = b.add(lv + ("i" if suffix == "yor" else "") + suffix, lv, "VERB", "Mood=Ind")
    else:
        v = rng.choice(VERBS)
        suffix = rng.choice(["di", "miş", "ecek", "ir"])
        verb = b.add(v + suffix, v, "VERB", "Mood=Ind")
    for h, rel in args:
        b.set(h, verb, rel)
    b.set(verb, 0, "root")
    p = b.add(".", ".", "PUNCT")
    b.set(p, verb, "punct")
    return b.toks


def render(sid, toks):
    forms = [t[0] for t in toks]
    text = " ".join(forms[:-1]) + forms[-1]
    lines = [f"# sent_id = {sid}", f"# text = {text}"]
    for i, (form, lemma, upos, feats, head, deprel, misc) in enumerate(toks, 1):
        if i >= len(toks) - 1:
            misc = "SpaceAfter=No"
        lines.append("\t".join([
            str(i), form, lemma or form, upos, "_", feats,
            str(head), deprel, "_", misc,
        ]))
    return "\n".join(lines) + "\n"


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=20240601)
    ap.add_argument("--modern", type=int, default=200)
    ap.add_argument("--historical", type=int, default=100)
    opts = ap.parse_args()
    rng = random.Random(opts.seed)
    out = []
    for i in range(opts.modern):
        out.append(render(f"syn-m-{i + 1:03}", sentence(rng, False)))
    for i in range(opts.historical):
        out.append(render(f"syn-h-{i + 1:03}", sentence(rng, True)))
    print("\n".join(out))


if __name__ == "__main__":
    main()
