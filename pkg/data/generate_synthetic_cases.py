#!/usr/bin/env python3
"""Deterministic generator for the bundled 300-case synthetic corpus.

The corpus exercises the whole pipeline at desk scale: 8 charges, 12
law articles (four charges split across two articles each, signalled by
wording), and prison terms that land in exactly 5 of the 10 default
term bins, driven by charge severity plus aggravating/mitigating
sentences. Roughly 15% of facts carry a keyword borrowed from another
charge so top-1 classification stays imperfect.

Run from anywhere: python data/generate_synthetic_cases.py
"""

import json
import random
from pathlib import Path

SEED = 20240614
N_CASES = 300
OUT = Path(__file__).resolve().parent / "synthetic_cases.jsonl"

# charge -> list of (article, action templates)
CHARGE_ARTICLES = {
    "theft": [
        (264, ["sneaked into a dormitory and stole {obj}",
               "pickpocketed {obj} on a crowded bus",
               "shoplifted {obj} from a supermarket shelf",
               "pried open a locker and took {obj}"]),
    ],
    "fraud": [
        (266, ["fabricated an investment scheme and collected deposits of {amount} yuan",
               "posed as a stockbroker and induced transfers of {amount} yuan",
               "ran a fake lottery that took in {amount} yuan"]),
        (224, ["signed a purchase contract with no intent to perform and took {amount} yuan",
               "used a shell company to sign a supply contract and pocketed the advance of {amount} yuan"]),
    ],
    "robbery": [
        (263, ["threatened the victim with a knife and seized {obj}",
               "cornered the victim at night and robbed {obj} by violence"]),
        (267, ["snatched {obj} from the victim's hands and fled on a motorbike",
               "grabbed {obj} by force in the market and ran"]),
    ],
    "assault": [
        (234, ["punched the victim repeatedly causing minor injuries",
               "struck the victim with a steel rod, fracturing an arm",
               "beat the victim after a quarrel, causing second-degree injuries"]),
    ],
    "bribery": [
        (385, ["as a state functionary accepted kickbacks of {amount} yuan for approvals",
               "took bribes of {amount} yuan in exchange for awarding contracts"]),
        (389, ["offered cash of {amount} yuan to an official to win a tender",
               "gave an official gift cards worth {amount} yuan for a permit"]),
    ],
    "arson": [
        (114, ["set fire to a warehouse door, endangering public safety with no casualties",
               "ignited cartons in a stairwell; the fire was put out before spreading"]),
        (115, ["torched a workshop causing severe burns to two workers",
               "set a residence on fire causing one death and heavy losses"]),
    ],
    "smuggling": [
        (153, ["smuggled untaxed electronics worth {amount} yuan across the border",
               "concealed dutiable goods worth {amount} yuan in freight containers"]),
    ],
    "forgery": [
        (280, ["forged official sealed documents and sold them",
               "printed counterfeit company seals and certificates",
               "faked official stamps on residence papers"]),
    ],
}

OBJECTS = ["a wallet", "a mobile phone", "a bicycle", "a laptop", "a gold necklace",
           "a handbag", "an electric scooter", "a watch"]
NAMES = ["Zhang", "Li", "Wang", "Chen", "Liu", "Yang", "Huang", "Zhao", "Wu", "Zhou",
         "Xu", "Sun", "Ma", "Zhu", "Hu", "Guo", "Lin", "He", "Gao", "Luo"]
CITIES = ["Hangzhou", "Nanjing", "Chengdu", "Wuhan", "Xi'an", "Qingdao", "Changsha",
          "Kunming", "Harbin", "Fuzhou"]
DETAILS = [
    "The case was uncovered after the victim reported to the local police station.",
    "Surveillance footage along {city} Road confirmed the sequence of events.",
    "The proceeds were spent on online gambling within two weeks.",
    "An accomplice kept watch outside but was handled in a separate case.",
    "The goods were later appraised by the price certification center.",
    "Witnesses at the scene corroborated the account during the investigation.",
]
MITIGATORS = [
    "After the incident the defendant surrendered voluntarily and confessed.",
    "The defendant made full restitution and obtained the victim's forgiveness.",
]
AGGRAVATORS = [
    "The defendant is a recidivist, having served a prior sentence for a similar offense.",
    "The defendant had been released from prison less than two years before reoffending.",
]
NEUTRALS = [
    "The defendant was apprehended at the scene shortly afterwards.",
    "The defendant denied the principal facts at first but the evidence was conclusive.",
]

# confusion keywords borrowed from other charges (~15% of cases)
CONFUSERS = [
    "The two parties had previously signed a rental contract.",
    "A kitchen fire alarm in the building went off during the incident.",
    "The defendant had once worked as a purchasing official.",
    "A forged receipt was also found at the scene but not prosecuted.",
    "The victim initially suspected theft by a neighbor.",
]

# severity ladder over the default bins {1, 3, 4, 5, 7}
BASE_BIN = {"theft": 1, "forgery": 1, "fraud": 3, "smuggling": 3,
            "bribery": 4, "assault": 4, "robbery": 5, "arson": 5}
LADDER = [1, 3, 4, 5, 7]
BIN_MONTHS = {1: (6, 8), 3: (12, 23), 4: (24, 35), 5: (36, 59), 7: (84, 119)}

CJK_SNIPPETS = ["the shop sign read 华联超市", "a note reading 欠条 was recovered",
                "the seal bore the characters 公章"]


def main():
    rng = random.Random(SEED)
    charges = sorted(CHARGE_ARTICLES)
    records = []
    for i in range(N_CASES):
        charge = charges[i % len(charges)] if i < 24 else rng.choice(charges)
        article, templates = CHARGE_ARTICLES[charge][
            rng.randrange(len(CHARGE_ARTICLES[charge]))]
        action = rng.choice(templates).format(
            obj=rng.choice(OBJECTS), amount=rng.randrange(2, 200) * 1000)
        name = rng.choice(NAMES)
        city = rng.choice(CITIES)
        date = f"{rng.randrange(2015, 2024)}-{rng.randrange(1, 13):02d}-{rng.randrange(1, 29):02d}"

        roll = rng.random()
        bin_idx = LADDER.index(BASE_BIN[charge])
        if roll < 0.25:
            closing = rng.choice(MITIGATORS)
            bin_idx = max(0, bin_idx - 1)
        elif roll < 0.5:
            closing = rng.choice(AGGRAVATORS)
            bin_idx = min(len(LADDER) - 1, bin_idx + 1)
        else:
            closing = rng.choice(NEUTRALS)
        term_bin = LADDER[bin_idx]
        lo, hi = BIN_MONTHS[term_bin]
        term_months = rng.randrange(lo, hi + 1)

        sentences = [
            f"On {date}, the defendant {name} {action} in {city}.",
            rng.choice(DETAILS).format(city=city),
        ]
        if rng.random() < 0.15:
            sentences.append(rng.choice(CONFUSERS))
        if rng.random() < 0.03:
            sentences.append(f"During the search, {rng.choice(CJK_SNIPPETS)}.")
        sentences.append(closing)

        records.append({
            "id": f"case-{i + 1:04d}",
            "fact": " ".join(sentences),
            "article": article,
            "charge": charge,
            "term_months": term_months,
            "date": date,
        })

    articles = {r["article"] for r in records}
    observed_charges = {r["charge"] for r in records}
    bins = (0, 6, 9, 12, 24, 36, 60, 84, 120, 180)
    observed_bins = set()
    for r in records:
        m = r["term_months"]
        idx = max(i for i, lo in enumerate(bins) if m >= lo)
        observed_bins.add(idx)
    assert len(records) == N_CASES
    assert len(articles) == 12, sorted(articles)
    assert len(observed_charges) == 8
    assert observed_bins == set(LADDER), sorted(observed_bins)

    with open(OUT, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, ensure_ascii=False) + "\n")
    print(f"wrote {len(records)} cases to {OUT}")
    print(f"articles: {sorted(articles)}")
    print(f"charges: {sorted(observed_charges)}")
    print(f"term bins: {sorted(observed_bins)}")


if __name__ == "__main__":
    main()
