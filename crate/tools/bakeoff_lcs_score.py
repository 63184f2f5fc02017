"""Word-level P/R/F1 in the style of the classic bakeoff scoring script.

Both files are flattened to one word per line and aligned with a longest
common subsequence over the word sequences, which is what the script's
`diff` step computes. Used to produce the golden files under
crates/core/tests/fixtures.
"""

import sys


def words(path):
    with open(path, encoding="utf-8") as f:
        return [w for line in f for w in line.split()]


def lcs_length(a, b):
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def main(gold_path, pred_path):
    gold, pred = words(gold_path), words(pred_path)
    correct = lcs_length(gold, pred)
    p = correct / len(pred) if pred else 0.0
    r = correct / len(gold) if gold else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    print(f"gold_words\t{len(gold)}")
    print(f"pred_words\t{len(pred)}")
    print(f"correct\t{correct}")
    print(f"P\t{p:.4f}")
    print(f"R\t{r:.4f}")
    print(f"F1\t{f:.4f}")


if __name__ == "__main__":
    main(*sys.argv[1:3])
