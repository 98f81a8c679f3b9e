"""Independent reference implementations used to cross-check the package."""
from functools import lru_cache


def levenshtein_full_matrix(a: str, b: str) -> int:
    """Textbook (len(a)+1) x (len(b)+1) table, filled row by row."""
    table = [[0] * (len(b) + 1) for _ in range(len(a) + 1)]
    for i in range(len(a) + 1):
        table[i][0] = i
    for j in range(len(b) + 1):
        table[0][j] = j
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            sub = 0 if a[i - 1] == b[j - 1] else 1
            table[i][j] = min(table[i - 1][j] + 1, table[i][j - 1] + 1, table[i - 1][j - 1] + sub)
    return table[len(a)][len(b)]


def levenshtein_recursive(a: str, b: str) -> int:
    @lru_cache(maxsize=None)
    def dist(i, j):
        if i == 0 or j == 0:
            return i + j
        return min(dist(i - 1, j) + 1, dist(i, j - 1) + 1, dist(i - 1, j - 1) + (a[i - 1] != b[j - 1]))
    return dist(len(a), len(b))


def anls_reference(pred: str, golds, threshold: float = 0.5) -> float:
    best = 0.0
    p = pred.strip().lower()
    for g in golds:
        g = g.strip().lower()
        n = max(len(p), len(g))
        nl = levenshtein_recursive(p, g) / n if n else 0.0
        best = max(best, 1 - nl if nl < threshold else 0.0)
    return best
