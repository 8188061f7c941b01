"""
Fuzzy Configuration Key Matcher

Turns misspelled configuration keys and section names into suggestions:
- Case and separator normalization: Batch-Size → batch_size
- Typo correction: lerning_rate → learning_rate (Levenshtein distance)
"""

import difflib
from typing import Iterable, List, Optional

# Try to import Levenshtein for better performance, fall back to difflib
try:
    import Levenshtein
    HAS_LEVENSHTEIN = True
except ImportError:
    HAS_LEVENSHTEIN = False


def calculate_distance(s1: str, s2: str) -> int:
    """
    Calculate edit distance between two strings.

    Uses Levenshtein if available, otherwise counts the edits in difflib's
    opcodes (an upper bound on the Levenshtein distance, never zero for
    distinct strings).
    """
    if HAS_LEVENSHTEIN:
        return Levenshtein.distance(s1, s2)
    opcodes = difflib.SequenceMatcher(None, s1, s2, autojunk=False).get_opcodes()
    return sum(max(i2 - i1, j2 - j1) for tag, i1, i2, j1, j2 in opcodes if tag != "equal")


def normalize_key(key: str) -> str:
    """Lowercase and map dashes/spaces to underscores (``--batch-size`` → ``batch_size``)"""
    return key.strip().lstrip("-").lower().replace("-", "_").replace(" ", "_")


def find_close_matches(
    key: str,
    candidates: Iterable[str],
    max_distance: int = 3,
    max_results: int = 3
) -> List[str]:
    """
    Find candidate keys within ``max_distance`` edits, closest first.

    Ties keep the candidates' original order.
    """
    wanted = normalize_key(key)
    scored = []
    for position, candidate in enumerate(candidates):
        distance = calculate_distance(wanted, candidate)
        if distance <= max_distance:
            scored.append((distance, position, candidate))
    scored.sort()
    return [candidate for _, _, candidate in scored[:max_results]]


def match_key(key: str, candidates: Iterable[str]) -> Optional[str]:
    """
    Resolve a key to a known candidate.

    Exact matches after normalization win; anything else returns None so the
    caller can report suggestions instead of silently guessing.
    """
    wanted = normalize_key(key)
    for candidate in candidates:
        if wanted == candidate:
            return candidate
    return None
