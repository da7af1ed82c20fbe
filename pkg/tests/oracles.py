"""Brute-force reference implementations, written independently of the engine."""

from collections import Counter

from migrasim.streamcore import AUCTION, PERSON, Tuple


def join_oracle(inputs: list[Tuple], retention: int | None = None) -> Counter:
    """Lineages ``(person.seq, auction.seq)`` for every person/auction match.

    An auction matches a later person with the same key if it is still
    within ``retention`` of the largest timestamp seen when the person
    arrives.
    """
    out: Counter = Counter()
    high = None
    for i, p in enumerate(inputs):
        high = p.timestamp if high is None else max(high, p.timestamp)
        if p.stream != PERSON:
            continue
        for a in inputs[:i]:
            if a.stream != AUCTION or a.key != p.key:
                continue
            if retention is not None and a.timestamp < high - retention:
                continue
            out[(p.seq, a.seq)] += 1
    return out


def window_oracle(inputs: list[Tuple], extent: int, slide: int) -> dict:
    """``{(key, start): (count, bytes)}`` for every window closed by the last input.

    Inputs must be in timestamp order. A window ``[s, s + extent)`` closes
    once some input has timestamp >= ``s + extent``.
    """
    if not inputs:
        return {}
    high = max(t.timestamp for t in inputs)
    out = {}
    start = 0
    while start + extent <= high:
        for t in inputs:
            if start <= t.timestamp < start + extent:
                c, b = out.get((t.key, start), (0, 0))
                out[(t.key, start)] = (c + 1, b + t.payload_bytes)
        start += slide
    return out
