"""Collects one verdict line per acceptance criterion."""

_results = {}


def record(number, title, ok, detail=""):
    status = "PASS" if ok is True else ("SKIP" if ok is None else "FAIL")
    line = f"[{status}] criterion {number:>2}: {title}" + (f" ({detail})" if detail else "")
    _results[number] = line
    print(line)
    return ok


def lines():
    return [_results[k] for k in sorted(_results)]
