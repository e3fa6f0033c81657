"""Collects one verdict line per acceptance criterion for the terminal summary."""

_results = {}


def record(criterion, passed, detail):
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'} - {detail}"
    _results[criterion] = line
    print(line)
    return passed


def lines():
    return [_results[k] for k in sorted(_results, key=str)]
