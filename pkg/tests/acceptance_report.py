"""Collects one pass/fail line per acceptance criterion for the terminal summary."""
import contextlib
import time

RESULTS: list[str] = []


@contextlib.contextmanager
def criterion(number: int, title: str):
    """Record PASS/FAIL for the enclosed block; ``detail`` may be appended by the caller."""
    info = {"detail": ""}
    start = time.perf_counter()
    ok = False
    try:
        yield info
        ok = True
    finally:
        seconds = time.perf_counter() - start
        line = (f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}"
                f" ({seconds:.1f}s){' - ' + info['detail'] if info['detail'] else ''}")
        RESULTS.append(line)
        print(line)
