import contextlib
import time

import pytest

_LINES = pytest.StashKey[list]()


class _Record:
    detail = ""


@pytest.fixture
def acceptance(request):
    """Context manager that times a criterion and logs one PASS/FAIL line for it."""
    lines = request.config.stash.setdefault(_LINES, [])

    @contextlib.contextmanager
    def run(name, limit_s):
        rec = _Record()
        start = time.perf_counter()
        try:
            yield rec
        except BaseException as exc:
            elapsed = time.perf_counter() - start
            msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
            lines.append(f"FAIL {name} [{elapsed:.1f}s] {msg}")
            print(lines[-1])
            raise
        elapsed = time.perf_counter() - start
        ok = elapsed < limit_s
        lines.append(f"{'PASS' if ok else 'FAIL'} {name} [{elapsed:.1f}s < {limit_s}s] {rec.detail}".rstrip())
        print(lines[-1])
        assert ok, f"{name} took {elapsed:.1f}s, limit {limit_s}s"

    return run


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
