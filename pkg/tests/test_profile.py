import math

from ctcpsim.profile import profiled


def foo():
    result = 0.0
    for i in range(100000):
        result += math.sin(i)
    return result


def test_profiled(tmp_path, caplog):
    out = tmp_path / "run.prof"
    with caplog.at_level("INFO", logger="ctcpsim.profile"):
        with profiled(str(out), top=5, sort_by="tottime"):
            foo()
    assert out.stat().st_size > 0
    assert any("profile sorted by tottime" in r.getMessage() for r in caplog.records)


def test_profiled_without_printout():
    with profiled(sort_by=[]) as prof:
        foo()
    assert prof.getstats()
