import time

from ctcpsim.timer import humanize, timed_call, timer


def test_humanize():
    assert humanize(1.23456) == ["1.2346 seconds"]
    assert humanize(61.0) == ["1 minute", "1.0 seconds"]
    assert humanize(2 * 3600 + 5 * 60 + 3) == ["2 hours", "5 minutes", "3 seconds"]


def test_timed_call():
    z, seconds = timed_call(sum, [1, 2, 3])
    assert z == 6
    assert seconds >= 0


def test_timer():
    lines = []
    with timer("nap", lines.append):
        time.sleep(0.01)
    (line,) = lines
    assert line.startswith("nap: ")
    assert line.endswith("seconds")
