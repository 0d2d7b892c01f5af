import math

import pytest

from ctcpsim.parallel import run_all


def test_serial():
    assert run_all(math.sqrt, [4, 9, 16]) == [2.0, 3.0, 4.0]
    assert run_all(math.sqrt, []) == []


def test_processes_keep_task_order():
    tasks = list(range(20))
    assert run_all(math.factorial, tasks, workers=3) == [math.factorial(i) for i in tasks]


def test_bad_worker_count():
    with pytest.raises(ValueError):
        run_all(math.sqrt, [1], workers=0)
