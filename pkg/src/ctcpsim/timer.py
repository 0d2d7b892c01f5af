import time
from contextlib import contextmanager
from typing import Callable, List


def humanize(seconds: float) -> List[str]:
    msg = []
    if seconds >= 3600:
        hours, seconds = divmod(seconds, 3600)
        hours = int(hours)
        msg.append(f"{hours} hour" if hours < 2 else f"{hours} hours")
    if seconds >= 60:
        minutes, seconds = divmod(seconds, 60)
        minutes = int(minutes)
        msg.append(f"{minutes} minute" if minutes < 2 else f"{minutes} minutes")
    msg.append(f"{round(seconds, 4)} seconds")
    return msg


def timed_call(func, *args, **kwargs):
    """Return ``func(*args, **kwargs)`` and the wall-clock seconds it took."""
    t0 = time.monotonic()
    z = func(*args, **kwargs)
    seconds = time.monotonic() - t0
    return z, seconds


@contextmanager
def timer(msg: str, print_func: Callable[[str], None] = print):
    """
    Time a code block::

        with timer('sweep', logger.info):
            run_sweep(config)
    """
    t0 = time.monotonic()
    yield
    t1 = time.monotonic()
    print_func(f"{msg}: {', '.join(humanize(t1 - t0))}")
