"""
Configure logging, mainly the format.

A call to ``config_logger`` in the launching script (the CLI does this)
is all that is needed::

  config_logger(level='info')

Do not call this in library modules. Library modules have ::

   logger = logging.getLogger(__name__)

and just use ``logger``.

Records carry the simulator's virtual time as ``%(simtime)s`` next to the
wall-clock time. A running simulation binds its clock with
``VirtualClockFilter.bind``; outside a run the field shows ``-``.
"""
import logging
import logging.handlers
import os
import sys
import warnings
from datetime import datetime
from typing import Callable, Optional, Union

logging.captureWarnings(True)
warnings.filterwarnings("default", category=ResourceWarning)
warnings.filterwarnings("default", category=DeprecationWarning)


rootlogger = logging.getLogger()
logger = logging.getLogger(__name__)


class VirtualClockFilter(logging.Filter):
    _clock: Optional[Callable[[], float]] = None

    @classmethod
    def bind(cls, clock: Optional[Callable[[], float]]) -> Optional[Callable[[], float]]:
        """Install ``clock``; return the previous one so it can be restored."""
        previous = cls._clock
        cls._clock = clock
        return previous

    def filter(self, record):
        clock = type(self)._clock
        record.simtime = f"{clock():.6f}s" if clock is not None else "-"
        return True


def formatter(*, with_process_name: bool = False):
    tz = datetime.now().astimezone().tzname()
    msg = (
        "[%(asctime)s.%(msecs)03d "
        + tz
        + " | sim %(simtime)s; %(levelname)s; %(name)s, %(funcName)s, %(lineno)d]"
    )
    msg += "  "

    # Worker processes of a parallel sweep log through the same handlers.
    if with_process_name:
        fmt = f"{msg}[%(processName)s (%(process)d)]  %(message)s"
    else:
        fmt = f"{msg}%(message)s"

    return logging.Formatter(fmt=fmt, datefmt="%Y-%m-%d %H:%M:%S")


def set_level(level: Union[str, int] = logging.INFO):
    """
    In one application, call `set_level` on the top level once.
    Do not set level anywhere else, and do not set level on any handler.
    """
    if isinstance(level, str):
        level = getattr(logging, level.upper())
    level0 = rootlogger.level
    rootlogger.setLevel(level)
    return level0


def _find_handler(name: str):
    for h in rootlogger.handlers:
        if getattr(h, "_name_", None) == name:
            return h
    return None


def use_console_handler(**kwargs):
    if _find_handler("console") is not None:
        raise RuntimeError("the console handler is already in being used")
    h = logging.StreamHandler()
    h.setFormatter(formatter(**kwargs))
    h.addFilter(VirtualClockFilter())
    h._name_ = "console"
    rootlogger.addHandler(h)
    return h


def _unuse_handler(name: str):
    h = _find_handler(name)
    if h is None:
        return 0
    rootlogger.removeHandler(h)
    h.close()
    return 1


def unuse_console_handler():
    return _unuse_handler("console")


def use_disk_handler(
    *, foldername: str = None, maxBytes=1_000_000, backupCount=20, delay=True, **kwargs
):
    """
    Rotating log files in ``foldername``, default ``$LOGDIR/ctcpsim``
    (``/tmp/log/ctcpsim`` when ``LOGDIR`` is not set).
    """
    if _find_handler("disk") is not None:
        raise RuntimeError("the disk handler is already in being used")

    if foldername:
        foldername = foldername.rstrip("/")
    else:
        foldername = f"{os.environ.get('LOGDIR', '/tmp/log')}/ctcpsim"
    logger.info("log files are located in '%s'", foldername)
    os.makedirs(foldername, exist_ok=True)
    h = logging.handlers.RotatingFileHandler(
        filename=foldername + "/current",
        maxBytes=maxBytes,
        backupCount=backupCount,
        delay=delay,
    )
    h.setFormatter(formatter(**kwargs))
    h.addFilter(VirtualClockFilter())
    h._name_ = "disk"
    rootlogger.addHandler(h)
    return foldername


def unuse_disk_handler():
    return _unuse_handler("disk")


def log_uncaught_exception(logger=logger):
    # Bind `logger` locally in case the global reference is gone
    # when the hook runs.
    def handle_exception(exc_type, exc_val, exc_tb):
        if not issubclass(exc_type, KeyboardInterrupt):
            logger.critical(
                "uncaught exception: %s", exc_val, exc_info=(exc_type, exc_val, exc_tb)
            )
        else:
            sys.__excepthook__(exc_type, exc_val, exc_tb)

    sys.excepthook = handle_exception


def config_logger(level=logging.INFO, **kwargs):
    # For use in launching scripts.
    set_level(level)
    if _find_handler("console") is None:
        use_console_handler(**kwargs)
