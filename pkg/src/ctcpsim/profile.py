import cProfile
import logging
import pstats
from contextlib import contextmanager
from io import StringIO
from typing import Sequence, Union

logger = logging.getLogger(__name__)


@contextmanager
def profiled(
    prof_file: str = None, top: int = 32, sort_by: Union[str, Sequence[str]] = None
):
    """
    Profile a code block; the CLI wraps a whole subcommand in this when
    ``--profile FILE`` is given.

    Args:
        prof_file: file name for a dump of the profile.
            Use ``snakeviz`` to view it later. If ``None`` or ``''``,
            the profile is not saved.
        top: number of top items to log.
        sort_by: sort keys for the printout; default ``cumtime`` and ``tottime``.
            ``[]`` means no printout.

    Usage::

        with profiled('sweep.prof'):
            run_sweep(config)
    """
    if sort_by is None:
        sort_by = ["cumtime", "tottime"]
    if isinstance(sort_by, str):
        sort_by = [sort_by]

    profile = cProfile.Profile()
    profile.enable()
    try:
        yield profile
    finally:
        profile.disable()
        for sb in sort_by:
            s = StringIO()
            pstats.Stats(profile, stream=s).sort_stats(sb).print_stats(top)
            logger.info("profile sorted by %s:\n%s", sb, s.getvalue())
        if prof_file:
            profile.dump_stats(prof_file)
            logger.info("profiling results are saved in %s; view its content using `snakeviz`",
                        prof_file)
