"""
Configuration for mutmut.

See https://mutmut.readthedocs.io/en/latest/
"""

from mutmut import Context


def pre_mutation(context: Context) -> None:
    """
    Skip lines whose mutants only change log output or the version string.

    Args:
        context: A mutmut Context object
    """
    line = context.current_source_line.strip()
    if (
        "_version" in context.filename
        or "pragma: no cover" in line
        or line.startswith(("logger", "logger_warning(", "logger_error("))
    ):
        context.skip = True
