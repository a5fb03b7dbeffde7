"""File-access recorder built on ``sys.addaudithook`` (hooks cannot be removed, so it is armed on demand)."""
import sys

_opened: list[str] | None = None


def _hook(event, args):
    if event == "open" and _opened is not None and isinstance(args[0], (str, bytes)):
        _opened.append(str(args[0]))


sys.addaudithook(_hook)


def record_opens(fn):
    """Call ``fn`` and return the paths it opened."""
    global _opened
    _opened = []
    try:
        fn()
        return list(_opened)
    finally:
        _opened = None
