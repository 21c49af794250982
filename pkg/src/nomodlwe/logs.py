import logging
import sys

LOG_FORMAT = "%(asctime)s | %(levelname)s | %(module)s:%(lineno)s:%(funcName)s() | %(message)s"


def init_logging(verbose: bool = False, color: bool = None):
    """
    Route all log records to stderr through a single level-coloured handler.

    Args:
        verbose (bool): Log DEBUG records (per-tour reduction detail) as well.
        color (bool): Force ANSI colours on or off. Default: on when stderr is a terminal.
    """
    if color is None:
        color = sys.stderr.isatty()
    handler_sh = logging.StreamHandler(sys.stderr)
    handler_sh.setFormatter(CustomFormatter(LOG_FORMAT, color=color))
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(format=LOG_FORMAT, level=level, handlers=[handler_sh], force=True)


class CustomFormatter(logging.Formatter):
    """Logging colored formatter, adapted from https://alexandra-zaharia.github.io/posts/make-your-own-custom-color-formatter-with-python-logging"""

    grey = "\x1b[38;21m"
    blue = "\x1b[38;5;39m"
    yellow = "\x1b[38;5;226m"
    red = "\x1b[38;5;196m"
    bold_red = "\x1b[31;1m"
    reset = "\x1b[0m"

    def __init__(self, fmt, color: bool = True):
        super().__init__()
        self.fmt = fmt
        palette = {
            logging.DEBUG: self.grey,
            logging.INFO: self.blue,
            logging.WARNING: self.yellow,
            logging.ERROR: self.red,
            logging.CRITICAL: self.bold_red,
        }
        # Piped output (log files, CI) stays free of escape codes
        self.FORMATS = {
            level: (code + self.fmt + self.reset) if color else self.fmt
            for level, code in palette.items()
        }

    def format(self, record):
        log_fmt = self.FORMATS.get(record.levelno, self.fmt)
        formatter = logging.Formatter(log_fmt)
        return formatter.format(record)
