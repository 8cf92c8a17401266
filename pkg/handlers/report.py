"""`report` subcommand: histogram of weight changes between two archives."""

import fnmatch
import logging
import sys
from typing import Dict

import numpy as np

import config
from core.accounting import delta_histogram
from core.exceptions import InputError, UsageError
from storage.archive import TensorArchive, read_archive
from storage.checkpoints import MERGED_PREFIX, MODEL_KIND, archive_to_model, merged_to_archive
from storage.reports import write_gnuplot, write_json_report
from utils.messages import Messages

logger = logging.getLogger(__name__)


def site_matrices(archive: TensorArchive) -> Dict[str, np.ndarray]:
    """Deployed matrices by site name from a model or merged archive; other archives as stored."""
    if archive.meta.get("kind") == MODEL_KIND:
        archive = merged_to_archive(archive_to_model(archive))
    out = {}
    for name, value in archive.tensors.items():
        if value.ndim != 2 or value.dtype != np.float32:
            continue
        key = name[len(MERGED_PREFIX):] if name.startswith(MERGED_PREFIX) else name
        out[key] = value
    return out


def parse_range(text: str):
    try:
        lo, hi = (float(x) for x in text.split(","))
    except ValueError:
        raise UsageError(Messages.ERROR_BAD_RANGE.format(value=text))
    if not lo < hi:
        raise UsageError(Messages.ERROR_BAD_RANGE.format(value=text))
    return lo, hi


class ReportHandlers:
    """Handlers for the report command."""

    def report(self, args) -> None:
        """Histogram every matching site's change, pooled across sites."""
        if args.bins < 1:
            raise UsageError("--bins must be positive")
        before = site_matrices(read_archive(args.before))
        after = site_matrices(read_archive(args.after))
        names = sorted(
            n for n in set(before) & set(after)
            if fnmatch.fnmatchcase(n, args.pattern) and before[n].shape == after[n].shape
        )
        if not names:
            raise InputError(Messages.ERROR_NO_COMMON.format(before=args.before, after=args.after,
                                                             pattern=args.pattern))
        w_before = np.concatenate([before[n].ravel() for n in names])[None, :]
        w_after = np.concatenate([after[n].ravel() for n in names])[None, :]
        if args.range:
            value_range = parse_range(args.range)
        else:
            peak = float(np.max(np.abs(w_after.astype(np.float64) - w_before.astype(np.float64))))
            value_range = (-peak, peak) if peak > 0 else (-1.0, 1.0)

        hist = delta_histogram(w_before, w_after, args.bins, value_range)
        data = hist.to_dict()
        data["sites"] = names
        write_json_report(args.out, data)
        if args.gnuplot:
            write_gnuplot(args.gnuplot, hist.to_frame())
        print(Messages.REPORT_DONE.format(count=w_before.size, path=args.out), file=sys.stderr)


def setup_report_handlers(subparsers) -> None:
    """Register the report subcommand."""
    handlers = ReportHandlers()
    parser = subparsers.add_parser(config.Commands.REPORT.value, help=Messages.HELP_REPORT)
    parser.add_argument("--before", required=True)
    parser.add_argument("--after", required=True)
    parser.add_argument("--bins", type=int, required=True)
    parser.add_argument("--range", help="LO,HI (default: symmetric around the largest change)")
    parser.add_argument("--pattern", default="*", help="Glob over site names")
    parser.add_argument("--out", required=True, help="Histogram JSON")
    parser.add_argument("--gnuplot", help="Optional gnuplot column file")
    parser.set_defaults(handler=handlers.report)
