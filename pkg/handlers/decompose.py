"""`decompose` subcommand: frozen sparse supports for archived weight matrices."""

import fnmatch
import logging
import sys

import numpy as np

import config
from config import SupportMethod, POWER_ITERS, SOLVER_MAX_ITER, SOLVER_TOL
from core.decompose import extract_support, select_support, solve_slr
from core.exceptions import InputError
from core.linalg import as_matrix, derive_rng
from storage.archive import TensorArchive, read_archive, write_archive
from utils.messages import Messages

logger = logging.getLogger(__name__)


class DecomposeHandlers:
    """Handlers for the decompose command."""

    def decompose(self, args) -> None:
        """Select a support of size N for each matching float32 matrix."""
        source = read_archive(args.input)
        names = [
            n for n in sorted(source.tensors)
            if fnmatch.fnmatchcase(n, args.pattern)
            and source.tensors[n].ndim == 2
            and source.tensors[n].dtype == np.float32
        ]
        if not names:
            raise InputError(Messages.ERROR_NO_MATCH.format(path=args.input, pattern=args.pattern))

        seed = config.resolve_seed(args.seed)
        out = TensorArchive(meta={
            "kind": "dsee-supports",
            "method": args.method,
            "rank": str(args.rank),
            "card": str(args.card),
            "seed": str(seed),
        })
        for name in names:
            w = as_matrix(source.tensors[name], name)
            rng = derive_rng(seed, name)
            if args.method == SupportMethod.DECOMPOSE.value:
                result = solve_slr(w, args.rank, args.card, tol=args.tol, max_iter=args.max_iter,
                                   rng=rng, power_iters=args.power_iters)
                support = extract_support(result.s, args.card)
                logger.info(f"{name}: {result.iterations} iterations, residual {result.residual_history[-1]:.4e}")
            else:
                support = select_support(w, args.method, args.card, args.rank, rng)
            out.tensors[f"{name}.support"] = support.indices.astype(np.int64)
            # sparse updates start from zero on the support
            out.tensors[f"{name}.s2_values"] = np.zeros(support.card, dtype=np.float32)

        write_archive(args.out, out)
        print(Messages.DECOMPOSE_DONE.format(count=len(names), path=args.out), file=sys.stderr)


def setup_decompose_handlers(subparsers) -> None:
    """Register the decompose subcommand."""
    handlers = DecomposeHandlers()
    parser = subparsers.add_parser(config.Commands.DECOMPOSE.value, help=Messages.HELP_DECOMPOSE)
    parser.add_argument("--input", required=True, help="Source tensor archive")
    parser.add_argument("--rank", type=int, required=True, help="Low-rank part rank r")
    parser.add_argument("--card", type=int, required=True, help="Support size N")
    parser.add_argument("--method", choices=[m.value for m in SupportMethod],
                        default=SupportMethod.DECOMPOSE.value)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--pattern", default="*", help="Glob over tensor names")
    parser.add_argument("--tol", type=float, default=SOLVER_TOL)
    parser.add_argument("--max-iter", type=int, default=SOLVER_MAX_ITER)
    parser.add_argument("--power-iters", type=int, default=POWER_ITERS)
    parser.add_argument("--out", required=True, help="Output archive")
    parser.set_defaults(handler=handlers.decompose)
