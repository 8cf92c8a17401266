"""`plan` subcommand: parameter and FLOPs budget without training."""

import logging
import sys

import config
from config import PruningMode
from core.accounting import budget_from_config, budget_from_model
from storage.archive import read_archive
from storage.checkpoints import archive_to_model
from storage.reports import load_pipeline_config, write_gnuplot, write_json_report
from utils.messages import Messages

logger = logging.getLogger(__name__)


class PlanHandlers:
    """Handlers for the plan command."""

    def plan(self, args) -> None:
        """Write the BudgetReport of a config, or of a stored model when --model is given."""
        cfg = load_pipeline_config(args.config)
        if args.model:
            model = archive_to_model(read_archive(args.model))
            structured = cfg.pruning.mode == PruningMode.STRUCTURED.value
            budget = budget_from_model(model, cfg.count_head_params, train_gates=structured)
        else:
            budget = budget_from_config(cfg)
        write_json_report(args.out, budget.to_dict())
        if args.sites:
            write_gnuplot(args.sites, budget.to_frame())
        print(Messages.PLAN_DONE.format(trainable=budget.trainable_params, total=budget.total_params,
                                        path=args.out), file=sys.stderr)


def setup_plan_handlers(subparsers) -> None:
    """Register the plan subcommand."""
    handlers = PlanHandlers()
    parser = subparsers.add_parser(config.Commands.PLAN.value, help=Messages.HELP_PLAN)
    parser.add_argument("--config", required=True, help="Pipeline config JSON")
    parser.add_argument("--model", help="Model archive written by dsee")
    parser.add_argument("--out", required=True, help="Budget report JSON")
    parser.add_argument("--sites", help="Per-site budget table as whitespace-separated columns")
    parser.set_defaults(handler=handlers.plan)
