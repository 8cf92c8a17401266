"""`pretrain`, `dsee` and `sweep` subcommands."""

import logging
import sys
from pathlib import Path

import config
from core.exceptions import UsageError
from storage.archive import read_archive, write_archive
from storage.checkpoints import archive_to_model, masks_to_archive, merged_to_archive, model_to_archive
from storage.reports import load_pipeline_config, write_json_report
from training.pipeline import pretrain_dense, run_dsee, sweep_sparsity
from utils.messages import Messages
from utils.validators import parse_levels

logger = logging.getLogger(__name__)


class TrainingHandlers:
    """Handlers for the training commands."""

    def pretrain(self, args) -> None:
        """Pretrain a dense host and store it."""
        cfg = load_pipeline_config(args.config)
        model, report = pretrain_dense(cfg)
        write_archive(args.out, model_to_archive(model, {"stage": "pretrain"}))
        if args.report:
            write_json_report(args.report, report.to_dict())
        print(Messages.PRETRAIN_DONE.format(accuracy=report.eval_accuracy, path=args.out), file=sys.stderr)

    def dsee(self, args) -> None:
        """Run the three stages and write every artifact into --out-dir."""
        cfg = load_pipeline_config(args.config)
        pretrained = archive_to_model(read_archive(args.pretrained))
        result = run_dsee(cfg, pretrained)

        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_archive(out_dir / "final.dsee", model_to_archive(result.model, {"stage": "III"}))
        write_archive(out_dir / "merged.dsee", merged_to_archive(result.model))
        write_archive(out_dir / "masks.dsee", masks_to_archive(result.masks))
        for report in result.reports:
            write_json_report(out_dir / f"stage_{report.stage}.json", report.to_dict())
        write_json_report(out_dir / "budget.json", result.budget.to_dict())
        write_json_report(out_dir / "config.json", cfg.to_dict())
        print(Messages.DSEE_DONE.format(accuracy=result.reports[-1].eval_accuracy,
                                        trainable=result.budget.trainable_params, path=out_dir),
              file=sys.stderr)

    def sweep(self, args) -> None:
        """Compare staged fine-tuning with the magnitude baseline per sparsity level."""
        levels = parse_levels(args.levels)
        if levels is None:
            raise UsageError(Messages.ERROR_BAD_LEVELS.format(value=args.levels))
        cfg = load_pipeline_config(args.config)
        pretrained = archive_to_model(read_archive(args.pretrained))
        points = sweep_sparsity(cfg, pretrained, levels)
        write_json_report(args.out, {"points": [p.to_dict() for p in points]})
        print(Messages.SWEEP_DONE.format(count=len(points), path=args.out), file=sys.stderr)


def setup_training_handlers(subparsers) -> None:
    """Register pretrain, dsee and sweep."""
    handlers = TrainingHandlers()

    parser = subparsers.add_parser(config.Commands.PRETRAIN.value, help=Messages.HELP_PRETRAIN)
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", required=True, help="Model archive")
    parser.add_argument("--report", help="Optional StageReport JSON")
    parser.set_defaults(handler=handlers.pretrain)

    parser = subparsers.add_parser(config.Commands.DSEE.value, help=Messages.HELP_DSEE)
    parser.add_argument("--config", required=True)
    parser.add_argument("--pretrained", required=True, help="Archive written by pretrain")
    parser.add_argument("--out-dir", required=True)
    parser.set_defaults(handler=handlers.dsee)

    parser = subparsers.add_parser(config.Commands.SWEEP.value, help=Messages.HELP_SWEEP)
    parser.add_argument("--config", required=True)
    parser.add_argument("--pretrained", required=True)
    parser.add_argument("--levels", required=True, help="Comma-separated sparsity levels")
    parser.add_argument("--out", required=True)
    parser.set_defaults(handler=handlers.sweep)
