"""User-facing command-line messages."""


class Messages:
    """Collection of user-facing messages."""

    DESCRIPTION = (
        "Sparse-plus-low-rank fine-tuning toolkit: decompose weights, plan budgets, "
        "pretrain a toy encoder, run staged fine-tuning and inspect weight changes."
    )

    # Subcommand help
    HELP_DECOMPOSE = "Select a frozen sparse support for every matching tensor of an archive"
    HELP_PLAN = "Write the parameter/FLOPs budget of a config (or a stored model) without training"
    HELP_PRETRAIN = "Pretrain a dense toy encoder on the source task"
    HELP_DSEE = "Run the three fine-tuning stages on a pretrained archive"
    HELP_SWEEP = "Compare staged fine-tuning with magnitude pruning over sparsity levels"
    HELP_REPORT = "Histogram the weight change between two archives"

    # Progress
    DECOMPOSE_DONE = "Selected supports for {count} tensors -> {path}"
    PLAN_DONE = "trainable_params={trainable} total_params={total} -> {path}"
    PRETRAIN_DONE = "Pretrained to eval accuracy {accuracy:.4f} -> {path}"
    DSEE_DONE = "Final eval accuracy {accuracy:.4f}, trainable {trainable} -> {path}"
    SWEEP_DONE = "Swept {count} sparsity levels -> {path}"
    REPORT_DONE = "Histogram of {count} weight changes -> {path}"

    # Errors
    ERROR_USAGE = "usage error: {error}"
    ERROR_DATA = "error: {error}"
    ERROR_PIPELINE = "pipeline failure: {error}"
    ERROR_NO_MATCH = "no tensor in {path} matches {pattern!r}"
    ERROR_BAD_LEVELS = "--levels expects comma-separated fractions in [0, 1), got {value!r}"
    ERROR_BAD_RANGE = "--range expects LO,HI with LO < HI, got {value!r}"
    ERROR_NO_COMMON = "archives {before} and {after} share no tensor named like {pattern!r}"

    @staticmethod
    def format_error(error_msg: str) -> str:
        """Format a data or format error."""
        return Messages.ERROR_DATA.format(error=error_msg)
