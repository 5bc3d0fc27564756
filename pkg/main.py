import argparse
import sys
import traceback

from PyQt6.QtCore import QCoreApplication

from controllers.experiment_controller import ExperimentController
from controllers.run_config import RunConfig
from models.classifier import UpdateRule
from models.errors import CareToolkitError
from views.console_log import ConsoleLogView


# Handler for unhandled exceptions
def exception_hook(exctype, value, tb):
    """
    Prints unexpected exceptions with their traceback and exits with code 1
    """
    traceback_str = ''.join(traceback.format_exception(exctype, value, tb))
    sys.stderr.write(f"error[1]: unexpected {exctype.__name__}: {value}\n{traceback_str}")
    sys.exit(1)


def build_parser():
    defaults = RunConfig()
    parser = argparse.ArgumentParser(
        prog="caretoolkit",
        description="Carefulness detection from wrist motion and handover simulation.",
        epilog="Flags override values from --config, which override the defaults shown.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration file")
    common.add_argument("--out", dest="output_dir",
                        help=f"output directory (default: {defaults.output_dir})")
    common.add_argument("--seed", type=int, help=f"run seed (default: {defaults.seed})")
    common.add_argument("--workers", type=int, help=f"thread pool size (default: {defaults.workers})")
    common.add_argument("-v", "--verbose", action="store_true", help="also log progress and state changes")

    classifier = argparse.ArgumentParser(add_help=False)
    classifier.add_argument("--epsilon", type=float,
                            help=f"belief gain (default: {defaults.classifier.epsilon})")
    classifier.add_argument("--threshold", dest="decision_threshold", type=float,
                            help=f"decision threshold (default: {defaults.classifier.decision_threshold})")
    classifier.add_argument("--update-rule", choices=[r.value for r in UpdateRule],
                            help=f"belief update rule (default: {defaults.classifier.update_rule.value})")
    classifier.add_argument("--gate-speed", type=float,
                            help=f"observation gate speed in m/s (default: {defaults.classifier.gate_speed})")

    sub = parser.add_subparsers(dest="command", metavar="command")
    synth = sub.add_parser("synth", parents=[common], help="generate a synthetic labelled dataset")
    synth.add_argument("--n", dest="n_per_label", type=int,
                       help=f"trials per label (default: {defaults.n_per_label})")
    synth.add_argument("--output", help="dataset CSV (default: <out>/train.csv)")

    fit = sub.add_parser("fit", parents=[common, classifier], help="fit the two behaviour models")
    fit.add_argument("--trials", help="training CSV (default: <out>/train.csv)")
    fit.add_argument("--model", help="model file to write (default: <out>/model.txt)")

    classify = sub.add_parser("classify", parents=[common, classifier], help="evaluate the online classifier")
    classify.add_argument("--trials", help="evaluation CSV (default: <out>/eval.csv)")
    classify.add_argument("--model", help="model file (default: <out>/model.txt)")
    classify.add_argument("--no-traces", action="store_true", help="skip the per-trial belief traces")

    simulate = sub.add_parser("simulate", parents=[common, classifier], help="run handover blocks")
    simulate.add_argument("--blocks", dest="n_blocks", type=int,
                          help=f"blocks per condition (default: {defaults.n_blocks})")
    simulate.add_argument("--model", help="model file, optional (default: <out>/model.txt)")

    sub.add_parser("report", parents=[common], help="aggregate tables from classify and simulate outputs")

    pipeline = sub.add_parser("pipeline", parents=[common, classifier], help="run every step in order")
    pipeline.add_argument("--n", dest="n_per_label", type=int,
                          help=f"training trials per label (default: {defaults.n_per_label})")
    pipeline.add_argument("--n-eval", dest="n_eval_per_label", type=int,
                          help=f"evaluation trials per label (default: {defaults.n_eval_per_label})")
    pipeline.add_argument("--blocks", dest="n_blocks", type=int,
                          help=f"blocks per condition (default: {defaults.n_blocks})")
    return parser


def load_config(args):
    """RunConfig from defaults, then the --config file, then flags"""
    config = RunConfig.from_json(args.config) if args.config else RunConfig()
    flags = {name: getattr(args, name, None)
             for name in ("output_dir", "seed", "workers", "n_per_label", "n_eval_per_label", "n_blocks",
                          "epsilon", "decision_threshold", "update_rule", "gate_speed")}
    if getattr(args, "no_traces", False):
        flags["write_traces"] = False
    return config.with_overrides(**flags).validate()


def dispatch(controller, args):
    if args.command == "synth":
        controller.cmd_synth(path=args.output)
    elif args.command == "fit":
        controller.cmd_fit(train_path=args.trials, model_path=args.model)
    elif args.command == "classify":
        controller.cmd_classify(eval_path=args.trials, model_path=args.model)
    elif args.command == "simulate":
        controller.cmd_simulate(model_path=args.model)
    elif args.command == "report":
        controller.cmd_report()
    else:
        controller.cmd_pipeline()


def main(argv=None):
    # Configure the hook for unhandled exceptions
    sys.excepthook = exception_hook

    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    if args.command is None:
        parser.print_help(sys.stderr)
        return 2

    # Initialize the application
    app = QCoreApplication.instance() or QCoreApplication([sys.argv[0] if sys.argv else "caretoolkit"])
    app.setApplicationName("caretoolkit")

    try:
        config = load_config(args)
        controller = ExperimentController(config)
        view = ConsoleLogView(verbose=args.verbose)
        view.attach(controller)
        dispatch(controller, args)
    except CareToolkitError as exc:
        sys.stderr.write(f"error[{exc.exit_code}]: {exc}\n")
        return exc.exit_code
    return 0


if __name__ == "__main__":
    exit_code = main()
    sys.exit(exit_code)
