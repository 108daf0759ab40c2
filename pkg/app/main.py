import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import List, Optional

# Add project root to sys.path so 'app' is recognized as a package
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from app.core.config import validate_config
from app.core.errors import AcceptanceFailure, ConfigError, VnsError
from app.core.parallel import default_threads
from app.core.presets import PRESETS
from app.core.runner import resolve_config, run
from app.core.stores import HistoryStore, SettingsStore
from app.core.utils import APP_NAME, APP_VERSION
from app.physics.egc import EgcQuery, EgcReport, verify_egc
from app.physics.fields import PrescribedField, ZeroField
from app.physics.oracle import ORACLES, evaluate_oracle
from app.physics.series import DecayFit, DiagnosticsSeries, fit_decay

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_ACCEPTANCE = 3


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--verbose", action="store_true", help="debug logging")
    parser = argparse.ArgumentParser(prog=APP_NAME, description="Vlasov–Navier–Stokes half-space simulator")
    parser.add_argument("--version", action="version", version=f"%(prog)s {APP_VERSION}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", parents=[common], help="run a preset or a config file")
    p_run.add_argument("--preset", choices=sorted(PRESETS))
    p_run.add_argument("--config", type=Path, help="key=value config; its keys override the preset")
    p_run.add_argument("--out", type=Path, required=True, help="output directory")
    p_run.add_argument("--history-dir", type=Path, help="where history.jsonl lives (default: settings dir)")

    p_egc = sub.add_parser("egc-check", parents=[common], help="empirical exit geometric condition")
    p_egc.add_argument("--L", type=float, default=1.0)
    p_egc.add_argument("--R", type=float, default=1.0)
    p_egc.add_argument("--T", type=float, default=3.0)
    p_egc.add_argument("--g", type=float, default=1.0)
    p_egc.add_argument("--mode", choices=("gravity_only", "prescribed_field"), default="gravity_only")
    p_egc.add_argument("--samples", type=int, default=100000)
    p_egc.add_argument("--seed", type=int, default=1234)
    p_egc.add_argument("--dt", type=float, default=1e-2)
    p_egc.add_argument("--field-profile", choices=("shear", "cellular"), default="cellular")
    p_egc.add_argument("--field-budget", type=float, default=0.0,
                       help="integral of the sup norm over [0, T] for the prescribed field")

    p_fit = sub.add_parser("decay-fit", parents=[common], help="fit a power-law decay to a CSV column")
    p_fit.add_argument("csv", type=Path)
    p_fit.add_argument("column")
    p_fit.add_argument("t_lo", type=float)
    p_fit.add_argument("t_hi", type=float)

    p_oracle = sub.add_parser("oracle", parents=[common], help="print a reference value")
    p_oracle.add_argument("name", choices=sorted(ORACLES))
    p_oracle.add_argument("params", nargs="*", help="key=value parameters")

    sub.add_parser("monitor", parents=[common], help="open the desktop run monitor")
    return parser


def _write_row(row) -> None:
    csv.writer(sys.stdout, lineterminator="\n").writerow(row)


def cmd_run(args) -> int:
    if args.preset is None and args.config is None:
        raise ConfigError("run needs --preset or --config")
    cfg, preset = resolve_config(args.preset, args.config)
    validate_config(cfg)
    history = HistoryStore(SettingsStore(args.history_dir))
    result = run(cfg, args.out, preset, history)
    for check in result.checks:
        _write_row((check.name, int(check.passed), check.detail))
    return EXIT_OK


def cmd_egc_check(args) -> int:
    query = EgcQuery(args.L, args.R, args.T)
    if args.mode == "gravity_only":
        u = ZeroField()
    else:
        u = PrescribedField.for_budget(args.field_profile, args.field_budget, args.T)
    report = verify_egc(query, args.mode, u, args.samples, args.seed, args.g, args.dt,
                        threads=default_threads())
    _write_row(EgcReport.CSV_HEADER)
    _write_row(report.csv_row())
    return EXIT_OK if report.satisfied else EXIT_RUNTIME


def cmd_decay_fit(args) -> int:
    series = DiagnosticsSeries.from_csv(args.csv)
    fit = fit_decay(series, args.column, (args.t_lo, args.t_hi))
    _write_row(DecayFit.CSV_HEADER)
    _write_row(fit.csv_row())
    return EXIT_OK


def cmd_oracle(args) -> int:
    params = {}
    for item in args.params:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"oracle parameters look like key=value, got '{item}'")
        params[key] = value
    print(repr(evaluate_oracle(args.name, params)))
    return EXIT_OK


def cmd_monitor(args) -> int:
    from PySide6.QtWidgets import QApplication

    from app.ui.main_window import MainWindow

    app = QApplication(sys.argv)
    window = MainWindow()
    window.show()
    return app.exec()


COMMANDS = {
    "run": cmd_run,
    "egc-check": cmd_egc_check,
    "decay-fit": cmd_decay_fit,
    "oracle": cmd_oracle,
    "monitor": cmd_monitor,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except AcceptanceFailure as exc:
        logger.error("%s", exc)
        return EXIT_ACCEPTANCE
    except (VnsError, ValueError, KeyError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
