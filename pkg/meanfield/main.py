import argparse
import sys

from meanfield.database import initialize_database
from meanfield.handlers.command_handlers import (
    handle_command_converge,
    handle_command_print_schema,
    handle_command_simulate,
    handle_command_verify,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meanfield",
        description="Particle approximations of the Vlasov equation with singular forces",
    )
    verbs = parser.add_subparsers(dest="verb", required=True)

    simulate = verbs.add_parser("simulate", help="Run every N of a config and write the bundle")
    simulate.add_argument("config", help="Experiment config (key = value)")
    simulate.add_argument("--output", default=None, help="Root directory for bundles")
    simulate.set_defaults(handler=handle_command_simulate)

    converge = verbs.add_parser("converge", help="Compare the particle runs with the grid oracle (d = 1)")
    converge.add_argument("config", help="Experiment config (key = value)")
    converge.add_argument("--output", default=None, help="Root directory for bundles")
    converge.set_defaults(handler=handle_command_converge)

    verify = verbs.add_parser("verify", help="Re-check the invariants recorded in a bundle")
    verify.add_argument("bundle", help="Bundle directory")
    verify.set_defaults(handler=handle_command_verify)

    schema = verbs.add_parser("print-schema", help="Describe the bundle files")
    schema.set_defaults(handler=handle_command_print_schema)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.handler(args)


if __name__ == "__main__":
    # Initialize the database
    initialize_database()

    sys.exit(main())
