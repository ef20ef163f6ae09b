"""Run the simulator from a source checkout: ``python main.py <command> ...``."""

from afc_memory.cli import cli_main

if __name__ == "__main__":
    raise SystemExit(cli_main())
