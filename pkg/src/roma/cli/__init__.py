"""Configuration and subcommands of the ``roma`` tool."""
from roma.cli.config import RunConfig, parse_config
