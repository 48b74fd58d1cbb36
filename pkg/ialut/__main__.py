"""Allows running as: python -m ialut <command> ..."""

from ialut.cli import main

main()
