"""``python -m gmn`` runs the command-line interface."""

from .cli import main

main()
