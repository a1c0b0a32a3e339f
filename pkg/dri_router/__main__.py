"""
Main entry point for the DRI CLI.
Allows running the CLI with: python -m dri_router
"""

from .cli.main import cli

if __name__ == '__main__':
    cli()
