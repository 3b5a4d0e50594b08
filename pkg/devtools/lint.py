import argparse
import subprocess

from funlog import log_calls
from rich import get_console, reconfigure
from rich import print as rprint

SRC_PATHS = ["src", "tests", "devtools"]
DOC_PATHS = ["README.md", "development.md", "installation.md", "docs", "configs"]


reconfigure(emoji=not get_console().options.legacy_windows)  # No emojis on legacy windows.


def commands(check: bool) -> list[list[str]]:
    """
    Lint steps in order; `check` reports problems without rewriting files
    """
    if check:
        return [
            ["codespell", *SRC_PATHS, *DOC_PATHS],
            ["ruff", "check", *SRC_PATHS],
            ["ruff", "format", "--check", *SRC_PATHS],
            ["basedpyright", "--stats", *SRC_PATHS],
        ]
    return [
        ["codespell", "--write-changes", *SRC_PATHS, *DOC_PATHS],
        ["ruff", "check", "--fix", *SRC_PATHS],
        ["ruff", "format", *SRC_PATHS],
        ["basedpyright", "--stats", *SRC_PATHS],
    ]


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="Run the project's linters")
    parser.add_argument("--check", action="store_true", help="do not rewrite files")
    args = parser.parse_args(argv)

    rprint()
    errcount = sum(run(cmd) for cmd in commands(args.check))
    rprint()

    if errcount != 0:
        rprint(f"[bold red]:x: Lint failed with {errcount} errors.[/bold red]")
    else:
        rprint("[bold green]:white_check_mark: Lint passed![/bold green]")
    rprint()

    return errcount


@log_calls(level="warning", show_timing_only=True)
def run(cmd: list[str]) -> int:
    rprint()
    rprint(f"[bold green]>> {' '.join(cmd)}[/bold green]")
    try:
        # basedpyright warnings are allowed, errors are not
        if cmd[0] == "basedpyright":
            result = subprocess.run(cmd, text=True, check=False, capture_output=True, encoding="utf-8")
            output = result.stdout + result.stderr
            rprint(output)
            return 0 if "0 errors" in output else 1
        subprocess.run(cmd, text=True, check=True)
    except KeyboardInterrupt:
        rprint("[yellow]Keyboard interrupt - Cancelled[/yellow]")
        return 1
    except subprocess.CalledProcessError as e:
        rprint(f"[bold red]Error: {e}[/bold red]")
        return 1
    except FileNotFoundError as e:
        rprint(f"[bold red]Missing tool {cmd[0]}: {e}[/bold red]")
        return 1
    return 0


if __name__ == "__main__":
    exit(main())
