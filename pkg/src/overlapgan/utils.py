"""
Utility functions for OverlapGAN.

Console output for the CLI and the experiment runner, plus small atomic
file helpers. Library modules never print; they return records and raise.
"""

import json
import os
import tempfile
from pathlib import Path
from typing import Any

from rich.console import Console
from rich.markup import escape
from rich.rule import Rule
from rich.table import Table
from rich.theme import Theme

# Styles used by the training and evaluation output
OVERLAP_THEME = Theme({
    "metric": "cyan",
    "ok": "bold green",
    "error": "bold red",
    "info": "yellow",
    "stage": "bold magenta",
})

console = Console(theme=OVERLAP_THEME)


def print_error(message: str) -> None:
    """Report a failure; multi-line messages keep their bullet lists."""
    console.print(f"\n[error]✗ Error:[/error] {escape(message)}\n", highlight=False)


def print_info(message: str) -> None:
    console.print(f"[info]•[/info] {escape(message)}", highlight=False)


def print_success(message: str) -> None:
    console.print(f"[ok]✓ {escape(message)}[/ok]", highlight=False)


def print_section_header(title: str) -> None:
    """Horizontal rule naming the stage about to run."""
    console.print()
    console.print(Rule(f"[stage]{title}[/stage]", style="metric"))
    console.print()


def format_table_data(headers: list[str], rows: list[list[str]], title: str | None = None) -> None:
    """
    Print a metrics table; every column after the first is right-aligned.

    Args:
        headers: Column names
        rows: Pre-formatted cells
        title: Optional caption above the table
    """
    table = Table(title=title, show_header=True, header_style="stage")
    for i, header in enumerate(headers):
        table.add_column(header, justify="left" if i == 0 else "right", style=None if i == 0 else "metric")
    for row in rows:
        table.add_row(*row)
    console.print(table)


def format_float(value: float | None, digits: int = 4) -> str:
    """Render a metric cell; missing values show as a dash."""
    if value is None:
        return "-"
    return f"{value:.{digits}f}"


def atomic_write_text(path: str | Path, text: str) -> Path:
    """
    Write ``text`` to ``path`` through a temp file and ``os.replace``.

    Readers never observe a half-written file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def atomic_write_json(path: str | Path, data: Any, indent: int | None = 2) -> Path:
    """Write JSON atomically with sorted keys."""
    separators = (",", ":") if indent is None else (",", ": ")
    text = json.dumps(data, indent=indent, sort_keys=True, separators=separators, ensure_ascii=False)
    return atomic_write_text(path, text + "\n")


def read_json(path: str | Path) -> Any:
    """Load a JSON document."""
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)
