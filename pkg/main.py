import sys
import argparse
import logging

from rich.color import Color
from rich.console import Console
from rich.logging import RichHandler
from rich.style import Style
from rich.text import Text

from config import build_run_config, load_run_config
from blasso.definitions import COMMANDS, GLOBAL_OPTIONS
from blasso.manager import run

# --- Global Variables ---
console = Console(stderr=True)

_ARG_TYPES = {"string": str, "number": float, "integer": int}


# --- Banner ---
BANNER_STOPS = [(230, 57, 70), (241, 143, 1), (42, 157, 143), (38, 70, 83)]


def gradient_color(position):
    """Piecewise-linear blend across BANNER_STOPS for position in [0, 1]."""
    position = min(max(position, 0.0), 1.0)
    scaled = position * (len(BANNER_STOPS) - 1)
    k = min(int(scaled), len(BANNER_STOPS) - 2)
    frac = scaled - k
    lo, hi = BANNER_STOPS[k], BANNER_STOPS[k + 1]
    return Color.from_rgb(*(round(a + (b - a) * frac) for a, b in zip(lo, hi)))


def render_banner(art):
    """Rich Text with a left-to-right gradient, shifted a little per row."""
    rows = art.strip("\n").split("\n")
    width = max(len(row) for row in rows) or 1
    text = Text()
    for r, row in enumerate(rows):
        for c, ch in enumerate(row):
            if ch == " ":
                text.append(ch)
                continue
            shade = gradient_color((c + 2 * r) / (width + 2 * len(rows)))
            text.append(ch, style=Style(color=shade, bold=True))
        text.append("\n")
    return text


def show_logo():
    logo = r'''
  _____                                     _     _
 |_   _| __ __ _ _ __  ___ _ __   ___  _ __| |_  | |    __ _ ___ ___  ___
   | || '__/ _` | '_ \/ __| '_ \ / _ \| '__| __| | |   / _` / __/ __|/ _ \
   | || | | (_| | | | \__ \ |_) | (_) | |  | |_  | |__| (_| \__ \__ \ (_) |
   |_||_|  \__,_|_| |_|___/ .__/ \___/|_|   \__| |_____\__,_|___/___/\___/
                          |_|
'''
    console.print(render_banner(logo), highlight=False)


# --- Command Line ---
def _add_option(parser, dest, spec):
    kwargs = {"dest": dest, "help": spec.get("description"), "default": None}
    if spec["type"] == "boolean":
        kwargs["action"] = "store_true"
        kwargs["default"] = None
    elif spec["type"] == "array":
        kwargs["type"] = _ARG_TYPES[spec.get("items", "number")]
        kwargs["nargs"] = "+"
    else:
        kwargs["type"] = _ARG_TYPES[spec["type"]]
        if "enum" in spec:
            kwargs["choices"] = spec["enum"]
    parser.add_argument(spec["flag"], **kwargs)


def build_parser():
    """argparse tree generated from the command table."""
    parser = argparse.ArgumentParser(prog="transport-lasso",
                                     description="Bayesian Lasso posteriors by transport maps and Gibbs sampling")
    parser.add_argument("--no-logo", action="store_true", help="Skip the banner")
    subparsers = parser.add_subparsers(dest="subcommand", required=True)
    for command in COMMANDS:
        sub = subparsers.add_parser(command["name"], help=command["description"], description=command["description"])
        for dest, spec in {**GLOBAL_OPTIONS, **command["parameters"]["properties"]}.items():
            _add_option(sub, dest, spec)
    return parser


def setup_logging(verbose=False):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, rich_tracebacks=True, show_path=False)],
    )


def main(argv=None):
    args = build_parser().parse_args(argv)
    if not args.no_logo:
        show_logo()
    values = vars(args)
    setup_logging(bool(values.pop("verbose", False)))
    values.pop("no_logo", None)
    file_values = load_run_config(values.pop("config", None))
    preset = values.pop("preset", None)
    config = build_run_config(values, file_values=file_values, preset=preset)
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
