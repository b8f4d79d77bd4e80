"""Parsing, simulation and verification of State Manager Language (SML) FSMs."""

__version__ = "0.1.0"

from .parser import ParseError, parse, parse_all, parse_file
from .syntax import ClassDef

__all__ = ["ClassDef", "ParseError", "parse", "parse_all", "parse_file", "__version__"]
