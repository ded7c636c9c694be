"""Built-in prompt template files."""

from importlib.resources import files


def builtin_template(name: str) -> str:
    """Read a bundled template file by name, e.g. builtin_template("diagnose.txt")."""
    return (files(__name__) / name).read_text(encoding="utf-8")
