"""PALPS with policies: parsing, semantics, MDP analysis and translation to
a guarded-command language."""

from importlib import resources

from .model import Label, Model, Policy, validate_model
from .parser import DslSyntaxError, format_model, parse_model

__version__ = "0.1.0"


def corpus_names() -> list[str]:
    """Names of the bundled example models."""
    root = resources.files(__name__) / "corpus"
    return sorted(p.name[: -len(".palps")] for p in root.iterdir() if p.name.endswith(".palps"))


def corpus_text(name: str, suffix: str = ".palps") -> str:
    return (resources.files(__name__) / "corpus" / f"{name}{suffix}").read_text(encoding="utf-8")


def load_corpus(name: str) -> Model:
    return parse_model(corpus_text(name))


__all__ = [
    "DslSyntaxError", "Label", "Model", "Policy", "corpus_names", "corpus_text",
    "format_model", "load_corpus", "parse_model", "validate_model",
]
