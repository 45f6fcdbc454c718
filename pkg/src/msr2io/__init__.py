"""Compile multiset-rewriting protocol models into per-role I/O specifications
and check the refinement chain at bounded scale."""

from importlib import resources

__version__ = "0.1.0"


def bundled_model_text(name: str) -> str:
    """Text of a bundled model (``dh``, ``dh_mutated``, ``dh_reveal``, ``eq_fixture``, ``wg_handshake``)."""
    return resources.files(__package__).joinpath("models", f"{name}.msr").read_text()


def bundled_model(name: str):
    from .frontend import load

    return load(bundled_model_text(name))
