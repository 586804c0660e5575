"""JSON schemas for the interchange formats and run configurations."""
import json
from functools import lru_cache
from importlib import resources

import jsonschema

from ..errors import InputError

NAMES = ("model", "simulation", "tca", "calibration", "execprob", "impact", "invariant",
         "ingest", "estimate")


@lru_cache(maxsize=None)
def load(name: str) -> dict:
    if name not in NAMES:
        raise KeyError(name)
    return json.loads(resources.files(__package__).joinpath(f"{name}.json").read_text())


def validate(doc, name: str) -> None:
    """Raise :class:`InputError` if ``doc`` does not match schema ``name``."""
    try:
        jsonschema.validate(doc, load(name))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InputError(f"{name} config invalid at {where}: {exc.message}") from None
