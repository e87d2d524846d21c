"""The fixed test-model zoo: K in {1,2,3,5} x D in {1,2,3,8} x {gaussian, logistic}."""

from __future__ import annotations

import fnmatch
import json
from functools import lru_cache
from importlib import resources

from .errors import InvalidInputError
from .mixture import MixtureModel, model_from_dict


@lru_cache(maxsize=1)
def _document() -> dict:
    return json.loads(resources.files("mixgrad").joinpath("data/zoo.json").read_text())


def zoo_names() -> list[str]:
    return list(_document()["models"])


def zoo_model(name: str) -> MixtureModel:
    try:
        return model_from_dict(_document()["models"][name])
    except KeyError:
        raise InvalidInputError(f"no zoo model named {name!r}") from None


def select(selector: str) -> list[str]:
    """Zoo names matching a comma-separated list of glob patterns ('all' matches everything)."""
    patterns = [p.strip() for p in selector.split(",") if p.strip()]
    if not patterns:
        raise InvalidInputError("empty zoo selector")
    names = zoo_names()
    if patterns == ["all"]:
        return names
    chosen = [n for n in names if any(fnmatch.fnmatchcase(n, p) for p in patterns)]
    if not chosen:
        raise InvalidInputError(f"zoo selector {selector!r} matches no models")
    return chosen


def zoo_models(selector: str = "all") -> dict[str, MixtureModel]:
    return {name: zoo_model(name) for name in select(selector)}
