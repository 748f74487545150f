"""Per-class object size priors.

File format (UTF-8 JSON)::

    {"<class>": {"dims": [{"mean_m": 0.25, "std_m": 0.03}, {...}, {...}]}}

Exactly three dimensions per class. They are stored sorted by descending
mean and are matched positionally against an object's sorted dimensions.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

from .errors import ParseError, ValidationError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DimensionPrior:
    mean: float
    std: float


@dataclass(frozen=True)
class SizePrior:
    class_name: str
    dims: tuple[DimensionPrior, DimensionPrior, DimensionPrior]

    def __post_init__(self):
        if len(self.dims) != 3:
            raise ValidationError(f"{self.class_name!r}: expected 3 dims, got {len(self.dims)}")
        for d in self.dims:
            if not (d.mean > 0 and d.std > 0):
                raise ValidationError(
                    f"{self.class_name!r}: mean and std must be positive, got {d}")
        means = [d.mean for d in self.dims]
        if not (means[0] >= means[1] >= means[2]):
            raise ValidationError(f"{self.class_name!r}: dims not sorted descending")

    @classmethod
    def from_unsorted(cls, class_name, dims):
        return cls(class_name, tuple(sorted(dims, key=lambda d: -d.mean)))

    @property
    def means(self):
        return [d.mean for d in self.dims]


class PriorRepository(Mapping):
    """Immutable, case-sensitive map from class name to SizePrior."""

    def __init__(self, priors=()):
        table = {}
        for p in priors:
            if p.class_name in table:
                raise ValidationError(f"duplicate class {p.class_name!r}")
            table[p.class_name] = p
        self._table = MappingProxyType(dict(sorted(table.items())))

    def __getitem__(self, key):
        return self._table[key]

    def __iter__(self):
        return iter(self._table)

    def __len__(self):
        return len(self._table)

    def __repr__(self):
        return f"PriorRepository({list(self._table)})"


def lookup(repo: PriorRepository, class_name: str) -> SizePrior | None:
    return repo.get(class_name)


def _parse_dim(cls, i, entry):
    if not isinstance(entry, dict):
        raise ParseError(f"class {cls!r}, dims[{i}]: expected an object")
    for key in entry:
        if key not in ("mean_m", "std_m"):
            log.warning("class %r, dims[%d]: ignoring unknown key %r", cls, i, key)
    try:
        mean, std = entry["mean_m"], entry["std_m"]
    except KeyError as exc:
        raise ParseError(f"class {cls!r}, dims[{i}]: missing field {exc.args[0]!r}") from None
    for name, val in (("mean_m", mean), ("std_m", std)):
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ParseError(f"class {cls!r}, dims[{i}].{name}: expected a number, got {val!r}")
    return DimensionPrior(float(mean), float(std))


def priors_from_dict(doc) -> PriorRepository:
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object mapping class name to prior")
    priors = []
    for cls, body in doc.items():
        if not isinstance(body, dict) or "dims" not in body:
            raise ParseError(f"class {cls!r}: expected an object with a 'dims' list")
        for key in body:
            if key != "dims":
                log.warning("class %r: ignoring unknown key %r", cls, key)
        dims = body["dims"]
        if not isinstance(dims, list) or len(dims) != 3:
            raise ParseError(f"class {cls!r}: 'dims' must be a list of exactly 3 entries")
        priors.append(SizePrior.from_unsorted(cls, [_parse_dim(cls, i, d) for i, d in enumerate(dims)]))
    return PriorRepository(priors)


def load_priors(path) -> PriorRepository:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return priors_from_dict(doc)


def priors_to_dict(repo: PriorRepository) -> dict:
    return {name: {"dims": [{"mean_m": d.mean, "std_m": d.std} for d in p.dims]}
            for name, p in repo.items()}


def dumps_priors(repo: PriorRepository) -> str:
    return json.dumps(priors_to_dict(repo), indent=2, sort_keys=True) + "\n"


def save_priors(repo: PriorRepository, path) -> None:
    Path(path).write_text(dumps_priors(repo), encoding="utf-8")


def builtin_sample_priors() -> PriorRepository:
    """Illustrative sample priors for common indoor classes and ``car``.

    The numbers are rough real-world magnitudes chosen for demos and tests;
    they are not statistics collected from any dataset.
    """
    text = resources.files("objscale").joinpath("data/sample_priors.json").read_text("utf-8")
    return priors_from_dict(json.loads(text))
