"""Run configuration: TOML files validated into typed sections.

Unknown keys and out-of-range values are rejected with the dotted path of
the offending field.  Relative file paths resolve against the directory of
the configuration file and must exist at parse time.
"""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Annotated, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, model_validator
from pydantic import ValidationError as PydanticError

from .errors import ValidationError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1

PositiveFloat = Annotated[float, Field(gt=0)]
NonNegFloat = Annotated[float, Field(ge=0)]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ChainSection(_Section):
    """Exactly one of ``entries``, ``file`` or ``preset``.

    Entries may be numbers or fraction strings such as ``"1/3"``.
    """

    entries: Optional[list[list[Union[float, str]]]] = None
    file: Optional[Path] = None
    preset: Optional[Literal["cycle6", "three_state"]] = None

    @model_validator(mode="after")
    def _one_source(self):
        given = sum(v is not None for v in (self.entries, self.file, self.preset))
        if given != 1:
            raise ValueError("give exactly one of entries, file, preset")
        return self


class LinearEnsembleSection(_Section):
    kind: Literal["linear"] = "linear"
    A: list[list[list[float]]]
    c: Optional[list[list[float]]] = None


class RiskEnsembleSection(_Section):
    kind: Literal["risk"]
    data: Optional[Path] = None
    degree: Annotated[int, Field(ge=0, le=10)] = 2
    K: Annotated[int, Field(ge=1)] = 6
    m: Annotated[int, Field(ge=1)] = 18
    replacement: bool = True


EnsembleSection = Annotated[Union[LinearEnsembleSection, RiskEnsembleSection], Field(discriminator="kind")]


class DomainSection(_Section):
    lower: list[float]
    upper: list[float]
    margin: NonNegFloat = 0.0


class StationarySection(_Section):
    tol: Annotated[float, Field(gt=0, le=1e-3)] = 1e-13
    mixing_tol: Annotated[float, Field(gt=0, lt=2)] = 1e-3


class SimulateSection(_Section):
    eps: PositiveFloat
    x0: list[float]
    k0: Annotated[int, Field(ge=1)] = 1
    T: PositiveFloat
    dt: PositiveFloat
    noise: bool = True
    switching: bool = True
    stride: Annotated[int, Field(ge=1)] = 1


class FitSection(_Section):
    T: PositiveFloat = 200.0
    dt: PositiveFloat = 0.05
    theta0: Optional[list[float]] = None
    gradient_tol: PositiveFloat = 1e-10


class TerminalSection(_Section):
    kind: Literal["quadratic", "bump"]
    center: list[float]
    width: Optional[PositiveFloat] = None
    weight: Optional[list[list[float]]] = None

    @model_validator(mode="after")
    def _width(self):
        if self.kind == "bump" and self.width is None:
            raise ValueError("a bump terminal needs width")
        return self


class RarepathSection(_Section):
    x0: list[float]
    T: PositiveFloat
    dt: PositiveFloat
    zeta: NonNegFloat
    lam: NonNegFloat = 1.0
    tol: PositiveFloat = 1e-8
    max_iter: Annotated[int, Field(ge=1)] = 2000
    relaxation: Annotated[float, Field(gt=0, le=1)] = 0.5
    constrained: bool = False
    guess_endpoint: Optional[list[float]] = None


class LdpSection(_Section):
    eps: Annotated[list[PositiveFloat], Field(min_length=1)]
    trials: Annotated[int, Field(ge=10_000)] = 100_000


class ReproduceSection(_Section):
    eps: Optional[PositiveFloat] = None
    flow_T: PositiveFloat = 200.0
    flow_dt: PositiveFloat = 0.05
    perturbed_T: PositiveFloat = 30.0
    rare_T: PositiveFloat = 10.0
    rare_dt: PositiveFloat = 0.01
    zeta: PositiveFloat = 1e-4
    holdout_size: Annotated[int, Field(ge=1)] = 9


class RunConfig(_Section):
    schema_version: Literal[1] = SCHEMA_VERSION
    seed: Optional[Annotated[int, Field(ge=0)]] = None
    chain: Optional[ChainSection] = None
    ensemble: Optional[EnsembleSection] = None
    domain: Optional[DomainSection] = None
    stationary: StationarySection = StationarySection()
    simulate: Optional[SimulateSection] = None
    fit: Optional[FitSection] = None
    terminal: Optional[TerminalSection] = None
    rarepath: Optional[RarepathSection] = None
    ldp: Optional[LdpSection] = None
    reproduce: ReproduceSection = ReproduceSection()

    def require(self, command: str, *sections: str) -> None:
        missing = [s for s in sections if getattr(self, s) is None]
        if missing:
            raise ValidationError(f"{command}: missing section(s) " + ", ".join(f"[{s}]" for s in missing))


def _format_loc(loc) -> str:
    # Drop discriminator tags that pydantic inserts into union locations.
    parts = [str(p) for p in loc if p not in ("linear", "risk")]
    return ".".join(parts) or "<root>"


def parse_config(raw: dict, base_dir: Path | None = None) -> RunConfig:
    try:
        cfg = RunConfig.model_validate(raw)
    except PydanticError as exc:
        lines = [f"{_format_loc(e['loc'])}: {e['msg']}" for e in exc.errors()]
        raise ValidationError("invalid configuration\n  " + "\n  ".join(lines)) from None
    base = base_dir or Path.cwd()
    for path_field, section in (("chain.file", cfg.chain), ("ensemble.data", cfg.ensemble)):
        attr = path_field.split(".")[1]
        value = getattr(section, attr, None) if section is not None else None
        if value is None:
            continue
        resolved = value if value.is_absolute() else base / value
        if not resolved.is_file():
            raise ValidationError(f"{path_field}: file not found: {value}")
        setattr(section, attr, resolved)
    return cfg


def load_config(path) -> tuple[RunConfig, dict]:
    """Parsed config and the raw mapping it came from."""
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}") from None
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ValidationError(f"{path}: {exc}") from None
    return parse_config(raw, path.parent), raw
