import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.errors import ConfigError
from src.tools.harness.tool.adversary import AdversarySpec
from src.tools.harness.tool.instances import Instance, builtin_corpus, gen_intersection_tight, gen_rank_one_tight, load_instance
from src.tools.mechanism.tool.mechanism import BMUMDInstance, load_bmumd, two_by_two_uniform
from src.tools.policy.tool.policy import PolicyKind, PolicySpec


#################
# CONFIG SCHEMA #
#################
class InstanceSource(BaseModel):
    """Either a JSON instance file or a named generator."""

    model_config = ConfigDict(extra="forbid")

    file: Optional[str] = Field(None, description="Path to an instance JSON file.")
    generator: Optional[Literal["rank1Tight", "intersectionTight", "builtin"]] = Field(None, description="Named generator.")
    n: Optional[int] = Field(None, description="rank1Tight: the n of the construction.")
    q: Optional[int] = Field(None, description="intersectionTight: the prime q.")
    name: Optional[str] = Field(None, description="builtin: corpus instance name.")

    @model_validator(mode="after")
    def _one_source(self):
        if (self.file is None) == (self.generator is None):
            raise ValueError("Give exactly one of 'file' or 'generator'")
        return self

    def build(self) -> Instance:
        if self.file is not None:
            return load_instance(self.file)
        if self.generator == "rank1Tight":
            return gen_rank_one_tight(self.n if self.n is not None else 2)
        if self.generator == "intersectionTight":
            return gen_intersection_tight(self.q if self.q is not None else 2)
        corpus = {inst.name: inst for inst in builtin_corpus()}
        if self.name not in corpus:
            raise ConfigError(f"Unknown builtin instance '{self.name}', choose from {sorted(corpus)}")
        return corpus[self.name]


class BMUMDSource(BaseModel):
    model_config = ConfigDict(extra="forbid")

    file: Optional[str] = Field(None, description="Path to a BMUMD instance JSON file; the 2x2 uniform instance when omitted.")

    def build(self) -> BMUMDInstance:
        return load_bmumd(self.file) if self.file else two_by_two_uniform()


class OutputSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dir: str = Field("results", description="Directory receiving result files.")
    format: Literal["csv", "json"] = Field("csv", description="Result table format.")
    name: str = Field("results", description="File stem of the result table.")


class ExperimentConfig(BaseModel):
    """One experiment run. Unknown keys are rejected and the seed is mandatory."""

    model_config = ConfigDict(extra="forbid")

    seed: int = Field(..., description="Root seed; every random stream derives from it.")
    trials: int = Field(1, ge=1, description="Monte Carlo trials.")
    mode: Literal["exact", "monteCarlo"] = Field("monteCarlo", description="Exact enumeration or Monte Carlo.")
    workers: Optional[int] = Field(None, ge=1, description="Worker processes; available parallelism when omitted.")
    instance: Optional[InstanceSource] = Field(None, description="simulate: the instance.")
    corpus: Optional[List[InstanceSource]] = Field(None, description="verify: instances to check; the builtin corpus when omitted.")
    policy: PolicySpec = Field(default_factory=lambda: PolicySpec(kind=PolicyKind.MATROID_BALANCED), description="Threshold rule.")
    adversary: AdversarySpec = Field(default_factory=AdversarySpec, description="Ordering rule.")
    bmumd: Optional[BMUMDSource] = Field(None, description="mechanism: the unit-demand instance.")
    depth: int = Field(3, ge=1, description="verify: largest set size enumerated by the property suite.")
    output: OutputSpec = Field(default_factory=OutputSpec)

    @property
    def worker_count(self) -> int:
        return self.workers or os.cpu_count() or 1


def load_config(path: Union[str, Path], **overrides) -> ExperimentConfig:
    """
    Read a YAML experiment file; non-None keyword overrides replace top-level keys.

    Raises:
        ConfigError: On unreadable YAML or a top level that is not a mapping.
        pydantic.ValidationError: On schema violations.
    """
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as err:
        raise ConfigError(f"Cannot read config {path}: {err}") from err
    if not isinstance(data, dict):
        raise ConfigError(f"Config {path} must be a mapping")
    data.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.model_validate(data)


###########
# WRITERS #
###########
def atomic_write(path: Union[str, Path], text: str) -> Path:
    """Write through a temp file in the target directory and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def render_table(rows: List[dict], columns: List[str], fmt: Literal["csv", "json"]) -> str:
    if fmt == "json":
        return json.dumps(rows, indent=2) + "\n"
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: "" if row.get(c) is None else row[c] for c in columns})
    return buffer.getvalue()


def write_table(out_dir: Union[str, Path], name: str, rows: List[dict], columns: List[str], fmt: Literal["csv", "json"]) -> Path:
    return atomic_write(Path(out_dir) / f"{name}.{fmt}", render_table(rows, columns, fmt))
