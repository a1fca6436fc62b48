import json
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError

from src.errors import InputError
from src.tools.matroid.tool.matroid import ExplicitMatroid, GraphicMatroid, Matroid, PartitionMatroid, UniformMatroid


####################
# MATROID SCHEMAS #
####################
class _MatroidSpecBase(BaseModel):
    model_config = ConfigDict(extra="forbid")

    labels: Optional[List[str]] = Field(None, description="Optional human-readable element names, one per identifier.")


class UniformSpec(_MatroidSpecBase):
    """k-uniform matroid on n elements."""

    family: Literal["uniform"]
    k: int = Field(..., ge=0, description="Rank: every set of at most k elements is independent.")
    n: int = Field(..., ge=0, description="Number of elements.")


class PartitionSpec(_MatroidSpecBase):
    """Partition matroid: at most capacities[b] elements from blocks[b]."""

    family: Literal["partition"]
    blocks: List[List[int]] = Field(..., description="Blocks covering identifiers 0..n-1 exactly once.")
    capacities: List[int] = Field(..., description="Capacity per block, same length as blocks.")


class GraphicSpec(_MatroidSpecBase):
    """Cycle matroid of a multigraph; element i is edges[i]."""

    family: Literal["graphic"]
    edges: List[Tuple[int, int]] = Field(..., description="Edge list as vertex pairs; parallel edges and loops allowed.")


class ExplicitSpec(_MatroidSpecBase):
    """All independent sets listed outright."""

    family: Literal["explicit"]
    n: int = Field(..., ge=0, description="Number of elements.")
    independent_sets: List[List[int]] = Field(..., description="Every independent set, the empty set included.")


MatroidSpec = Annotated[Union[UniformSpec, PartitionSpec, GraphicSpec, ExplicitSpec], Field(discriminator="family")]
_matroid_adapter = TypeAdapter(MatroidSpec)


def build_matroid(spec: MatroidSpec) -> Matroid:
    if isinstance(spec, UniformSpec):
        return UniformMatroid(spec.k, spec.n, spec.labels)
    if isinstance(spec, PartitionSpec):
        return PartitionMatroid(spec.blocks, spec.capacities, spec.labels)
    if isinstance(spec, GraphicSpec):
        return GraphicMatroid(spec.edges, spec.labels)
    return ExplicitMatroid(spec.n, spec.independent_sets, spec.labels)


def parse_matroid(data: Union[dict, str]) -> Matroid:
    """Build a matroid from a description dict or JSON text; unknown families are rejected."""
    try:
        spec = _matroid_adapter.validate_json(data) if isinstance(data, str) else _matroid_adapter.validate_python(data)
    except ValidationError as err:
        raise InputError(f"Invalid matroid description: {err}") from err
    return build_matroid(spec)


def load_matroid(path: Union[str, Path]) -> Matroid:
    return parse_matroid(Path(path).read_text())


def describe_matroid(M: Matroid) -> dict:
    """Inverse of parse_matroid for the concrete families."""
    labels = list(M.ground_set.labels) if M.ground_set.labels else None
    if isinstance(M, UniformMatroid):
        spec = UniformSpec(family="uniform", k=M.k, n=len(M.ground), labels=labels)
    elif isinstance(M, PartitionMatroid):
        spec = PartitionSpec(family="partition", blocks=[list(b) for b in M.blocks], capacities=list(M.capacities), labels=labels)
    elif isinstance(M, GraphicMatroid):
        spec = GraphicSpec(family="graphic", edges=list(M.edges), labels=labels)
    elif isinstance(M, ExplicitMatroid):
        spec = ExplicitSpec(family="explicit", n=len(M.ground), independent_sets=[sorted(I) for I in sorted(M.family_sets, key=sorted)], labels=labels)
    else:
        raise InputError(f"Views ({M.family}) have no file description")
    return json.loads(spec.model_dump_json(exclude_none=True))
