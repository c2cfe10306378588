"""Two-segment linear interpolation of checkpoint archives.

Layers ``0..boundary-1`` are blended with ``alpha_lower`` and layers
``boundary..total_layers-1`` with ``alpha_upper``::

    merged = alpha * retrieval + (1 - alpha) * domain

Tensors matching ``copy_names`` (token embeddings by default) are taken from
the retrieval archive unchanged. Everything else that is not inside a layer
follows ``nonlayer_policy``.
"""

from __future__ import annotations

import enum
import fnmatch
import re
from dataclasses import dataclass

import numpy as np

from .tensor_store import Tensor, TensorArchive

_LAYER_RE = re.compile(r"(?:^|\.)layers\.([^.]*)\.")


class MergeError(ValueError):
    pass


class Segment(enum.Enum):
    LOWER = "lower"
    UPPER = "upper"
    COPY_FROM_RETRIEVAL = "copy"


@dataclass(frozen=True)
class LayerPartition:
    total_layers: int
    boundary: int

    def __post_init__(self) -> None:
        if not 0 < self.boundary < self.total_layers:
            raise MergeError(
                f"boundary must satisfy 0 < {self.boundary} < {self.total_layers}"
            )

    @classmethod
    def halves(cls, total_layers: int) -> LayerPartition:
        return cls(total_layers, total_layers // 2)


@dataclass(frozen=True)
class MergeSpec:
    alpha_lower: float
    alpha_upper: float
    partition: LayerPartition
    nonlayer_policy: Segment = Segment.UPPER
    copy_names: tuple[str, ...] = ("embed_tokens.*",)

    def __post_init__(self) -> None:
        for label, a in (("alpha_lower", self.alpha_lower), ("alpha_upper", self.alpha_upper)):
            if not 0.0 <= a <= 1.0:
                raise MergeError(f"{label}={a} outside [0, 1]")
        object.__setattr__(self, "copy_names", tuple(self.copy_names))

    def alpha_for(self, segment: Segment) -> float:
        return self.alpha_lower if segment is Segment.LOWER else self.alpha_upper


def layer_index(name: str) -> int | None:
    """Layer index embedded in ``name`` ("layers.<i>."), or None for non-layer tensors."""
    m = _LAYER_RE.search(name)
    if m is None:
        return None
    token = m.group(1)
    if not token.isdigit():
        raise MergeError(f"unparseable layer index {token!r} in tensor name {name!r}")
    return int(token)


def classify_tensor(name: str, spec: MergeSpec) -> Segment:
    if any(fnmatch.fnmatchcase(name, pat) for pat in spec.copy_names):
        return Segment.COPY_FROM_RETRIEVAL
    idx = layer_index(name)
    if idx is None:
        return spec.nonlayer_policy
    if idx >= spec.partition.total_layers:
        raise MergeError(
            f"tensor {name!r} has layer index {idx} >= total_layers {spec.partition.total_layers}"
        )
    return Segment.LOWER if idx < spec.partition.boundary else Segment.UPPER


def merge_tensor(t1: Tensor, t2: Tensor, alpha: float) -> Tensor:
    """``alpha * t1 + (1 - alpha) * t2`` in float32, evaluated in that order."""
    if t1.name != t2.name:
        raise MergeError(f"name mismatch: {t1.name!r} vs {t2.name!r}")
    if t1.shape != t2.shape:
        raise MergeError(f"shape mismatch for {t1.name!r}: {t1.shape} vs {t2.shape}")
    a = np.float32(alpha)
    b = np.float32(1.0) - a
    out = np.multiply(a, t1.data, dtype=np.float32)
    out += np.multiply(b, t2.data, dtype=np.float32)
    return Tensor(t1.name, out)


def _fmt_alpha(a: float) -> str:
    return f"{a:.2f}" if round(a, 2) == a else repr(float(a))


def merge_archives(
    retrieval: TensorArchive,
    domain: TensorArchive,
    spec: MergeSpec,
    *,
    allow_missing_domain: bool = False,
) -> TensorArchive:
    """Merge two archives tensor by tensor according to ``spec``.

    With ``allow_missing_domain`` a tensor present only in the retrieval
    archive is copied through instead of raising. Tensors present only in the
    domain archive are always an error.
    """
    r_names, d_names = set(retrieval), set(domain)
    only_domain = d_names - r_names
    only_retrieval = r_names - d_names
    if only_domain or (only_retrieval and not allow_missing_domain):
        diff = sorted(only_domain | only_retrieval)
        raise MergeError(f"tensor-name sets differ; symmetric difference: {diff}")

    merged: dict[str, Tensor] = {}
    for name in sorted(r_names):
        t1 = retrieval[name]
        segment = classify_tensor(name, spec)
        if name not in d_names:
            merged[name] = t1
            continue
        t2 = domain[name]
        if t1.shape != t2.shape:
            raise MergeError(f"shape mismatch for {name!r}: {t1.shape} vs {t2.shape}")
        if segment is Segment.COPY_FROM_RETRIEVAL:
            merged[name] = t1
        else:
            merged[name] = merge_tensor(t1, t2, spec.alpha_for(segment))

    # tokenizer settings travel with the retrieval model
    meta = {k: v for k, v in retrieval.metadata.items() if k.startswith("tokenizer.")}
    meta.update(
        {
            "merge.alpha_lower": _fmt_alpha(spec.alpha_lower),
            "merge.alpha_upper": _fmt_alpha(spec.alpha_upper),
            "merge.boundary": str(spec.partition.boundary),
            "merge.total_layers": str(spec.partition.total_layers),
            "merge.nonlayer_policy": spec.nonlayer_policy.value,
            "merge.copy_names": ",".join(spec.copy_names),
            "merge.retrieval_source": retrieval.metadata.get("source", "unknown"),
            "merge.domain_source": domain.metadata.get("source", "unknown"),
        }
    )
    return TensorArchive(merged, meta)


def infer_total_layers(archive: TensorArchive) -> int:
    indices = [i for i in (layer_index(n) for n in archive) if i is not None]
    if not indices:
        raise MergeError("archive contains no layer tensors")
    return max(indices) + 1
