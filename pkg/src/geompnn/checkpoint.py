"""A trained per-field model and its standalone checkpoint container.

Checkpoints are ``.npz`` archives: one float64 array per parameter plus a
``__meta__`` JSON string with the format version, model config, feature
variant, target normalizer and basis scales.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .basis import HarmonicTables, SineBasisConfig
from .features import FeatureVariant, FieldNormalizer
from .mesh import FieldId, MeshCase
from .net import ModelConfig, param_shapes, predict

FORMAT = "geompnn-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class FieldModel:
    field: FieldId
    variant: FeatureVariant
    config: ModelConfig
    params: dict
    normalizer: FieldNormalizer
    sine: SineBasisConfig
    sph_factorial_norm: bool = False
    graph_seed: tuple = (0, 4, 0)

    def tables(self) -> HarmonicTables:
        return HarmonicTables(self.sine.n_basis, self.sph_factorial_norm)

    def prepare(self, case: MeshCase):
        from .pipeline import PreparedCase

        return PreparedCase(case, self.variant, self.config, self.sine, self.tables())

    def predict_normalized(self, prepared, keep: Optional[np.ndarray] = None) -> np.ndarray:
        return predict(self.params, self.config, prepared.inputs(keep, graph_seed=self.graph_seed))

    def predict(self, case_or_prepared, keep: Optional[np.ndarray] = None) -> np.ndarray:
        """Predictions in physical units."""
        prepared = case_or_prepared
        if isinstance(case_or_prepared, MeshCase):
            prepared = self.prepare(case_or_prepared)
        return self.normalizer.denormalize(self.predict_normalized(prepared, keep))

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name]).tobytes())
        return h.hexdigest()

    def meta(self) -> dict:
        return {
            "format": FORMAT,
            "version": VERSION,
            "field": self.field.value,
            "variant": self.variant.value,
            "model": self.config.to_dict(),
            "normalizer": self.normalizer.to_dict(),
            "sine": {"n_basis": self.sine.n_basis, "s": self.sine.s, "L": self.sine.L},
            "sph_factorial_norm": self.sph_factorial_norm,
            "graph_seed": list(self.graph_seed),
        }


def save_checkpoint(model: FieldModel, path) -> None:
    path = Path(path)
    arrays = {f"p:{k}": np.asarray(v, dtype=np.float64) for k, v in model.params.items()}
    meta = np.array(json.dumps(model.meta(), sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=meta, **arrays)


def load_checkpoint(path) -> FieldModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} not found")
    with np.load(path, allow_pickle=False) as z:
        try:
            meta = json.loads(str(z["__meta__"]))
        except KeyError:
            raise CheckpointError(f"{path}: missing metadata") from None
        params = {k[2:]: z[k].copy() for k in z.files if k.startswith("p:")}
    if meta.get("format") != FORMAT:
        raise CheckpointError(f"{path}: not a {FORMAT} file")
    if meta.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported version {meta.get('version')}")
    cfg = ModelConfig(**meta["model"])
    expected = dict(param_shapes(cfg))
    if set(expected) != set(params):
        raise CheckpointError(f"{path}: parameter set does not match the model config")
    for name, shape in expected.items():
        if params[name].shape != tuple(shape):
            raise CheckpointError(f"{path}: {name} has shape {params[name].shape}, expected {shape}")
    # keep the architecture's parameter order
    params = {name: params[name] for name in expected}
    s = meta["sine"]
    return FieldModel(
        field=FieldId.parse(meta["field"]),
        variant=FeatureVariant.parse(meta["variant"]),
        config=cfg,
        params=params,
        normalizer=FieldNormalizer.from_dict(meta["normalizer"]),
        sine=SineBasisConfig(int(s["n_basis"]), float(s["s"]), float(s["L"])),
        sph_factorial_norm=bool(meta["sph_factorial_norm"]),
        graph_seed=tuple(meta["graph_seed"]),
    )
