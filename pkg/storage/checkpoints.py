"""Conversion between ToyTransformer instances and tensor archives."""

import json
import logging
from typing import Dict, Optional

import numpy as np

from core.adapter import SparseLowRankUpdate, UnstructuredMask, merge
from core.decompose import Support
from core.exceptions import ArchiveFormatError, ConfigurationError
from storage.archive import TensorArchive
from training.model import ToyTransformer
from utils.models import ToyTransformerConfig

logger = logging.getLogger(__name__)

MODEL_KIND = "dsee-model"
PARAM_PREFIX = "param/"
UPDATE_PREFIX = "update/"
MASK_PREFIX = "mask/"
MERGED_PREFIX = "merged/"


def model_to_archive(model: ToyTransformer, meta: Optional[Dict[str, str]] = None) -> TensorArchive:
    """Store host parameters, updates, masks and kept indices as float32/int64/uint8 tensors."""
    tensors: Dict[str, np.ndarray] = {}
    for name, value in model.params.items():
        tensors[PARAM_PREFIX + name] = value.astype(np.float32)
    for site, upd in model.updates.items():
        base = f"{UPDATE_PREFIX}{site}/"
        tensors[base + "u"] = upd.u.astype(np.float32)
        tensors[base + "v"] = upd.v.astype(np.float32)
        tensors[base + "s2"] = upd.s2_values.astype(np.float32)
        tensors[base + "support"] = upd.support.indices.astype(np.int64)
        tensors[base + "host_shape"] = np.asarray(upd.host_shape, dtype=np.int64)
    tensors.update(masks_to_tensors(model.masks))
    for layer, kept in enumerate(model.kept_heads):
        tensors[f"kept_heads/{layer}"] = np.asarray(kept, dtype=np.int64)
    for layer, kept in enumerate(model.kept_ffn):
        tensors[f"kept_ffn/{layer}"] = np.asarray(kept, dtype=np.int64)

    info = {"kind": MODEL_KIND, "config": json.dumps(model.cfg.to_dict(), sort_keys=True)}
    info.update(meta or {})
    return TensorArchive(tensors=tensors, meta=info)


def masks_to_tensors(masks: Dict[str, UnstructuredMask]) -> Dict[str, np.ndarray]:
    return {MASK_PREFIX + site: mask.bits.astype(np.uint8) for site, mask in masks.items()}


def masks_to_archive(masks: Dict[str, UnstructuredMask]) -> TensorArchive:
    return TensorArchive(tensors=masks_to_tensors(masks), meta={"kind": "dsee-masks"})


def merged_to_archive(model: ToyTransformer) -> TensorArchive:
    """Deployed dense matrix W*S1 + U V + S2 of every site."""
    tensors = {}
    for site in model.site_names():
        w = model.params[f"{site}.weight"]
        mask = model.masks.get(site)
        upd = model.updates.get(site)
        if upd is not None:
            dense = merge(w, mask, upd)
        else:
            dense = w if mask is None else mask.apply(w)
        tensors[MERGED_PREFIX + site] = dense.astype(np.float32)
    return TensorArchive(tensors=tensors, meta={"kind": "dsee-merged"})


def _require(archive: TensorArchive, name: str) -> np.ndarray:
    if name not in archive.tensors:
        raise ArchiveFormatError(f"Model archive is missing tensor {name!r}")
    return archive.tensors[name]


def archive_to_model(archive: TensorArchive) -> ToyTransformer:
    """Rebuild a model stored by `model_to_archive`.

    Raises:
        ArchiveFormatError: If the archive does not hold a model.
        ConfigurationError: If the stored config is invalid.
    """
    if archive.meta.get("kind") != MODEL_KIND or "config" not in archive.meta:
        raise ArchiveFormatError("Archive does not hold a model checkpoint")
    try:
        cfg = ToyTransformerConfig.from_dict(json.loads(archive.meta["config"]))
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Stored model config is not valid JSON: {str(e)}")

    params = {
        name[len(PARAM_PREFIX):]: value.copy()
        for name, value in archive.tensors.items()
        if name.startswith(PARAM_PREFIX)
    }
    sites = sorted({
        name[len(UPDATE_PREFIX):].rsplit("/", 1)[0]
        for name in archive.tensors
        if name.startswith(UPDATE_PREFIX)
    })
    updates = {}
    for site in sites:
        base = f"{UPDATE_PREFIX}{site}/"
        host_shape = tuple(int(d) for d in _require(archive, base + "host_shape"))
        updates[site] = SparseLowRankUpdate(
            u=_require(archive, base + "u").copy(),
            v=_require(archive, base + "v").copy(),
            s2_values=_require(archive, base + "s2").copy(),
            support=Support(_require(archive, base + "support"), host_shape),
            host_shape=host_shape,
        )
    masks = {
        name[len(MASK_PREFIX):]: UnstructuredMask(value.astype(bool), value.shape)
        for name, value in archive.tensors.items()
        if name.startswith(MASK_PREFIX)
    }
    kept_heads = [_require(archive, f"kept_heads/{layer}").copy() for layer in range(cfg.n_layers)]
    kept_ffn = [_require(archive, f"kept_ffn/{layer}").copy() for layer in range(cfg.n_layers)]

    model = ToyTransformer(cfg, params, updates, masks, kept_heads, kept_ffn)
    expected = set(ToyTransformer.init(cfg, 0).params)
    if set(params) != expected:
        raise ArchiveFormatError("Model archive parameters do not match its config")
    logger.debug(f"Loaded model with {len(updates)} updates and {len(masks)} masks")
    return model
