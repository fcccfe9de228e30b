"""Walk nested parameter structures (dataclasses / lists / tuples / dicts).

Array leaves (ndarray or autodiff Node) are yielded with dotted path names in
declaration order; ints, floats, strings and None are geometry metadata and
are skipped. The declaration order defines the checkpoint record order, so it
must stay stable.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .autodiff import Node


def _is_leaf(obj):
    return isinstance(obj, (np.ndarray, Node))


def named_leaves(obj, prefix=""):
    if _is_leaf(obj):
        yield prefix or "value", obj
        return
    if dataclasses.is_dataclass(obj):
        for f in dataclasses.fields(obj):
            name = f"{prefix}.{f.name}" if prefix else f.name
            yield from named_leaves(getattr(obj, f.name), name)
        return
    if isinstance(obj, (list, tuple)):
        for i, item in enumerate(obj):
            name = f"{prefix}.{i}" if prefix else str(i)
            yield from named_leaves(item, name)
        return
    if isinstance(obj, dict):
        for k, v in obj.items():
            name = f"{prefix}.{k}" if prefix else str(k)
            yield from named_leaves(v, name)
        return
    # scalars / strings / None: structural metadata, not parameters


def map_leaves(obj, fn, prefix=""):
    """Rebuild the structure with fn(name, leaf) applied to each array leaf."""
    if _is_leaf(obj):
        return fn(prefix or "value", obj)
    if dataclasses.is_dataclass(obj):
        kwargs = {}
        for f in dataclasses.fields(obj):
            name = f"{prefix}.{f.name}" if prefix else f.name
            kwargs[f.name] = map_leaves(getattr(obj, f.name), fn, name)
        return type(obj)(**kwargs)
    if isinstance(obj, (list, tuple)):
        items = [
            map_leaves(item, fn, f"{prefix}.{i}" if prefix else str(i))
            for i, item in enumerate(obj)
        ]
        return type(obj)(items) if isinstance(obj, list) else tuple(items)
    if isinstance(obj, dict):
        return {
            k: map_leaves(v, fn, f"{prefix}.{k}" if prefix else str(k))
            for k, v in obj.items()
        }
    return obj
