"""Compact binary tree-ensemble format (TML1) and its inference engine.

The training side serializes a fitted ensemble into a little-endian,
fixed-layout artifact any language can decode without a schema library.
Version 1 stores one uniform 12-byte node record per tree node; versions
2 (float16) and 3 (int16 fixed-point with per-tree scales) are the
quantized variants, which split each tree into an internal-node array and
a bare leaf-value array so leaves cost 2 bytes instead of 12.

The loader validates structure (magic, index ranges, acyclicity, finite
values) and never raises anything but TinyModelError on arbitrary input
bytes. After load, inference touches only buffers preallocated at load
time: trees are walked level-synchronously with numpy gathers, leaves
self-loop, and the walk runs exactly max_depth iterations, so the
worst-case node visits are n_trees * (max_depth + 1).

Layout (all little-endian):

  header: magic 'TML1' | version u16 | model_kind u8 (0=boosting, 1=forest)
          | n_features u8 | n_trees u16 | init_value f32 | learning_rate f32
          | means f32*F | stds f32*F
  v1 tree:   n_nodes u16, then n_nodes records of 12 bytes:
             feature u8 (0xFF = leaf) | pad u8 | left u16 | right u16
             | threshold_or_value f32; leaves carry left = right = 0
  v2/v3 tree: n_internal u16 | n_leaves u16
             | (v3 only) thresh_scale f32 | leaf_scale f32
             | internal records of 8 bytes: feature u8 | pad u8 | left u16
               | right u16 | q16 | leaf values q16*n_leaves
             child refs with bit 0x8000 set point into the leaf array
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .ensemble.models import TreeEnsembleModel

__all__ = ["TinyModelError", "EdgeModel", "export", "load", "quantize", "inspect_artifact"]

MAGIC = b"TML1"
VERSION_F32 = 1
VERSION_F16 = 2
VERSION_I16 = 3

KIND_BOOSTING = 0
KIND_FOREST = 1

LEAF_FEATURE = 0xFF
LEAF_CHILD_BIT = 0x8000

_HEADER = struct.Struct("<4sHBBHff")


class TinyModelError(ValueError):
    """Malformed, truncated, or out-of-contract artifact bytes."""


def _pack_header(version, kind, n_features, n_trees, init_value, learning_rate, means, stds):
    head = _HEADER.pack(MAGIC, version, kind, n_features, n_trees, init_value, learning_rate)
    return head + means.astype("<f4").tobytes() + stds.astype("<f4").tobytes()


def export(model: TreeEnsembleModel) -> bytes:
    """Serialize a fitted ensemble as a version-1 (float32) artifact."""
    n_features = model.n_features
    n_trees = len(model.trees)
    if n_features > 255:
        raise TinyModelError(f"too many features for the format: {n_features} > 255")
    if n_trees > 65535:
        raise TinyModelError(f"too many trees for the format: {n_trees} > 65535")
    if model.kind == "forest":
        kind = KIND_FOREST
        if n_trees == 0:
            raise TinyModelError("a forest artifact requires at least one tree")
    elif model.kind == "boosting":
        kind = KIND_BOOSTING
    else:
        raise TinyModelError(f"unknown model kind {model.kind!r}")

    out = [
        _pack_header(
            VERSION_F32,
            kind,
            n_features,
            n_trees,
            float(model.init_value),
            float(model.learning_rate),
            np.asarray(model.scaler.means),
            np.asarray(model.scaler.stds),
        )
    ]
    node = struct.Struct("<BBHH2xf")  # 12 bytes: the f32 sits 4-aligned
    for tree in model.trees:
        n_nodes = tree.n_nodes
        if n_nodes > 65535:
            raise TinyModelError(f"too many nodes in one tree: {n_nodes} > 65535")
        out.append(struct.pack("<H", n_nodes))
        for i in range(n_nodes):
            if tree.feature[i] >= 0:
                out.append(
                    node.pack(
                        int(tree.feature[i]), 0,
                        int(tree.left[i]), int(tree.right[i]),
                        float(tree.threshold[i]),
                    )
                )
            else:
                out.append(node.pack(LEAF_FEATURE, 0, 0, 0, float(tree.value[i])))
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TinyModelError("truncated payload")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def f32(self) -> float:
        return struct.unpack("<f", self.take(4))[0]

    def f32_array(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * n), dtype="<f4").astype(np.float32)

    def done(self) -> bool:
        return self.pos == len(self.data)


@dataclass
class _FlatTrees:
    """Loader-internal flat arrays; leaves self-loop so the walk needs no
    per-level leaf masking."""

    feat_safe: np.ndarray  # feature index, 0 for leaves (int16)
    is_leaf: np.ndarray
    thresh: np.ndarray  # threshold for internal, value for leaf (float32)
    left: np.ndarray  # absolute indices (int32)
    right: np.ndarray
    roots: np.ndarray
    max_depth: int


def _validate_tree(feat, left, right, thresh, base, n_nodes):
    """DFS from the root: bounds, leaf shape, acyclicity, finiteness.
    Returns the tree's max depth."""
    seen = np.zeros(n_nodes, dtype=bool)
    stack = [(0, 0)]
    max_depth = 0
    while stack:
        i, depth = stack.pop()
        if i >= n_nodes:
            raise TinyModelError(f"child index {i} out of range (tree of {n_nodes} nodes)")
        if seen[i]:
            raise TinyModelError("node referenced twice: tree is not acyclic")
        seen[i] = True
        max_depth = max(max_depth, depth)
        if not np.isfinite(thresh[base + i]):
            raise TinyModelError("non-finite threshold or leaf value")
        if feat[base + i] == LEAF_FEATURE:
            if left[base + i] != 0 or right[base + i] != 0:
                raise TinyModelError("leaf node with nonzero children")
        else:
            stack.append((int(left[base + i]), depth + 1))
            stack.append((int(right[base + i]), depth + 1))
    return max_depth


class EdgeModel:
    """Read-only decoded artifact with an allocation-free inference path."""

    def __init__(self, version, kind, n_features, n_trees, init_value, learning_rate,
                 means, stds, flat: _FlatTrees, artifact_size: int, tree_node_counts):
        self.version = version
        self.kind = "boosting" if kind == KIND_BOOSTING else "forest"
        self.n_features = n_features
        self.n_trees = n_trees
        self.init_value = init_value
        self.learning_rate = learning_rate
        self.means = means
        self.stds = stds
        self.max_depth = flat.max_depth
        self.artifact_size = artifact_size
        self.tree_node_counts = tree_node_counts
        self._feat = flat.feat_safe
        self._is_leaf = flat.is_leaf
        self._thresh = flat.thresh
        self._left = flat.left
        self._right = flat.right
        self._roots = flat.roots
        # children interleaved as [left0, right0, left1, right1, ...] so one
        # gather at index 2*node + side replaces two gathers plus a select
        self._children = np.empty(2 * len(flat.left), dtype=np.int32)
        self._children[0::2] = flat.left
        self._children[1::2] = flat.right
        # scratch buffers: the whole inference path reuses these
        self._xz = np.empty(n_features, dtype=np.float32)
        self._node = np.empty(n_trees, dtype=np.int32)
        self._node2 = np.empty(n_trees, dtype=np.int32)
        self._sf = np.empty(n_trees, dtype=np.int16)
        self._xv = np.empty(n_trees, dtype=np.float32)
        self._tv = np.empty(n_trees, dtype=np.float32)
        self._go = np.empty(n_trees, dtype=bool)

    def infer(self, x) -> float:
        x = np.asarray(x, dtype=np.float32)
        if x.shape != (self.n_features,):
            raise TinyModelError(
                f"input arity {x.shape} does not match n_features {self.n_features}"
            )
        if not np.isfinite(x).all():
            raise TinyModelError("non-finite input")
        np.subtract(x, self.means, out=self._xz)
        np.divide(self._xz, self.stds, out=self._xz)
        if self.n_trees == 0:
            return float(self.init_value)
        feat, thresh, children = self._feat, self._thresh, self._children
        xz, sf, xv, tv, go = self._xz, self._sf, self._xv, self._tv, self._go
        node, nxt = self._node, self._node2
        np.copyto(node, self._roots)
        for _ in range(self.max_depth):
            feat.take(node, out=sf, mode="clip")
            xz.take(sf, out=xv, mode="clip")
            thresh.take(node, out=tv, mode="clip")
            np.greater(xv, tv, out=go)  # True -> right child
            np.add(node, node, out=node)
            np.add(node, go, out=node, casting="unsafe")
            children.take(node, out=nxt, mode="clip")
            node, nxt = nxt, node
        thresh.take(node, out=tv, mode="clip")
        total = float(tv.sum(dtype=np.float64))
        if self.kind == "boosting":
            return float(self.init_value) + float(self.learning_rate) * total
        return total / self.n_trees

    def infer_batch(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float32))
        return np.array([self.infer(row) for row in X])


def _read_header(r: _Reader):
    raw = r.take(_HEADER.size)
    magic, version, kind, n_features, n_trees, init_value, learning_rate = _HEADER.unpack(raw)
    if magic != MAGIC:
        raise TinyModelError(f"bad magic {magic!r}")
    if version not in (VERSION_F32, VERSION_F16, VERSION_I16):
        raise TinyModelError(f"unsupported version {version}")
    if kind not in (KIND_BOOSTING, KIND_FOREST):
        raise TinyModelError(f"unknown model kind {kind}")
    if kind == KIND_FOREST and n_trees == 0:
        raise TinyModelError("forest artifact with zero trees")
    if not (np.isfinite(init_value) and np.isfinite(learning_rate)):
        raise TinyModelError("non-finite header value")
    means = r.f32_array(n_features)
    stds = r.f32_array(n_features)
    if not np.isfinite(means).all():
        raise TinyModelError("non-finite scaler mean")
    if not (np.isfinite(stds).all() and (stds > 0).all()):
        raise TinyModelError("scaler stds must be finite and positive")
    return version, kind, n_features, n_trees, init_value, learning_rate, means, stds


def _load_v1_trees(r: _Reader, n_trees):
    feats, threshs, lefts, rights, roots, counts = [], [], [], [], [], []
    base = 0
    node = struct.Struct("<BBHH2xf")
    for _ in range(n_trees):
        n_nodes = r.u16()
        if n_nodes == 0:
            raise TinyModelError("tree with zero nodes")
        raw = r.take(12 * n_nodes)
        feat = np.empty(n_nodes, dtype=np.int32)
        left = np.empty(n_nodes, dtype=np.int32)
        right = np.empty(n_nodes, dtype=np.int32)
        thresh = np.empty(n_nodes, dtype=np.float32)
        for i in range(n_nodes):
            f, _pad, l, rr, tv = node.unpack_from(raw, 12 * i)
            feat[i], left[i], right[i], thresh[i] = f, l, rr, tv
        feats.append(feat)
        lefts.append(left)
        rights.append(right)
        threshs.append(thresh)
        roots.append(base)
        counts.append(n_nodes)
        base += n_nodes
    return feats, threshs, lefts, rights, roots, counts


def _load_q_trees(r: _Reader, n_trees, version):
    """Decode v2/v3 split-array trees back into uniform node arrays."""
    feats, threshs, lefts, rights, roots, counts = [], [], [], [], [], []
    base = 0
    rec = struct.Struct("<BBHH")
    for _ in range(n_trees):
        n_int = r.u16()
        n_leaf = r.u16()
        if n_leaf == 0:
            raise TinyModelError("tree with zero leaves")
        if n_int + n_leaf > 65535:
            raise TinyModelError("tree too large")
        if version == VERSION_I16:
            thresh_scale = r.f32()
            leaf_scale = r.f32()
            if not (np.isfinite(thresh_scale) and np.isfinite(leaf_scale)):
                raise TinyModelError("non-finite quantization scale")
        raw_int = r.take(8 * n_int)
        raw_leaf = r.take(2 * n_leaf)
        if version == VERSION_F16:
            leaf_vals = np.frombuffer(raw_leaf, dtype="<f2").astype(np.float32)
            q_int = np.frombuffer(raw_int, dtype="<f2")[3::4].astype(np.float32) if n_int else np.empty(0, np.float32)
        else:
            leaf_vals = np.frombuffer(raw_leaf, dtype="<i2").astype(np.float32) * leaf_scale
            q_int = (np.frombuffer(raw_int, dtype="<i2")[3::4].astype(np.float32) * thresh_scale
                     if n_int else np.empty(0, np.float32))

        # uniform layout: internal nodes first, then leaves
        n_nodes = n_int + n_leaf
        feat = np.empty(n_nodes, dtype=np.int32)
        left = np.zeros(n_nodes, dtype=np.int32)
        right = np.zeros(n_nodes, dtype=np.int32)
        thresh = np.empty(n_nodes, dtype=np.float32)
        for i in range(n_int):
            f, _pad, l, rr = rec.unpack_from(raw_int, 8 * i)
            feat[i] = f
            if f == LEAF_FEATURE:
                raise TinyModelError("leaf marker inside the internal-node array")
            for child_raw, dest in ((l, left), (rr, right)):
                if child_raw & LEAF_CHILD_BIT:
                    leaf_idx = child_raw & ~LEAF_CHILD_BIT
                    if leaf_idx >= n_leaf:
                        raise TinyModelError("leaf child index out of range")
                    dest[i] = n_int + leaf_idx
                else:
                    dest[i] = child_raw
            thresh[i] = q_int[i]
        feat[n_int:] = LEAF_FEATURE
        thresh[n_int:] = leaf_vals
        feats.append(feat)
        lefts.append(left)
        rights.append(right)
        threshs.append(thresh)
        roots.append(base)
        counts.append(n_nodes)
        base += n_nodes
    return feats, threshs, lefts, rights, roots, counts


def load(data: bytes) -> EdgeModel:
    """Decode and validate a TML1 artifact of any supported version."""
    if not isinstance(data, (bytes, bytearray, memoryview)):
        raise TinyModelError("expected bytes")
    r = _Reader(bytes(data))
    version, kind, n_features, n_trees, init_value, learning_rate, means, stds = _read_header(r)
    if version == VERSION_F32:
        feats, threshs, lefts, rights, roots, counts = _load_v1_trees(r, n_trees)
    else:
        feats, threshs, lefts, rights, roots, counts = _load_q_trees(r, n_trees, version)
    if not r.done():
        raise TinyModelError(f"{len(r.data) - r.pos} trailing bytes after the last tree")

    feat_all = np.concatenate(feats) if feats else np.empty(0, np.int32)
    thresh_all = np.concatenate(threshs) if threshs else np.empty(0, np.float32)
    left_all = np.concatenate(lefts) if lefts else np.empty(0, np.int32)
    right_all = np.concatenate(rights) if rights else np.empty(0, np.int32)

    max_depth = 0
    for t in range(n_trees):
        base, n_nodes = roots[t], counts[t]
        internal = feat_all[base : base + n_nodes] != LEAF_FEATURE
        bad_feature = feat_all[base : base + n_nodes][internal] >= n_features
        if bad_feature.any():
            raise TinyModelError("split feature index out of range")
        depth = _validate_tree(feat_all, left_all, right_all, thresh_all, base, n_nodes)
        max_depth = max(max_depth, depth)
        # absolute child indices; leaves self-loop so the lockstep walk is branch-free
        for i in range(n_nodes):
            j = base + i
            if feat_all[j] == LEAF_FEATURE:
                left_all[j] = right_all[j] = j
            else:
                left_all[j] += base
                right_all[j] += base

    is_leaf = feat_all == LEAF_FEATURE
    feat_safe = np.where(is_leaf, 0, feat_all).astype(np.int16)
    flat = _FlatTrees(
        feat_safe=feat_safe,
        is_leaf=is_leaf,
        thresh=thresh_all.astype(np.float32),
        left=left_all,
        right=right_all,
        roots=np.asarray(roots, dtype=np.int32),
        max_depth=max_depth,
    )
    return EdgeModel(
        version, kind, n_features, n_trees, float(init_value), float(learning_rate),
        means, stds, flat, artifact_size=len(r.data), tree_node_counts=counts,
    )


def quantize(data: bytes, mode: str = "i16") -> bytes:
    """Re-encode a v1 artifact with 16-bit thresholds and leaf values.

    i16 mode uses a per-tree scale factor for thresholds and another for
    leaves; f16 stores IEEE half floats. Values outside the representable
    span raise.
    """
    if mode not in ("f16", "i16"):
        raise TinyModelError(f"unknown quantization mode {mode!r}")
    src = load(data)
    if src.version != VERSION_F32:
        raise TinyModelError("quantize expects a version-1 (float32) artifact")
    version = VERSION_F16 if mode == "f16" else VERSION_I16
    kind = KIND_BOOSTING if src.kind == "boosting" else KIND_FOREST
    out = [
        _pack_header(version, kind, src.n_features, src.n_trees,
                     src.init_value, src.learning_rate, src.means, src.stds)
    ]
    rec = struct.Struct("<BBHHe") if mode == "f16" else struct.Struct("<BBHHh")

    for t in range(src.n_trees):
        base = int(src._roots[t])
        n_nodes = src.tree_node_counts[t]
        feat = src._feat[base : base + n_nodes]
        thresh = src._thresh[base : base + n_nodes]
        leaf_mask = src._is_leaf[base : base + n_nodes]
        internal_idx = np.nonzero(~leaf_mask)[0]
        leaf_idx = np.nonzero(leaf_mask)[0]
        remap = {}
        for new, old in enumerate(internal_idx):
            remap[int(old)] = new
        for new, old in enumerate(leaf_idx):
            remap[int(old)] = LEAF_CHILD_BIT | new

        thr_vals = thresh[internal_idx].astype(np.float64)
        leaf_vals = thresh[leaf_idx].astype(np.float64)
        if mode == "i16":
            t_scale = float(np.max(np.abs(thr_vals)) / 32767.0) if thr_vals.size and np.max(np.abs(thr_vals)) > 0 else 1.0
            l_scale = float(np.max(np.abs(leaf_vals)) / 32767.0) if leaf_vals.size and np.max(np.abs(leaf_vals)) > 0 else 1.0
            out.append(struct.pack("<HHff", len(internal_idx), len(leaf_idx), t_scale, l_scale))
        else:
            if thr_vals.size and np.max(np.abs(thr_vals)) > 65504.0:
                raise TinyModelError("threshold exceeds float16 range")
            if leaf_vals.size and np.max(np.abs(leaf_vals)) > 65504.0:
                raise TinyModelError("leaf value exceeds float16 range")
            out.append(struct.pack("<HH", len(internal_idx), len(leaf_idx)))

        for old in internal_idx:
            j = base + int(old)
            l_child = remap[int(src._left[j] - base)]
            r_child = remap[int(src._right[j] - base)]
            if mode == "i16":
                q = int(round(float(thresh[old]) / t_scale))
                q = max(-32767, min(32767, q))
                out.append(rec.pack(int(feat[old]), 0, l_child, r_child, q))
            else:
                out.append(rec.pack(int(feat[old]), 0, l_child, r_child, float(thresh[old])))
        if mode == "i16":
            q_leaves = np.clip(np.round(leaf_vals / l_scale), -32767, 32767).astype("<i2")
            out.append(q_leaves.tobytes())
        else:
            out.append(leaf_vals.astype("<f2").tobytes())
    return b"".join(out)


def inspect_artifact(data: bytes) -> dict:
    """Header fields and per-tree node counts, for the CLI inspector."""
    m = load(data)
    return {
        "magic": "TML1",
        "version": m.version,
        "model_kind": m.kind,
        "n_features": m.n_features,
        "n_trees": m.n_trees,
        "init_value": m.init_value,
        "learning_rate": m.learning_rate,
        "max_depth": m.max_depth,
        "artifact_bytes": m.artifact_size,
        "tree_node_counts": list(m.tree_node_counts),
    }
