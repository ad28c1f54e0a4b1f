"""Class-embedding banks and the joint seen+candidate index space.

The matcher and inference head score queries against one row-indexed bank:
rows [0, seen_count) are the seen-class embeddings in order, rows
[seen_count, seen_count+U) are candidate-region embeddings. Everything
downstream relies on that split, so it is carried explicitly by
:class:`JointEmbedding` rather than re-derived.

Candidate embeddings either come from an external encoder (loaded from a
file) or from the built-in stand-in that mask-pools the dense feature map.
Rows are L2-normalized on every ingestion path: the similarity head is
sigmoid(V . E^T), which is scale sensitive, and unit rows keep fixtures
portable.
"""

from dataclasses import dataclass

import numpy as np

from .tensor_store import load_tensor

_NORM_FLOOR = 1e-12
UNIT_ROW_TOL = 1e-4


def _unit_rows(matrix):
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1)
    if matrix.shape[0] and norms.min() < _NORM_FLOOR:
        raise ValueError("cannot normalize a zero embedding row")
    return (matrix / np.maximum(norms[:, None], _NORM_FLOOR)).astype(np.float32)


@dataclass
class ClassEmbeddings:
    """Unit-norm embedding rows with their dataset class ids."""

    matrix: np.ndarray           # (N, C) f32, unit rows
    class_ids: tuple

    @classmethod
    def from_matrix(cls, matrix, class_ids):
        matrix = _unit_rows(matrix)
        class_ids = tuple(int(c) for c in class_ids)
        if len(class_ids) != matrix.shape[0]:
            raise ValueError("one class id per embedding row required")
        if len(set(class_ids)) != len(class_ids):
            raise ValueError(f"duplicate class ids in {class_ids}")
        return cls(matrix=matrix, class_ids=class_ids)

    @property
    def count(self):
        return int(self.matrix.shape[0])

    @property
    def width(self):
        return int(self.matrix.shape[1])


@dataclass
class JointEmbedding:
    """Seen-class rows followed by candidate rows, one index space."""

    matrix: np.ndarray           # (seen_count + candidate_count, C) f32
    seen_count: int
    candidate_count: int

    @property
    def total(self):
        return self.seen_count + self.candidate_count

    @property
    def width(self):
        return int(self.matrix.shape[1])

    def is_seen(self, joint_id):
        return 0 <= joint_id < self.seen_count


def pool_region_embeddings(feats, masks):
    """Mask-weighted mean of dense features, one unit row per mask.

    Stand-in for an external region encoder: row u is
    normalize(sum over mask_u of feats[:, h, w] / area_u). Masks may be a
    CandidateMaskSet or a (U, H, W) binary array; every mask must be
    nonempty.
    """
    mask_arr = getattr(masks, "masks", masks)
    mask_arr = np.asarray(mask_arr)
    feats = np.asarray(feats, dtype=np.float64)
    c = feats.shape[0]
    if mask_arr.shape[0] == 0:
        return np.zeros((0, c), dtype=np.float32)
    if mask_arr.shape[1:] != feats.shape[1:]:
        raise ValueError(
            f"mask spatial shape {mask_arr.shape[1:]} != features {feats.shape[1:]}")
    rows = np.zeros((mask_arr.shape[0], c), dtype=np.float64)
    for u, mask in enumerate(mask_arr.astype(bool)):
        area = int(mask.sum())
        if area == 0:
            raise ValueError(f"mask {u} is empty")
        rows[u] = feats[:, mask].sum(axis=1) / area
    return _unit_rows(rows)


def load_candidate_embeddings(path, expected_count=None, expected_width=None):
    """Load externally produced candidate embeddings, renormalized.

    ``path`` may be None when the pipeline has no candidates; an empty
    (0, expected_width) bank is returned. Count/width mismatches against
    the current candidate set are errors.
    """
    if path is None or expected_count == 0:
        if path is not None:
            raise ValueError("candidate embedding file supplied but no candidates exist")
        if expected_width is None:
            raise ValueError("empty candidate bank needs an explicit width")
        return np.zeros((0, expected_width), dtype=np.float32)
    matrix = load_tensor(path)
    if matrix.ndim != 2:
        raise ValueError(f"{path}: candidate embeddings must be rank 2")
    if expected_count is not None and matrix.shape[0] != expected_count:
        raise ValueError(
            f"{path}: {matrix.shape[0]} embedding rows for {expected_count} candidates")
    if expected_width is not None and matrix.shape[1] != expected_width:
        raise ValueError(
            f"{path}: embedding width {matrix.shape[1]} != expected {expected_width}")
    return _unit_rows(matrix)


def build_joint_embedding(seen, candidates):
    """Concatenate seen-class rows with candidate rows, order preserved."""
    seen_matrix = seen.matrix if isinstance(seen, ClassEmbeddings) else np.asarray(seen)
    candidates = np.asarray(candidates, dtype=np.float32)
    if candidates.shape[0] and candidates.shape[1] != seen_matrix.shape[1]:
        raise ValueError(
            f"candidate width {candidates.shape[1]} != seen width {seen_matrix.shape[1]}")
    if candidates.shape[0]:
        matrix = np.concatenate([seen_matrix, candidates], axis=0)
    else:
        matrix = seen_matrix.copy()
    norms = np.linalg.norm(matrix.astype(np.float64), axis=1)
    if matrix.shape[0] and np.abs(norms - 1.0).max() > UNIT_ROW_TOL:
        raise ValueError("joint embedding rows must be unit norm")
    return JointEmbedding(
        matrix=matrix.astype(np.float32),
        seen_count=int(seen_matrix.shape[0]),
        candidate_count=int(candidates.shape[0]),
    )
