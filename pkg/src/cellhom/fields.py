"""Oscillatory coefficient fields a(y).

A field is a symmetric, uniformly elliptic d x d tensor sampled pointwise.
Evaluation is vectorized: the callable maps points of shape (..., d) to
matrices of shape (..., d, d), which is what the assembly loops consume.
Built-in fields are 1-periodic; user-supplied callables may declare
``period=None`` for non-periodic coefficients (the periodic reference
solver then refuses them).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "TensorField",
    "eval_tensor",
    "benchmark_tensor_2d",
    "constant_field",
    "checkerboard_field",
    "parse_field_spec",
    "estimate_bounds",
]

_SQRT17 = math.sqrt(17.0)


@dataclass(frozen=True)
class TensorField:
    """Pointwise symmetric coefficient tensor with ellipticity metadata.

    Parameters
    ----------
    dim : int
        Spatial dimension d (1, 2 or 3).
    fn : callable
        Vectorized evaluator, points (..., d) -> matrices (..., d, d).
    alpha, beta : float
        Lower/upper ellipticity bounds; exact for built-ins, estimates
        (via `estimate_bounds`) otherwise.
    period : float or None
        Period per axis, or None if not periodic.
    name : str
        Identifier used in records and cache keys.
    """

    dim: int
    fn: Callable[[np.ndarray], np.ndarray] = dc_field(repr=False)
    alpha: float
    beta: float
    period: float | None = 1.0
    name: str = "custom"

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.fn(np.asarray(points, dtype=float))


def eval_tensor(field: TensorField, y) -> np.ndarray:
    """Evaluate ``field`` at a single point, with validation.

    Returns the d x d matrix a(y).  Raises InvalidInputError if the point
    has the wrong dimension or the field returns non-finite entries.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim == 0 and field.dim == 1:
        y = y.reshape(1)
    if y.shape != (field.dim,):
        raise InvalidInputError(
            f"point has shape {y.shape}, expected ({field.dim},)"
        )
    a = np.asarray(field(y), dtype=float)
    if a.shape != (field.dim, field.dim):
        raise InvalidInputError(
            f"field returned shape {a.shape}, expected {(field.dim, field.dim)}"
        )
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"field returned non-finite entries at y={y}")
    return a


def benchmark_tensor_2d() -> TensorField:
    """The 2-d diagonal benchmark coefficient (CLI name ``paper-2d``).

    Each diagonal entry is a 1-periodic laminate in one variable,

        a_11(y) = (3 + 2 sqrt(17) / (8 sin(2 pi y_1) + 9))^-1,
        a_22(y) = (1/20 + 2 sqrt(17) / (8 cos(2 pi y_2) + 9))^-1,

    so the homogenized tensor is known in closed form via harmonic means:
    a0 = diag(1/5, 20/41).  Contrast beta/alpha is about 21.
    """

    def fn(pts: np.ndarray) -> np.ndarray:
        y1 = pts[..., 0]
        y2 = pts[..., 1]
        a11 = 1.0 / (3.0 + 2.0 * _SQRT17 / (8.0 * np.sin(2.0 * np.pi * y1) + 9.0))
        a22 = 1.0 / (0.05 + 2.0 * _SQRT17 / (8.0 * np.cos(2.0 * np.pi * y2) + 9.0))
        out = np.zeros(pts.shape[:-1] + (2, 2))
        out[..., 0, 0] = a11
        out[..., 1, 1] = a22
        return out

    alpha = 1.0 / (3.0 + 2.0 * _SQRT17)
    beta = 1.0 / (0.05 + 2.0 / _SQRT17)
    return TensorField(dim=2, fn=fn, alpha=alpha, beta=beta, period=1.0, name="paper-2d")


def constant_field(value: float, dim: int = 2) -> TensorField:
    """Constant isotropic coefficient value * I (identity-check field)."""
    value = float(value)
    if not value > 0:
        raise InvalidInputError(f"constant coefficient must be positive, got {value}")
    if dim not in (1, 2, 3):
        raise InvalidInputError(f"dim must be 1, 2 or 3, got {dim}")
    eye = np.eye(dim)

    def fn(pts: np.ndarray) -> np.ndarray:
        return np.broadcast_to(value * eye, pts.shape[:-1] + (dim, dim)).copy()

    return TensorField(
        dim=dim, fn=fn, alpha=value, beta=value, period=1.0, name=f"constant:{value:g}"
    )


def checkerboard_field(a1: float, a2: float, dim: int = 2) -> TensorField:
    """1-periodic two-phase checkerboard, isotropic a1/a2 on half-period cells."""
    a1, a2 = float(a1), float(a2)
    if not (a1 > 0 and a2 > 0):
        raise InvalidInputError(f"phase values must be positive, got {a1}, {a2}")
    if dim not in (1, 2, 3):
        raise InvalidInputError(f"dim must be 1, 2 or 3, got {dim}")
    eye = np.eye(dim)

    def fn(pts: np.ndarray) -> np.ndarray:
        parity = np.floor(2.0 * pts).astype(np.int64).sum(axis=-1) % 2
        vals = np.where(parity == 0, a1, a2)
        return vals[..., None, None] * eye

    return TensorField(
        dim=dim,
        fn=fn,
        alpha=min(a1, a2),
        beta=max(a1, a2),
        period=1.0,
        name=f"checkerboard:{a1:g}:{a2:g}",
    )


def parse_field_spec(spec: str, dim: int = 2) -> TensorField:
    """Resolve a CLI field string to a TensorField.

    Accepted forms: ``constant:<value>``, ``paper-2d``,
    ``checkerboard:<a1>:<a2>``.
    """
    spec = spec.strip()
    if spec == "paper-2d":
        if dim != 2:
            raise InvalidInputError("field 'paper-2d' is only defined for dim=2")
        return benchmark_tensor_2d()
    head, _, rest = spec.partition(":")
    if head == "constant":
        try:
            value = float(rest)
        except ValueError:
            raise InvalidInputError(f"bad constant field spec {spec!r}") from None
        return constant_field(value, dim=dim)
    if head == "checkerboard":
        parts = rest.split(":")
        if len(parts) != 2:
            raise InvalidInputError(f"bad checkerboard field spec {spec!r}")
        try:
            a1, a2 = float(parts[0]), float(parts[1])
        except ValueError:
            raise InvalidInputError(f"bad checkerboard field spec {spec!r}") from None
        return checkerboard_field(a1, a2, dim=dim)
    raise InvalidInputError(
        f"unknown field spec {spec!r}; expected constant:<v>, paper-2d "
        f"or checkerboard:<a1>:<a2>"
    )


def estimate_bounds(field: TensorField, samples_per_axis: int = 64) -> tuple[float, float]:
    """Sampled ellipticity bounds: (min, max) eigenvalue over one period.

    A diagnostic for user-supplied fields; exact bounds should be passed to
    the TensorField constructor when known.
    """
    period = field.period if field.period is not None else 1.0
    axes = [
        (np.arange(samples_per_axis) + 0.5) * period / samples_per_axis
        for _ in range(field.dim)
    ]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    a = field(mesh)
    eigs = np.linalg.eigvalsh(a)
    return float(eigs.min()), float(eigs.max())
