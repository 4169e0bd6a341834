"""
Dense grids.

Every grid in bevkit is stored row-major, and multi-channel grids are
channel-major on top of that, so a ``Field3D`` of shape ``(C, H, W)`` holds
channel ``c`` at ``field[c]`` and cell ``(i, j)`` of that channel at
``field[c, i, j]``. Integer coordinates address cell centers.

Sampling outside a grid reads zeros:

::

    >>> import numpy as np
    >>> from bevkit.fields import Field2D, bilinear_sample
    >>> f = Field2D(np.array([[0.0, 4.0]]))
    >>> bilinear_sample(f, 0.25, 0.0)
    1.0
    >>> bilinear_sample(f, 1.5, 0.0)
    2.0
"""

from typing import Iterator, List, Sequence, Tuple, Union

import numpy as np
from scipy import ndimage
from scipy import special

from .util import check_finite


class Field2D(np.ndarray):
    """
    A ``numpy.ndarray`` subclass holding a single ``(height, width)`` grid of
    finite float64 values.

    ``Field2D`` is instantiated like an array:

    >>> Field2D(np.zeros((2, 3))).shape
    (2, 3)
    """

    def __new__(cls, input_array):  # noqa
        obj = np.asarray(input_array, dtype=np.float64).view(cls)
        if obj.ndim != 2:
            raise ValueError(
                f"Field2D must be two-dimensional, got shape {obj.shape}."
            )
        check_finite(obj, "Field2D data")
        return obj

    def __array_finalize__(self, obj):
        if obj is None:
            return

    @classmethod
    def from_flat(cls, height: int, width: int, data: Sequence[float]) -> "Field2D":
        """Build a field from row-major values of length ``height * width``."""
        data = np.asarray(data, dtype=np.float64)
        if data.size != height * width:
            raise ValueError(
                f"Expected {height * width} values for a {height}x{width} field, "
                f"got {data.size}."
            )
        return cls(data.reshape(height, width))

    @property
    def height(self) -> int:  # noqa D102
        return self.shape[0]

    @property
    def width(self) -> int:  # noqa D102
        return self.shape[1]

    def toarray(self) -> np.ndarray:
        """Return a plain ndarray view."""
        return np.asarray(self)


class Field3D(np.ndarray):
    """A ``numpy.ndarray`` subclass holding a ``(C, H, W)`` stack of grids."""

    def __new__(cls, input_array):  # noqa
        obj = np.asarray(input_array, dtype=np.float64).view(cls)
        if obj.ndim != 3:
            raise ValueError(
                f"Field3D must be three-dimensional, got shape {obj.shape}."
            )
        check_finite(obj, "Field3D data")
        return obj

    def __array_finalize__(self, obj):
        if obj is None:
            return

    @classmethod
    def zeros(cls, channels: int, height: int, width: int) -> "Field3D":
        """Return an all-zero field."""
        return cls(np.zeros((channels, height, width)))

    @property
    def channels(self) -> int:  # noqa D102
        return self.shape[0]

    @property
    def height(self) -> int:  # noqa D102
        return self.shape[1]

    @property
    def width(self) -> int:  # noqa D102
        return self.shape[2]

    def channel(self, c: int) -> Field2D:
        """Return channel ``c`` as a ``Field2D``."""
        return Field2D(np.asarray(self)[c])

    def toarray(self) -> np.ndarray:
        """Return a plain ndarray view."""
        return np.asarray(self)


class FieldSeq:
    """
    An ordered sequence of ``Field3D`` sharing one ``(C, H, W)`` shape, e.g.
    the BeV features of timesteps ``1..k``.
    """

    def __init__(self, elements: Sequence[Union[Field3D, np.ndarray]]):
        if len(elements) == 0:
            raise ValueError("FieldSeq needs at least one element.")
        fields = [el if isinstance(el, Field3D) else Field3D(el) for el in elements]
        shape = fields[0].shape
        for t, field in enumerate(fields):
            if field.shape != shape:
                raise ValueError(
                    f"All elements of a FieldSeq must share shape {shape}, but "
                    f"element {t} has shape {field.shape}."
                )
        self.elements: List[Field3D] = fields

    @property
    def shape(self) -> Tuple[int, int, int]:
        """``(C, H, W)`` of every element."""
        return self.elements[0].shape

    def __len__(self) -> int:
        return len(self.elements)

    def __getitem__(self, t: int) -> Field3D:
        return self.elements[t]

    def __iter__(self) -> Iterator[Field3D]:
        return iter(self.elements)

    def stack(self) -> np.ndarray:
        """Return a ``(T, C, H, W)`` array."""
        return np.stack([np.asarray(el) for el in self.elements])


def bilinear_sample_many(
    field: Union[Field2D, np.ndarray], xs: np.ndarray, ys: np.ndarray
) -> np.ndarray:
    """
    Bilinearly sample ``field`` at column coordinates ``xs`` and row coordinates
    ``ys``. Neighbors outside the grid contribute zero.
    """
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise ValueError("Sampling coordinates must be finite.")
    coords = np.stack([ys.ravel(), xs.ravel()])
    out = ndimage.map_coordinates(
        np.asarray(field, dtype=np.float64),
        coords,
        order=1,
        mode="grid-constant",
        cval=0.0,
        prefilter=False,
    )
    return out.reshape(xs.shape)


def bilinear_sample(field: Union[Field2D, np.ndarray], x: float, y: float) -> float:
    """
    Sample ``field`` at cell coordinate ``(x, y)``, where ``x`` runs along
    columns and ``y`` along rows. Returns the stored value exactly at integer
    coordinates.
    """
    return float(bilinear_sample_many(field, np.array([x]), np.array([y]))[0])


def softmax(values, axis: int = -1) -> np.ndarray:
    """
    Numerically stable softmax along ``axis``.

    >>> softmax([0.0, 0.0])
    array([0.5, 0.5])
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0 or arr.shape[axis] == 0:
        raise ValueError("softmax needs a non-empty input.")
    check_finite(arr, "softmax input")
    return special.softmax(arr, axis=axis)
