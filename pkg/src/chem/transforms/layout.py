"""Subband bookkeeping for flattened transform coefficients."""

from dataclasses import dataclass, field

import numpy as np

APPROX = "A"


@dataclass(frozen=True)
class Subband:
    """One (scale, orientation) block of a flattened coefficient vector.

    ``scale`` is 1 for the finest detail scale; the approximation block
    sits one past the coarsest detail scale. ``angle`` is the edge
    orientation in degrees (x = column, y = row) when the band has one.
    """

    scale: int
    orientation: str
    offset: int
    length: int
    shape: tuple
    angle: float = None

    @property
    def slice(self):
        return slice(self.offset, self.offset + self.length)

    def to_dict(self):
        return {
            "scale": self.scale,
            "orientation": self.orientation,
            "offset": self.offset,
            "length": self.length,
            "shape": list(self.shape),
            "angle": self.angle,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            scale=int(d["scale"]),
            orientation=str(d["orientation"]),
            offset=int(d["offset"]),
            length=int(d["length"]),
            shape=tuple(int(s) for s in d["shape"]),
            angle=None if d.get("angle") is None else float(d["angle"]),
        )


@dataclass(frozen=True)
class SubbandLayout:
    kind: str
    levels: int
    image_shape: tuple
    subbands: tuple

    def __post_init__(self):
        object.__setattr__(self, "subbands", tuple(self.subbands))
        object.__setattr__(self, "image_shape", tuple(int(s) for s in self.image_shape))
        offset = 0
        n_approx = 0
        last_scale = None
        for sb in self.subbands:
            if sb.offset != offset:
                raise ValueError(f"subband {sb} does not start at offset {offset}")
            if sb.length != int(np.prod(sb.shape)) or sb.length < 1:
                raise ValueError(f"subband {sb} has inconsistent length")
            if sb.orientation == APPROX:
                n_approx += 1
            if last_scale is not None and sb.scale > last_scale:
                raise ValueError("subbands must be ordered coarsest first")
            last_scale = sb.scale
            offset += sb.length
        if n_approx != 1:
            raise ValueError(f"layout needs exactly one approximation subband, found {n_approx}")

    @property
    def size(self):
        return sum(sb.length for sb in self.subbands)

    @property
    def n_subbands(self):
        return len(self.subbands)

    @property
    def n_scales(self):
        """Number of distinct scale indices, approximation included."""
        return len({sb.scale for sb in self.subbands})

    def coefficient_scales(self):
        """Scale index of every flattened coefficient."""
        return np.concatenate([np.full(sb.length, sb.scale) for sb in self.subbands])

    def coefficient_subbands(self):
        """Subband number of every flattened coefficient."""
        return np.concatenate([np.full(sb.length, i) for i, sb in enumerate(self.subbands)])

    def detail_scales(self):
        return sorted({sb.scale for sb in self.subbands if sb.orientation != APPROX})

    def to_dict(self):
        return {
            "kind": self.kind,
            "levels": self.levels,
            "image_shape": list(self.image_shape),
            "subbands": [sb.to_dict() for sb in self.subbands],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            kind=d["kind"],
            levels=int(d["levels"]),
            image_shape=tuple(d["image_shape"]),
            subbands=tuple(Subband.from_dict(s) for s in d["subbands"]),
        )


@dataclass(frozen=True)
class CoefficientField:
    """Flattened coefficients plus layout and normalization state.

    When ``rms`` is set the values have been divided subband-wise by
    ``max(rms, eps)``; ``guarded`` marks subbands whose RMS hit the floor.
    """

    layout: SubbandLayout
    values: np.ndarray
    rms: np.ndarray = None
    guarded: np.ndarray = field(default=None)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True).ravel()
        if values.size != self.layout.size:
            raise ValueError(f"expected {self.layout.size} coefficients, got {values.size}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.rms is not None:
            rms = np.array(self.rms, dtype=np.float64, copy=True)
            if rms.shape != (self.layout.n_subbands,):
                raise ValueError("rms must hold one value per subband")
            guarded = (
                np.zeros(rms.shape, dtype=bool)
                if self.guarded is None
                else np.array(self.guarded, dtype=bool, copy=True)
            )
            if np.any((rms <= 0) & ~guarded):
                raise ValueError("non-positive subband RMS must be flagged as guarded")
            rms.setflags(write=False)
            guarded.setflags(write=False)
            object.__setattr__(self, "rms", rms)
            object.__setattr__(self, "guarded", guarded)

    @property
    def normalized(self):
        return self.rms is not None

    def subband(self, i):
        sb = self.layout.subbands[i]
        return self.values[sb.slice].reshape(sb.shape)

    def with_values(self, values):
        return CoefficientField(self.layout, values, self.rms, self.guarded)
