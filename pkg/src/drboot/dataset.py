"""Container shared by the simulator and the CSV loader."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import DesignMatrix


@dataclass(frozen=True)
class Dataset:
    """Treatment, outcome, and named covariate columns."""

    z: np.ndarray
    y: np.ndarray
    columns: dict[str, np.ndarray]

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if z.shape != y.shape or z.ndim != 1:
            raise ValueError("z and y must be matching vectors")
        if not np.all((z == 0.0) | (z == 1.0)):
            raise ValueError("treatment must be 0/1")
        for name, col in self.columns.items():
            if np.asarray(col).shape != z.shape:
                raise ValueError(f"column {name!r} length mismatch")
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.z.size

    @property
    def n_treated(self) -> int:
        return int(self.z.sum())

    @property
    def n_control(self) -> int:
        return self.n - self.n_treated

    def design(self, names: tuple[str, ...]) -> DesignMatrix:
        """Intercept-first model matrix built from the named columns."""
        return DesignMatrix.from_columns(
            {name: self.columns[name] for name in names}
        )
