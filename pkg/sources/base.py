"""Abstract base class for dataset sources."""

from __future__ import annotations

import abc
from typing import List

from core.series import SampleSeries


class DatasetSource(abc.ABC):
    """
    Every dataset origin (CSV files, the simulator, ...) implements this interface.

    Adding a new origin means subclassing DatasetSource and implementing
    ``load()``.  Sources return series in the common SampleSeries schema with
    positive current meaning discharge.
    """

    name: str = "base"

    @abc.abstractmethod
    def load(self) -> List[SampleSeries]:
        """
        Return one SampleSeries per device.

        Unlike network sources, dataset problems are not recoverable here:
        implementations raise the matching ``core.errors`` DataError.
        """
        ...

    def __repr__(self) -> str:
        return f"<{self.__class__.__name__} source={self.name!r}>"
