from __future__ import annotations

import enum

import numpy as np


class Task(enum.Enum):
    LOCALIZATION = "localization"
    OCCUPANCY = "occupancy"
    HAR = "har"

    @classmethod
    def parse(cls, value: "str | Task") -> "Task":
        if isinstance(value, Task):
            return value
        try:
            return cls(value.strip().lower())
        except ValueError:
            raise ValueError(f"unknown task {value!r}; expected one of "
                             f"{[t.value for t in cls]}") from None

    @property
    def out_width(self) -> int:
        return {Task.LOCALIZATION: 2, Task.OCCUPANCY: 4, Task.HAR: 3}[self]

    @property
    def is_classification(self) -> bool:
        return self is not Task.LOCALIZATION

    @property
    def code(self) -> int:
        return list(Task).index(self)

    @classmethod
    def from_code(cls, code: int) -> "Task":
        return list(Task)[code]

    def class_index(self, labels) -> np.ndarray:
        """Map stored labels (person count or activity id) to 0-based class ids."""
        labels = np.asarray(labels)
        if self is Task.OCCUPANCY:
            return labels.astype(np.int64) - 1
        return labels.astype(np.int64)

    def class_names(self) -> list[str]:
        if self is Task.OCCUPANCY:
            return ["1", "2", "3", "4"]
        if self is Task.HAR:
            return ["moving", "standing", "sitting"]
        raise ValueError("localization has no classes")
