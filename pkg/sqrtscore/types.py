from __future__ import annotations
from typing_extensions import Literal, NewType

import numpy as np
import numpy.typing as npt


Array = npt.NDArray[np.float64]
JsonStr = NewType('JsonStr', str)
JobKey = tuple[str, JsonStr]
ErrorHandlingPolicy = Literal['eager', 'lazy']
ExecType = Literal['process', 'thread', 'local']
Method = Literal['sqrt', 'conventional']
SolveSide = Literal['left', 'right', 'transposed-left']
ReportFormat = Literal['csv', 'md']
ProfileMeasure = Literal['loglg', 'loglf', 'p1', 'dp1']
