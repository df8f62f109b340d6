from __future__ import annotations
from concurrent.futures import Executor, Future, ProcessPoolExecutor, ThreadPoolExecutor
from typing import TypeVar, ParamSpec, Callable
import logging

from .errors import ConfigError
from .types import ExecType


LOGGER = logging.getLogger(__name__)


_T = TypeVar('_T')
_P = ParamSpec('_P')
class LocalExecutor(Executor):
    """ Runs every job in the calling thread at submission time. """
    def __init__(self, max_workers: int | None = None) -> None:
        if max_workers is not None and max_workers > 1:
            LOGGER.warning(f'{max_workers=} is passed to LocalExecutor. Ignored.')

    def submit(self, __fn: Callable[_P, _T], *args: _P.args, **kwargs: _P.kwargs) -> Future[_T]:
        future = Future[_T]()
        try:
            future.set_result(__fn(*args, **kwargs))
        except Exception as e:
            future.set_exception(e)
        return future


def get_executor(executor_name: ExecType | str, max_workers: int | None) -> Executor:
    if executor_name == 'process':
        executor_type = ProcessPoolExecutor
    elif executor_name == 'thread':
        executor_type = ThreadPoolExecutor
    elif executor_name == 'local':
        executor_type = LocalExecutor
    else:
        raise ConfigError(f'Unrecognized executor name: {executor_name}')
    return executor_type(max_workers=max_workers)
