from __future__ import annotations
from contextlib import contextmanager
from typing import Any, Iterator
from dataclasses import dataclass, field
from pathlib import Path
import gzip
import logging
import shelve
import shutil
from shelve import Shelf

import cloudpickle

from .types import JobKey, JsonStr


LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class ResultCache:
    """ On-disk cache of experiment job results.
    Layout:
    base_path/
        * <job kind>/
            * id_table
            * results/
                * 0/
                    * args.json
                    * result.pkl.gz
                * 1/
                    ...
    """
    base_path: Path
    compress_level: int = 9
    _tables: dict[str, IdTable] = field(default_factory=dict, init=False, repr=False, compare=False)

    def _table(self, kind: str) -> IdTable:
        table = self._tables.get(kind)
        if table is None:
            table = self._tables[kind] = IdTable(self.base_path / kind / 'id_table')
        return table

    def instance_dir(self, key: JobKey) -> Path:
        kind, args = key
        return self.base_path / kind / 'results' / str(self._table(kind).get(args))

    def result_path(self, key: JobKey) -> Path:
        return self.instance_dir(key) / 'result.pkl.gz'

    def __contains__(self, key: JobKey) -> bool:
        kind, args = key
        return args in self._table(kind) and self.result_path(key).exists()

    def save(self, key: JobKey, obj: Any) -> None:
        path = self.instance_dir(key)
        path.mkdir(parents=True, exist_ok=True)
        with open(path / 'args.json', 'w') as ref:
            ref.write(key[1])
        with gzip.open(self.result_path(key), 'wb', compresslevel=self.compress_level) as ref:
            cloudpickle.dump(obj, ref)
        LOGGER.debug(f'Cached {key} at {path}')

    def load(self, key: JobKey) -> Any:
        with gzip.open(self.result_path(key), 'rb') as ref:
            return cloudpickle.load(ref)

    def clear(self) -> None:
        if self.base_path.exists():
            shutil.rmtree(self.base_path)


class IdTable:
    """ Persistent map from argument JSON to a small integer id. """
    def __init__(self, path: Path | str) -> None:
        self.path = Path(path)
        self.cache: dict[str, int] = {}

    @contextmanager
    def _connect_shelf(self) -> Iterator[Shelf[int]]:
        if not self.path.parent.exists():
            self.path.parent.mkdir(parents=True)
        with shelve.open(str(self.path), writeback=True) as shelf:
            yield shelf

    def get(self, x: JsonStr | str) -> int:
        out = self.cache.get(x)
        if out is not None:
            return out

        with self._connect_shelf() as s:
            value = s.get(x)
            if value is None:
                value = len(s)
                s[x] = value

        self.cache[x] = value
        return value

    def __contains__(self, key: str) -> bool:
        if key in self.cache:
            return True
        with self._connect_shelf() as s:
            return key in s
