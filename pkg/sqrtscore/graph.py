""" DAG processor for experiment jobs """
from __future__ import annotations
from exceptiongroup import ExceptionGroup
from contextlib import ExitStack
from typing import Any, Callable, Mapping, Sequence
from typing_extensions import Self
from collections import defaultdict, Counter
from dataclasses import dataclass, field
from concurrent.futures import Future, wait, FIRST_COMPLETED, Executor
import json
import logging
import traceback

from tqdm.auto import tqdm
import cloudpickle
import networkx as nx

from .cache import ResultCache
from .executors import LocalExecutor
from .types import ErrorHandlingPolicy, JobKey, JsonStr


LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class Job:
    """ One unit of experiment work.

    `fn` is called with the job's `args` plus the results of the `upstream`
    jobs, passed as keyword arguments under their names.
    """
    kind: str
    args: Mapping[str, Any]
    fn: Callable[..., Any] = field(compare=False)
    upstream: Mapping[str, Job] = field(default_factory=dict, compare=False)

    def to_tuple(self) -> JobKey:
        return self.kind, JsonStr(json.dumps(self.args, sort_keys=True))


@dataclass
class JobGraph:
    G: nx.DiGraph
    results: dict[JobKey, Any]

    @classmethod
    def build_from(cls, roots: Sequence[Job], cache: ResultCache | None = None) -> Self:
        G = nx.DiGraph()
        seen: set[JobKey] = set()
        to_expand = list(roots)
        while to_expand:
            job = to_expand.pop()
            x = job.to_tuple()
            if x not in seen:
                seen.add(x)
                to_expand.extend(job.upstream.values())
                G.add_node(x, job=job)
                G.add_edges_from([(p.to_tuple(), x) for p in job.upstream.values()])
        out = JobGraph(G, results={})
        out.trim(cache)
        return out

    @property
    def size(self) -> int:
        return len(self.G)

    def get_job(self, key: JobKey) -> Job:
        return self.G.nodes[key]['job']

    def trim(self, cache: ResultCache | None) -> None:
        """ Drop jobs whose results are already cached, keeping what their successors need. """
        if cache is None:
            return
        cached = [x for x in self.G if x in cache]
        for x in cached:
            self.results[x] = cache.load(x)
        self.G.remove_nodes_from(cached)
        if cached:
            LOGGER.info(f'Reusing {len(cached)} cached result(s)')

    def get_initial_jobs(self) -> list[JobKey]:
        return [x for x in self.G if self.G.in_degree(x) == 0]

    def pop_with_new_leaves(self, x: JobKey) -> list[JobKey]:
        assert not list(self.G.predecessors(x))
        new_leaves = [y for y in self.G.successors(x) if self.G.in_degree(y) == 1]
        self.G.remove_node(x)
        return new_leaves

    def get_nodes_by_kind(self) -> dict[str, list[JsonStr]]:
        out: dict[str, list[JsonStr]] = defaultdict(list)
        for kind, args in self.G:
            out[kind].append(args)
        return dict(out)

    def inputs_of(self, job: Job) -> dict[str, Any]:
        return {name: self.results[up.to_tuple()] for name, up in job.upstream.items()}


def run_job_graph(
        graph: JobGraph,
        executor: Executor,
        error_handling: ErrorHandlingPolicy,
        show_progress: bool,
        cache: ResultCache | None = None,
        ) -> dict[JobKey, Any]:
    """ Consume the job graph concurrently and return every job's result by key.
    """
    is_local = isinstance(executor, LocalExecutor)

    if show_progress and is_local:
        show_progress = False
        LOGGER.warning(f'LocalExecutor is detected while `show_progress` is set True. The progress bars is turned off.')

    stats = {k: len(args) for k, args in graph.get_nodes_by_kind().items()}
    LOGGER.info(f'Following jobs will be called: {stats}')

    if show_progress:
        progressbars = {
                k: tqdm(range(n), desc=k, position=i, mininterval=.1, maxinterval=1)
                for i, (k, n) in enumerate(stats.items())
                }
    else:
        progressbars = {}

    standby = graph.get_initial_jobs()
    in_process: dict[Future[tuple[JobKey, bytes]], JobKey] = dict()
    exceptions: list[FailedJobError] = []

    with ExitStack() as stack:
        for pbar in progressbars.values():
            stack.enter_context(pbar)
        executor = stack.enter_context(executor)

        while standby or in_process:
            # Short circuit for eager error handling
            if error_handling == 'eager' and exceptions:
                break

            LOGGER.debug(
                    f'nodes: {graph.size}, '
                    f'standby: {len(standby)}, '
                    f'in_process: {len(in_process)}'
                    )

            # Submit all leaf jobs
            for key in standby:
                job = graph.get_job(key)
                if is_local:
                    LOGGER.info(f'Interactively executing {key}')
                runner = _JobRunner(
                        key=key,
                        job_data=cloudpickle.dumps(job),
                        inputs_data=cloudpickle.dumps(graph.inputs_of(job)),
                        )
                in_process[executor.submit(runner)] = key

            # Wait for any jobs to complete
            done, _ = wait(in_process.keys(), return_when=FIRST_COMPLETED)

            standby = []
            for done_future in done:
                key = in_process.pop(done_future)
                try:
                    result = _try_getting_result(done_future, graph.get_job(key))
                except FailedJobError as e:
                    exceptions.append(e)
                    continue

                graph.results[key] = result
                if cache is not None:
                    cache.save(key, result)
                if show_progress:
                    progressbars[key[0]].update()
                standby.extend(graph.pop_with_new_leaves(key))

    if exceptions:
        raise generate_job_group(exceptions)

    assert graph.size == 0, f'Graph is not empty. Should not happen.'
    return graph.results


class FailedJobError(Exception):
    def __init__(self, job: Job, msg: str):
        super().__init__(msg)
        self.job = job
        self.msg = msg


def generate_job_group(errors: list[FailedJobError]) -> ExceptionGroup:
    error_count = dict(Counter([e.job.kind for e in errors]))
    job_groups: dict[str, list[FailedJobError]] = defaultdict(list)
    for e in errors:
        job_groups[e.job.kind].append(e)

    exception_groups = {k: ExceptionGroup(f'{len(v)} job(s) failed in {k}', v) for k, v in job_groups.items()}
    return ExceptionGroup(
            f'Failed job count: {error_count}',
            list(exception_groups.values())
            )


def _try_getting_result(future: Future[tuple[JobKey, bytes]], job: Job) -> Any:
    try:
        _, payload = future.result()
    except Exception as e:
        msg = ''.join(traceback.format_exception_only(type(e), e)).strip()
        raise FailedJobError(job, msg=f'{job.to_tuple()}: {msg}') from e
    return cloudpickle.loads(payload)


@dataclass
class _JobRunner:
    key: JobKey
    job_data: bytes
    inputs_data: bytes

    def __call__(self) -> tuple[JobKey, bytes]:
        job = cloudpickle.loads(self.job_data)
        assert isinstance(job, Job)
        inputs = cloudpickle.loads(self.inputs_data)
        result = job.fn(**job.args, **inputs)
        return self.key, cloudpickle.dumps(result)
