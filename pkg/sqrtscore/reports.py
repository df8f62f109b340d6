""" CSV, Markdown and plot-data output of experiment results. """
from __future__ import annotations
from pathlib import Path
from typing import Sequence
import csv
import io
import logging
import math

from .errors import InvalidArgumentError, OutputError
from .experiments import METHOD_LABELS, PerformanceProfile, SweepCurve, Table1Row
from .types import ReportFormat


LOGGER = logging.getLogger(__name__)


TABLE1_FIELDS = ('dP1', 'dP1_prime', 'dLogLF', 'dLogLG')
_TABLE1_MEASURES = ('p1', 'dp1', 'loglf', 'loglg')
_TABLE1_TITLES = ('ΔP₁', 'ΔP′₁', 'ΔLogLF', 'ΔLogLG')

Table = tuple[list[str], list[list[str]]]


def render_number(x: float | None) -> str:
    """ 17 significant digits, enough to read every binary64 value back exactly. """
    if x is None:
        return ''
    x = float(x)
    if math.isnan(x):
        return 'NaN'
    if math.isinf(x):
        return 'inf' if x > 0 else '-inf'
    return f'{x + 0.0:.17g}'


def table1_table(rows: Sequence[Table1Row], markdown: bool = False) -> Table:
    if markdown:
        header = ['δ', 'K(R_{e,1})'] + [
                f'{METHOD_LABELS[m]} {t}' for m in ('conventional', 'sqrt') for t in _TABLE1_TITLES
                ]
    else:
        header = ['delta', 'cond_Re1'] + [f'{m}_{f}' for m in ('conventional', 'sqrt') for f in TABLE1_FIELDS]
    header.append('precision_change')
    body = []
    for row in rows:
        cells = [render_number(row.delta), render_number(row.cond_Re1)]
        for method in ('conventional', 'sqrt'):
            report = row.report(method)
            cells.extend(render_number(report.measure(name)) for name in _TABLE1_MEASURES)
        cells.append(render_number(row.precision_change))
        body.append(cells)
    return header, body


def profile_tables(profile: PerformanceProfile) -> dict[str, Table]:
    ratios = (
            ['algorithm', 'delta', f't_{profile.measure}', 'ratio'],
            [
                [a, render_number(delta), render_number(profile.measures[a][p]), render_number(profile.ratios[a][p])]
                for a in profile.algorithms
                for p, delta in enumerate(profile.problems)
                ],
            )
    summary = (
            ['algorithm', 'phi_at_1', 'mu_reaching_1', 'phi_at_mu_max'],
            [
                [a, render_number(s.phi_at_one), render_number(s.mu_reaching_one), render_number(s.phi_at_mu_max)]
                for a in profile.algorithms
                for s in [profile.summary(a)]
                ],
            )
    return {'profile': ratios, 'profile_summary': summary}


def sweep_table(curve: SweepCurve) -> Table:
    header = ['tau'] + [f'loglik_{m}' for m in curve.methods] + [f'gradient_{m}' for m in curve.methods]
    body = [
            [render_number(tau)]
            + [render_number(curve.loglik[m][j]) for m in curve.methods]
            + [render_number(curve.gradient[m][j]) for m in curve.methods]
            for j, tau in enumerate(curve.grid)
            ]
    return header, body


def format_csv(table: Table) -> str:
    header, body = table
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator='\n')
    writer.writerow(header)
    writer.writerows(body)
    return buf.getvalue()


def format_markdown(table: Table) -> str:
    header, body = table
    lines = ['| ' + ' | '.join(header) + ' |', '|' + '---|' * len(header)]
    lines.extend('| ' + ' | '.join(cells) + ' |' for cells in body)
    return '\n'.join(lines) + '\n'


def format_points(points: Sequence[tuple[float, float]]) -> str:
    return ''.join(f'{render_number(x)} {render_number(y)}\n' for x, y in points)


def _write(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as e:
        raise OutputError(f'cannot write {path}: {e.strerror or e}') from e
    LOGGER.info(f'Wrote {path}')
    return path


def emit_reports(
        records: Sequence[Table1Row] | PerformanceProfile | SweepCurve,
        fmt: ReportFormat,
        out_dir: Path | str,
        ) -> list[Path]:
    """ Write the records under `out_dir` and return the written paths.

    A sequence of rows (possibly empty) is a δ table; profiles and sweep
    curves additionally get two-column plot-data files.
    """
    out_dir = Path(out_dir)
    if fmt == 'csv':
        render, suffix = format_csv, '.csv'
    elif fmt == 'md':
        render, suffix = format_markdown, '.md'
    else:
        raise InvalidArgumentError(f'Unrecognized format: {fmt}')

    written = []
    if isinstance(records, PerformanceProfile):
        for name, table in profile_tables(records).items():
            written.append(_write(out_dir / f'{name}{suffix}', render(table)))
        for a in records.algorithms:
            written.append(_write(out_dir / f'profile_{a}.dat', format_points(records.breakpoints(a))))
    elif isinstance(records, SweepCurve):
        written.append(_write(out_dir / f'sweep{suffix}', render(sweep_table(records))))
        for m in records.methods:
            written.append(_write(out_dir / f'sweep_loglik_{m}.dat', format_points(list(zip(records.grid, records.loglik[m])))))
            written.append(_write(out_dir / f'sweep_gradient_{m}.dat', format_points(list(zip(records.grid, records.gradient[m])))))
    else:
        written.append(_write(out_dir / f'table1{suffix}', render(table1_table(list(records), markdown=fmt == 'md'))))
    return written
