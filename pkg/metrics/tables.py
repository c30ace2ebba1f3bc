"""Aligned text tables and CSV plot data."""

import csv
from pathlib import Path

from metrics.scoring import DEFAULT_MAX_K, round_one


def _cell(value):
    if value is None:
        return '-'
    if isinstance(value, float):
        return f'{value:.1f}'
    return str(value)


def format_table(headers, rows):
    cells = [[str(header) for header in headers]] + [[_cell(value) for value in row] for row in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(headers))]
    lines = []
    for index, row in enumerate(cells):
        lines.append('  '.join(cell.ljust(width) if i == 0 else cell.rjust(width)
                               for i, (cell, width) in enumerate(zip(row, widths))).rstrip())
        if index == 0:
            lines.append('  '.join('-' * width for width in widths))
    return '\n'.join(lines)


def write_csv(path, headers, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(headers)
        for row in rows:
            writer.writerow(['' if value is None else value for value in row])
    return path


def _pct(value):
    return None if value is None else round_one(100 * value)


def pass_k_rows(reports, max_k=DEFAULT_MAX_K):
    headers = ['method'] + [f'pass^{k}' for k in range(1, max_k + 1)]
    rows = [[report.label] + [_pct(report.pass_hat.get(k)) for k in range(1, max_k + 1)] for report in reports]
    return headers, rows


def accuracy_rows(reports):
    headers = ['method', 'e2e_acc', 'process_acc', 'overflows', 'provider_errors']
    rows = [[report.label, _pct(report.e2e_accuracy), _pct(report.process_accuracy), report.overflow_count,
             report.provider_error_count] for report in reports]
    return headers, rows


def token_rows(reports):
    headers = ['method', 'min_tokens', 'max_tokens', 'median_tokens', 'avg_tokens', 'assistant', 'overhead',
               'overhead_pct', 'latency_s', 'assistant_latency_s']
    rows = []
    for report in reports:
        tokens = report.tokens
        rows.append([report.label, tokens.min, tokens.max, tokens.median, round_one(tokens.avg),
                     round_one(tokens.assistant_avg), round_one(tokens.overhead_avg), tokens.overhead_pct,
                     report.latency.wall_avg_s, report.latency.assistant_avg_s])
    return headers, rows


def histogram_rows(distribution):
    headers = ['category', 'title', 'percent']
    rows = [[category.value, category.title, round_one(pct)] for category, pct in distribution.items()]
    return headers, rows


def frequency_rows(frequency, memory_k_counts=None):
    headers = ['agent', 'count']
    rows = [[name, count] for name, count in frequency.items()]
    for k, count in (memory_k_counts or {}).items():
        rows.append([f'Memory(k={k})', count])
    return headers, rows


def memory_sweep_rows(results):
    headers = ['k', 'pass^1', 'overhead_pct', 'overflows']
    rows = [[k, _pct(report.pass_hat.get(1)), report.tokens.overhead_pct, report.overflow_count]
            for k, report in results.items()]
    return headers, rows
