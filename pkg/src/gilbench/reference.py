"""Published mean DTW +/- standard error per sweep cell, kept as row metadata.

Keys are ``(attractor, model, dropout, n_train)``.  These are reference
magnitudes only; the integrator, dt and RNG behind them are unknown, so
rows are never asserted against them numerically.
"""
from __future__ import annotations

N_TRAIN = (1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 25, 50)

# columns: RNN, Transformer p=0.0, p=0.3, p=0.1, p=0.01
_POINT = """
15.4 3.1 | 87.0 10.9 | 98.0 12.7 | 81.5 12.3 | 90.8 16.9
4.0 0.8 | 113.3 18.6 | 47.2 11.5 | 28.1 6.1 | 70.5 13.4
4.2 0.9 | 90.7 22.5 | 47.7 5.7 | 22.7 5.1 | 25.2 5.4
6.5 1.0 | 181.7 36.8 | 66.8 9.2 | 51.4 8.8 | 52.7 17.9
3.1 0.3 | 164.3 48.7 | 117.7 21.9 | 67.1 17.4 | 39.3 10.1
2.6 0.3 | 196.9 70.6 | 119.6 21.9 | 32.9 5.9 | 39.2 12.0
1.9 0.4 | 127.3 42.7 | 101.0 17.5 | 19.6 3.9 | 34.3 12.0
5.2 0.8 | 52.5 19.7 | 221.5 16.8 | 16.3 3.0 | 14.1 4.7
1.3 0.1 | 25.0 12.5 | 232.1 14.5 | 22.9 4.2 | 18.2 7.6
3.4 0.1 | 31.7 14.3 | 232.4 11.2 | 16.7 1.2 | 17.0 6.9
3.8 0.1 | 15.7 0.8 | 219.3 5.6 | 13.9 0.5 | 3.6 0.3
5.4 0.3 | 4.3 0.3 | 184.7 5.8 | 9.6 1.3 | 8.4 0.6
"""

_CYCLIC = """
80.8 8.7 | 567.0 67.0 | 443.4 29.3 | 450.9 33.5 | 515.9 41.3
70.2 8.5 | 534.3 83.8 | 389.1 42.7 | 443.4 59.9 | 377.3 58.2
76.2 7.8 | 488.2 88.6 | 389.4 43.0 | 266.4 71.4 | 273.1 69.3
31.2 4.2 | 589.0 146.6 | 380.6 40.0 | 297.3 80.3 | 313.6 64.4
24.2 2.4 | 581.5 188.7 | 358.2 50.5 | 322.9 79.6 | 203.0 51.8
28.5 3.4 | 564.3 199.3 | 200.1 39.2 | 269.0 73.4 | 217.0 71.5
26.5 3.3 | 386.1 155.8 | 187.4 34.9 | 386.1 155.8 | 111.3 37.2
23.0 1.5 | 124.3 53.6 | 300.8 36.0 | 152.4 31.4 | 69.4 23.7
27.6 3.3 | 71.4 33.5 | 377.1 26.1 | 249.3 29.7 | 42.8 13.0
23.7 2.7 | 60.0 7.6 | 237.6 15.5 | 167.8 27.5 | 37.0 6.7
16.4 1.2 | 33.8 10.2 | 311.1 25.0 | 111.9 21.9 | 36.3 5.5
19.6 1.4 | 36.4 2.4 | 248.6 21.1 | 86.7 12.0 | 43.2 4.5
"""

_COLUMNS = (("rnn", 0.0), ("transformer", 0.0), ("transformer", 0.3),
            ("transformer", 0.1), ("transformer", 0.01))


def _parse(block: str, attractor: str) -> dict:
    table = {}
    rows = [r for r in block.strip().splitlines() if r.strip()]
    for n, row in zip(N_TRAIN, rows):
        for (model, p), cell in zip(_COLUMNS, row.split("|")):
            mean, se = (float(v) for v in cell.split())
            table[(attractor, model, p, n)] = (mean, se)
    return table


PUBLISHED = {**_parse(_POINT, "point"), **_parse(_CYCLIC, "cyclic")}


def lookup(attractor: str, model: str, dropout: float, n_train: int) -> tuple[float, float] | None:
    return PUBLISHED.get((attractor, model, float(dropout), int(n_train)))
