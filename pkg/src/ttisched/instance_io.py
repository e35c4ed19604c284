"""Plain-text instance files.

Layout (``#`` starts a comment, blank lines are ignored)::

    K L delta
    id class Q D          # one line per service, class is MCC or MBB
    R T R T ...           # K channel lines, one (rate, validity) pair per service

The TTI menu is ``1..L``.
"""

from __future__ import annotations

import numpy as np

from .exceptions import InvalidInputError
from .model import Instance, ServiceClass, ServiceState


class InstanceParseError(InvalidInputError):
    def __init__(self, line: int, column: int, message: str):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {message}")


def _tokens(raw: str):
    """``(column, token)`` pairs with 1-based columns, comments stripped."""
    text = raw.split("#", 1)[0]
    out = []
    pos = 0
    for tok in text.split():
        pos = text.index(tok, pos)
        out.append((pos + 1, tok))
        pos += len(tok)
    return out


def _num(lineno, col, tok, kind, what):
    try:
        return kind(tok)
    except ValueError:
        raise InstanceParseError(lineno, col, f"expected {what}, got {tok!r}") from None


def parse_instance(text: str) -> Instance:
    lines = [(n, _tokens(raw)) for n, raw in enumerate(text.splitlines(), start=1)]
    lines = [(n, toks) for n, toks in lines if toks]
    if not lines:
        raise InstanceParseError(1, 1, "empty instance file")
    n, head = lines[0]
    if len(head) != 3:
        raise InstanceParseError(n, head[0][0], "header must be 'K L delta'")
    k = _num(n, head[0][0], head[0][1], int, "channel count K")
    big_l = _num(n, head[1][0], head[1][1], int, "largest TTI length L")
    delta = _num(n, head[2][0], head[2][1], float, "signaling overhead delta")
    if k < 1:
        raise InstanceParseError(n, head[0][0], "K must be >= 1")
    if big_l < 1:
        raise InstanceParseError(n, head[1][0], "L must be >= 1")

    services = []
    pos = 1
    classes = {c.value for c in ServiceClass}
    while pos < len(lines) and len(lines[pos][1]) == 4 and lines[pos][1][1][1].upper() in classes:
        n, toks = lines[pos]
        sid = _num(n, toks[0][0], toks[0][1], int, "service id")
        demand = _num(n, toks[2][0], toks[2][1], float, "demand Q")
        deadline = _num(n, toks[3][0], toks[3][1], int, "deadline D")
        try:
            services.append(ServiceState(sid, demand, deadline, ServiceClass(toks[1][1].upper())))
        except InvalidInputError as exc:
            raise InstanceParseError(n, toks[0][0], str(exc)) from None
        pos += 1
    if not services:
        n, toks = lines[pos] if pos < len(lines) else (lines[-1][0] + 1, [(1, "")])
        raise InstanceParseError(n, toks[0][0], "expected a service line 'id class Q D'")

    channel_lines = lines[pos:]
    if len(channel_lines) != k:
        n = channel_lines[k][0] if len(channel_lines) > k else lines[-1][0] + 1
        raise InstanceParseError(n, 1, f"expected {k} channel lines, found {len(channel_lines)}")
    rates = np.zeros((k, len(services)))
    valid = np.zeros((k, len(services)), dtype=np.int64)
    for i, (n, toks) in enumerate(channel_lines):
        if len(toks) != 2 * len(services):
            col = toks[min(len(toks), 2 * len(services)) - 1][0] if toks else 1
            raise InstanceParseError(
                n, col, f"expected {2 * len(services)} values (R T per service), found {len(toks)}"
            )
        for s in range(len(services)):
            (cr, r), (ct, t) = toks[2 * s], toks[2 * s + 1]
            rates[i, s] = _num(n, cr, r, float, "rate R")
            valid[i, s] = _num(n, ct, t, int, "validity T")
            if rates[i, s] < 0:
                raise InstanceParseError(n, cr, "rate must be nonnegative")
            if valid[i, s] < 1:
                raise InstanceParseError(n, ct, "validity must be >= 1")
    try:
        return Instance(tuple(services), rates, valid, tuple(range(1, big_l + 1)), delta)
    except InvalidInputError as exc:
        raise InstanceParseError(lines[0][0], 1, str(exc)) from None


def read_instance(path) -> Instance:
    with open(path, encoding="utf-8") as fh:
        return parse_instance(fh.read())


def _fmt(x) -> str:
    return repr(float(x)).removesuffix(".0") if float(x).is_integer() else repr(float(x))


def format_instance(instance: Instance) -> str:
    if instance.tti_menu != tuple(range(1, instance.max_tti + 1)):
        raise InvalidInputError("instance files can only express TTI menus of the form 1..L")
    out = [f"{instance.num_channels} {instance.max_tti} {_fmt(instance.signaling_overhead)}"]
    for svc in instance.services:
        out.append(f"{svc.id} {svc.service_class.value} {_fmt(svc.demand)} {svc.deadline}")
    for i in range(instance.num_channels):
        out.append(
            " ".join(
                f"{_fmt(instance.rates[i, s])} {int(instance.valid_for[i, s])}"
                for s in range(instance.num_services)
            )
        )
    return "\n".join(out) + "\n"
