"""Control task trees in the migration-listing vocabulary.

A tree can be written the way migration programs are usually printed::

    ControlMessage(OH
      ControlMessage(Upstream,
        Redirect(Streams(query), OH, NH))
      MoveState(query, NH))

Commas between arguments are optional; whitespace separates them too.
``parse`` reads that text, ``format_task`` prints it back, and
``to_json``/``from_json`` give a plain JSON form for scenario files.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any, Iterable, Iterator, Union

# leaf and structural task names
CONTROL_MESSAGE = "ControlMessage"
STREAM_TASKS = ("BufferStreams", "StopStreams", "StartStreams", "Resume", "Redirect",
                "AddNextHop", "RemoveNextHop")
STATE_TASKS = ("MoveState", "MoveImmutableState", "MoveIncrementalState", "ReplicateCheckpoint")
QUERY_TASKS = ("StartQuery", "StopQuery", "RequestMigration")
TASK_NAMES = frozenset((CONTROL_MESSAGE, "Schedule", *STREAM_TASKS, *STATE_TASKS, *QUERY_TASKS))
MOVE_TASKS = ("MoveState", "MoveImmutableState", "MoveIncrementalState")

# argument constructors
REF_NAMES = frozenset(("Streams", "OutputStreams", "TakeoverTime"))

ROLE_ALIASES = {
    "OH": "OH", "OldHost": "OH",
    "NH": "NH", "NewHost": "NH",
    "US": "US", "Upstream": "US",
    "DS": "DS", "Downstream": "DS",
    "C": "C", "Coordinator": "C",
}


class TaskSyntaxError(ValueError):
    pass


@dataclass(frozen=True)
class Ref:
    """``Streams(query)``, ``OutputStreams(query)``, ``TakeoverTime(query)``.

    ``value`` is filled in when a TakeoverTime is resolved by the old host.
    """

    name: str
    arg: str
    value: Any = None


@dataclass(frozen=True)
class Task:
    name: str
    args: tuple["Arg", ...] = ()

    def __post_init__(self) -> None:
        if self.name not in TASK_NAMES:
            raise TaskSyntaxError(f"unknown task {self.name!r}")

    @property
    def is_control(self) -> bool:
        return self.name == CONTROL_MESSAGE

    @property
    def target(self) -> str:
        if not self.is_control:
            raise AttributeError("only ControlMessage has a target")
        return self.args[0]

    @property
    def subtasks(self) -> tuple["Task", ...]:
        return tuple(a for a in self.args if isinstance(a, Task))

    def __str__(self) -> str:
        return format_task(self, indent=None)


Arg = Union[Task, Ref, str]


def ControlMessage(target: str, *tasks: Task) -> Task:
    return Task(CONTROL_MESSAGE, (target, *tasks))


def T(name: str, *args: Arg) -> Task:
    return Task(name, tuple(args))


def Streams(q: str = "query") -> Ref:
    return Ref("Streams", q)


def OutputStreams(q: str = "query") -> Ref:
    return Ref("OutputStreams", q)


def TakeoverTime(q: str = "query") -> Ref:
    return Ref("TakeoverTime", q)


# -- text form ---------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:(#[^\n]*)|([A-Za-z_][\w.\-]*)|(\()|(\))|(,))")


def _tokens(text: str) -> Iterator[str]:
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise TaskSyntaxError(f"unexpected character at {pos}: {text[pos:pos + 10]!r}")
        pos = m.end()
        if m.group(1):
            continue
        yield next(g for g in m.groups()[1:] if g)


def parse_program(text: str) -> list[Task]:
    """Parse a sequence of top-level tasks."""
    toks = list(_tokens(text))
    out = []
    i = 0
    while i < len(toks):
        node, i = _parse(toks, i)
        if not isinstance(node, Task):
            raise TaskSyntaxError(f"top-level item {node!r} is not a task")
        out.append(node)
    return out


def parse(text: str) -> Task:
    tasks = parse_program(text)
    if len(tasks) != 1:
        raise TaskSyntaxError(f"expected one task, got {len(tasks)}")
    return tasks[0]


def _parse(toks: list[str], i: int) -> tuple[Arg, int]:
    if i >= len(toks):
        raise TaskSyntaxError("unexpected end of input")
    name = toks[i]
    if name in "(),":
        raise TaskSyntaxError(f"unexpected {name!r}")
    i += 1
    if i < len(toks) and toks[i] == "(":
        i += 1
        args: list[Arg] = []
        while True:
            if i >= len(toks):
                raise TaskSyntaxError(f"unclosed {name}(")
            if toks[i] == ")":
                i += 1
                break
            if toks[i] == ",":
                i += 1
                continue
            arg, i = _parse(toks, i)
            args.append(arg)
        if name in REF_NAMES:
            if len(args) != 1 or not isinstance(args[0], str):
                raise TaskSyntaxError(f"{name} takes one name argument")
            return Ref(name, args[0]), i
        return Task(name, tuple(args)), i
    return name, i


def _format_arg(a: Arg) -> str:
    if isinstance(a, Ref):
        return f"{a.name}({a.arg})"
    return str(a)


def format_task(task: Task, indent: int | None = 2, _depth: int = 0) -> str:
    """Print ``task`` in listing syntax; ``indent=None`` gives one line."""
    simple = [a for a in task.args if not isinstance(a, Task)]
    nested = task.subtasks
    head = f"{task.name}(" + ", ".join(_format_arg(a) for a in simple)
    if not nested:
        return head + ")"
    if indent is None:
        parts = ", ".join(format_task(t, None) for t in nested)
        return head + (", " if simple else "") + parts + ")"
    pad = " " * (indent * (_depth + 1))
    body = "\n".join(pad + format_task(t, indent, _depth + 1) for t in nested)
    return head + "\n" + body + ")"


def format_program(tasks: Iterable[Task], indent: int = 2) -> str:
    return "\n".join(format_task(t, indent) for t in tasks)


# -- JSON form ---------------------------------------------------------------


def to_json(a: Arg) -> Any:
    if isinstance(a, Task):
        return {"task": a.name, "args": [to_json(x) for x in a.args]}
    if isinstance(a, Ref):
        return {"ref": a.name, "arg": a.arg}
    return a


def from_json(obj: Any) -> Arg:
    if isinstance(obj, str):
        return obj
    if isinstance(obj, dict) and "task" in obj:
        return Task(obj["task"], tuple(from_json(x) for x in obj.get("args", [])))
    if isinstance(obj, dict) and "ref" in obj:
        return Ref(obj["ref"], obj["arg"])
    raise TaskSyntaxError(f"cannot read task from {obj!r}")


def program_from_json(obj: Any) -> list[Task]:
    """Accept listing text, a JSON task, or a list of either."""
    if isinstance(obj, str):
        return parse_program(obj)
    if isinstance(obj, dict):
        obj = [obj]
    out: list[Task] = []
    for item in obj:
        if isinstance(item, str):
            out.extend(parse_program(item))
        else:
            t = from_json(item)
            if not isinstance(t, Task):
                raise TaskSyntaxError(f"{item!r} is not a task")
            out.append(t)
    return out


# -- tree utilities ------------------------------------------------------------


def walk(task: Task) -> Iterator[Task]:
    yield task
    for a in task.args:
        if isinstance(a, Task):
            yield from walk(a)


def task_names(tasks: Iterable[Task]) -> list[str]:
    return [t.name for top in tasks for t in walk(top)]


def canonical_role(name: str) -> str:
    return ROLE_ALIASES.get(name, name)


def count_control_messages(tasks: Iterable[Task], fanout: dict[str, int],
                           executors: int = 1) -> int:
    """Number of control NetMessages the program sends.

    ``fanout`` maps a canonical role to its node count (e.g. ``{"US": 2}``).
    A ControlMessage executed by ``k`` nodes towards a role with ``n``
    members sends ``k * n`` messages.
    """
    total = 0
    for t in tasks:
        if t.is_control:
            n = fanout.get(canonical_role(t.target), 1)
            total += executors * n
            total += count_control_messages(t.subtasks, fanout, n)
        elif t.name == "Schedule":
            total += count_control_messages(t.subtasks, fanout, executors)
    return total
