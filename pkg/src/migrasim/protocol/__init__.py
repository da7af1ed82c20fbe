"""Control task language and the node runtime that interprets it."""

from .node import (
    Ack, CloseMarker, Cluster, Costs, Envelope, Migration, Node, ProtocolError, QueryRuntime,
    QuerySpec, Takeover,
)
from .tasks import (
    ControlMessage, OutputStreams, Ref, Streams, T, TakeoverTime, Task, TaskSyntaxError,
    count_control_messages, format_program, format_task, parse, parse_program,
    program_from_json, to_json, walk,
)

__all__ = [
    "Ack", "CloseMarker", "Cluster", "Costs", "Envelope", "Migration", "Node", "ProtocolError",
    "QueryRuntime", "QuerySpec", "Takeover", "ControlMessage", "OutputStreams", "Ref",
    "Streams", "T", "TakeoverTime", "Task", "TaskSyntaxError", "count_control_messages",
    "format_program", "format_task", "parse", "parse_program", "program_from_json", "to_json",
    "walk",
]
