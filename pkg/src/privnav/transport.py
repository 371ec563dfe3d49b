"""In-process round-based message transport between party state machines."""
from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass
from typing import TextIO

import numpy as np

from .errors import ProtocolError


@dataclass(frozen=True)
class Message:
    round: int
    op: str
    src: int
    dst: int
    tag: str
    nbytes: int


class Transport:
    """Per-sender FIFO queues; a round closes only once every queue is drained.

    With ``record=True`` each party's inbox (payload copies) is kept so tests can
    inspect exactly what one party observed.
    """

    def __init__(self, n_parties: int, record: bool = False):
        self.P = n_parties
        self.round = 0
        self.op = ""
        self._queues: dict[tuple[int, int], deque] = {
            (s, d): deque() for s in range(n_parties) for d in range(n_parties) if s != d
        }
        self.log: list[Message] = []
        self._nbytes = 0
        self.record = record
        self.inbox: list[list[tuple[int, str, np.ndarray]]] = [[] for _ in range(n_parties)]

    def send(self, src: int, dst: int, tag: str, payload: np.ndarray):
        if src == dst:
            raise ProtocolError("a party cannot message itself")
        self._queues[(src, dst)].append((tag, payload))
        self.log.append(Message(self.round, self.op, src, dst, tag, int(payload.nbytes)))
        self._nbytes += int(payload.nbytes)

    def recv(self, dst: int, src: int, tag: str) -> np.ndarray:
        q = self._queues[(src, dst)]
        if not q:
            raise ProtocolError(f"party {dst} expected {tag!r} from party {src} in round {self.round}; none queued")
        got_tag, payload = q.popleft()
        if got_tag != tag:
            raise ProtocolError(f"party {dst} expected {tag!r} from party {src}, got {got_tag!r}")
        if self.record:
            self.inbox[dst].append((src, tag, payload.copy()))
        return payload

    def close_round(self):
        pending = [k for k, q in self._queues.items() if q]
        if pending:
            raise ProtocolError(f"round {self.round} closed with undelivered messages on {pending}")
        self.round += 1

    def totals(self) -> tuple[int, int, int]:
        """(rounds, messages, bytes) so far."""
        return self.round, len(self.log), self._nbytes

    def dump_trace(self, out: TextIO):
        """One line per round: ``round=<r> op=<op> messages=<m> bytes=<b>``."""
        per_round: dict[int, list[Message]] = defaultdict(list)
        for m in self.log:
            per_round[m.round].append(m)
        for r in sorted(per_round):
            msgs = per_round[r]
            out.write(f"round={r} op={msgs[0].op} messages={len(msgs)} bytes={sum(m.nbytes for m in msgs)}\n")


def parse_trace(text: str) -> list[dict]:
    rows = []
    for line in text.splitlines():
        if not line.strip():
            continue
        fields = dict(tok.split("=", 1) for tok in line.split())
        rows.append({"round": int(fields["round"]), "op": fields["op"],
                     "messages": int(fields["messages"]), "bytes": int(fields["bytes"])})
    return rows
