"""Bidirectional grid road topology.

Intersections sit on a ``rows x cols`` lattice spaced ``lane_length`` apart.
Every road segment carries two directed lanes.  Each intersection side that
faces the map boundary gets a stub road ending in a dead end, where the only
way on is a U-turn back onto the stub's return lane.
"""

from dataclasses import dataclass
from enum import IntEnum
from typing import Optional

import numpy as np


class TurnAction(IntEnum):
    STRAIGHT = 0
    LEFT = 1
    RIGHT = 2


# unit headings, counter-clockwise order so +1 is a left turn
HEADINGS = ((1, 0), (0, 1), (-1, 0), (0, -1))
HEADING_NAMES = ("E", "N", "W", "S")

DEAD_END = -1


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class Lane:
    index: int
    start: tuple  # world coordinates of the lane start
    heading: int  # index into HEADINGS
    from_node: int
    to_node: int  # intersection id, or DEAD_END for outbound stub lanes

    @property
    def direction(self):
        return HEADINGS[self.heading]

    @property
    def axis(self):
        """0 for east-west lanes, 1 for north-south lanes."""
        return self.heading % 2


class RoadNetwork:
    def __init__(self, rows, cols, lane_length, lanes, successors):
        self.rows = rows
        self.cols = cols
        self.lane_length = float(lane_length)
        self.lanes = tuple(lanes)
        # successors[l, a] = lane id or -1
        self.successors = successors
        self.successors.setflags(write=False)
        L = len(self.lanes)
        adj = np.zeros((L, L), dtype=np.float64)
        for l in range(L):
            for nxt in self.successors[l]:
                if nxt >= 0:
                    adj[l, nxt] = 1.0
        adj.setflags(write=False)
        self.adjacency = adj
        self.adj = adj.reshape(-1)

        starts = np.array([lane.start for lane in self.lanes], dtype=np.float64)
        dirs = np.array([lane.direction for lane in self.lanes], dtype=np.float64)
        starts.setflags(write=False)
        dirs.setflags(write=False)
        self.lane_starts = starts
        self.lane_dirs = dirs
        self.lane_end = np.array([lane.to_node for lane in self.lanes], dtype=np.int64)
        self.lane_axis = np.array([lane.axis for lane in self.lanes], dtype=np.int64)

    @property
    def num_intersections(self):
        return self.rows * self.cols

    @property
    def num_lanes(self):
        return len(self.lanes)

    def end_intersection(self, lane):
        return self.lanes[lane].to_node

    def successor(self, lane, action):
        if not 0 <= lane < self.num_lanes:
            raise NetworkError(f"invalid lane id {lane}")
        nxt = int(self.successors[lane, int(action)])
        return None if nxt < 0 else nxt

    def available_turns(self, lane):
        return [TurnAction(a) for a in range(3) if self.successors[lane, a] >= 0]

    def position(self, lane, offset):
        return self.lane_starts[lane] + offset * self.lane_dirs[lane]

    def lane_one_hot(self, lane: Optional[int]):
        v = np.zeros(self.num_lanes)
        if lane is not None and lane >= 0:
            v[lane] = 1.0
        return v

    def intersection_position(self, node):
        r, c = divmod(node, self.cols)
        return (c * self.lane_length, r * self.lane_length)

    def dump(self):
        """Plain-text adjacency listing, one lane per line."""
        lines = [f"# grid {self.rows}x{self.cols} lane_length={self.lane_length:g} "
                 f"I={self.num_intersections} L={self.num_lanes}"]
        for lane in self.lanes:
            parts = []
            for a in TurnAction:
                nxt = self.successors[lane.index, a]
                parts.append(f"{a.name}={'-' if nxt < 0 else int(nxt)}")
            end = "dead-end" if lane.to_node == DEAD_END else f"I{lane.to_node}"
            lines.append(f"{lane.index} {HEADING_NAMES[lane.heading]} "
                         f"({lane.start[0]:g},{lane.start[1]:g})->{end} " + " ".join(parts))
        return "\n".join(lines) + "\n"


def build_grid(rows, cols, lane_length=200.0):
    if rows < 2 or cols < 2:
        raise NetworkError(f"grid needs at least 2x2 intersections, got {rows}x{cols}")
    if not lane_length > 0:
        raise NetworkError(f"lane_length must be positive, got {lane_length}")

    def node_id(r, c):
        return r * cols + c

    def node_xy(node):
        r, c = divmod(node, cols)
        return (c * lane_length, r * lane_length)

    lanes = []
    # (node, heading) -> outgoing lane id ; dead-end return lanes keyed separately
    outgoing = {}
    stub_return = {}  # outbound stub lane -> inbound stub lane

    for r in range(rows):
        for c in range(cols):
            node = node_id(r, c)
            x, y = node_xy(node)
            for h, (dx, dy) in enumerate(HEADINGS):
                nr, nc = r + dy, c + dx
                if 0 <= nr < rows and 0 <= nc < cols:
                    lanes.append(Lane(len(lanes), (x, y), h, node, node_id(nr, nc)))
                    outgoing[node, h] = lanes[-1].index
                else:
                    out = Lane(len(lanes), (x, y), h, node, DEAD_END)
                    lanes.append(out)
                    outgoing[node, h] = out.index
                    far = (x + dx * lane_length, y + dy * lane_length)
                    back = Lane(len(lanes), far, (h + 2) % 4, DEAD_END, node)
                    lanes.append(back)
                    stub_return[out.index] = back.index

    succ = np.full((len(lanes), 3), -1, dtype=np.int64)
    for lane in lanes:
        if lane.to_node == DEAD_END:
            # U-turn at the dead end, modelled as the left-hand turn
            succ[lane.index, TurnAction.LEFT] = stub_return[lane.index]
            continue
        h = lane.heading
        succ[lane.index, TurnAction.STRAIGHT] = outgoing.get((lane.to_node, h), -1)
        succ[lane.index, TurnAction.LEFT] = outgoing.get((lane.to_node, (h + 1) % 4), -1)
        succ[lane.index, TurnAction.RIGHT] = outgoing.get((lane.to_node, (h - 1) % 4), -1)

    return RoadNetwork(rows, cols, lane_length, lanes, succ)


def parse_scene(text):
    """Read ``rows``, ``cols`` and ``lane_length`` from key=value text."""
    vals = {"rows": 3, "cols": 3, "lane_length": 200.0}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise NetworkError(f"bad scene line: {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in ("rows", "cols"):
            vals[key] = int(value)
        elif key == "lane_length":
            vals[key] = float(value)
    return build_grid(vals["rows"], vals["cols"], vals["lane_length"])
