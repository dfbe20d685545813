"""
Grid Network

Builds the Manhattan-like signalized grid: intersections, bi-directional
links with boundary stubs, the four movement phases per intersection and
the shortest-path route set between entrances and exits.

The network is immutable after construction and shared read-only by every
simulation worker.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple
import logging

import networkx as nx

from exceptions import InvalidDimensionError, UnreachableExitError

logger = logging.getLogger(__name__)

# Heading vectors, y pointing north
NORTH = (0, 1)
SOUTH = (0, -1)
EAST = (1, 0)
WEST = (-1, 0)

THROUGH = "through"
LEFT = "left"
RIGHT = "right"
UTURN = "uturn"

GROUP_THROUGH_LEFT = "through_left"
GROUP_RIGHT = "right"
GROUP_SHARED = "shared"

# P1..P4 as phase ids 0..3
PHASE_NAMES = ("P1_ns_through_left", "P2_ns_right", "P3_ew_through_left", "P4_ew_right")

Movement = Tuple[str, str]


@dataclass(frozen=True)
class DirectedLink:
    """One direction of a road segment"""
    link_id: str
    from_node: str
    to_node: str
    length: float
    lane_count: int
    free_flow_speed: float
    kind: str  # entrance | exit | internal
    heading: Tuple[int, int]

    @property
    def free_flow_time(self) -> float:
        return self.length / self.free_flow_speed


@dataclass(frozen=True)
class MovementPhase:
    """Movements granted right-of-way together"""
    phase_id: int
    name: str
    movements: frozenset


@dataclass(frozen=True)
class Intersection:
    node_id: str
    row: int
    col: int
    incoming: Tuple[str, ...]
    outgoing: Tuple[str, ...]
    phases: Tuple[MovementPhase, ...]

    @property
    def is_black_cell(self) -> bool:
        """Chessboard colour used for fixed-cycle offsets"""
        return (self.row + self.col) % 2 == 1


@dataclass(frozen=True)
class Route:
    origin: str
    destination: str
    links: Tuple[str, ...]
    length: float
    free_flow_time: float

    @property
    def length_km(self) -> float:
        return self.length / 1000.0


@dataclass(frozen=True)
class Network:
    intersections: Tuple[Intersection, ...]
    links: Tuple[DirectedLink, ...]
    entrances: Tuple[str, ...]
    exits: Tuple[str, ...]
    speed_limit: float
    rows: int
    cols: int
    link_by_id: Dict[str, DirectedLink] = field(repr=False, compare=False)
    intersection_by_id: Dict[str, Intersection] = field(repr=False, compare=False)
    movement_phase: Dict[Movement, int] = field(repr=False, compare=False)
    movement_turn: Dict[Movement, str] = field(repr=False, compare=False)
    movement_group: Dict[Movement, str] = field(repr=False, compare=False)
    node_xy: Dict[str, Tuple[float, float]] = field(repr=False, compare=False)

    def link(self, link_id: str) -> DirectedLink:
        return self.link_by_id[link_id]

    def intersection(self, node_id: str) -> Intersection:
        return self.intersection_by_id[node_id]

    def lane_groups(self, link_id: str) -> Dict[str, int]:
        """Lane groups of an approach and their lane counts"""
        lanes = self.link_by_id[link_id].lane_count
        if lanes == 1:
            return {GROUP_SHARED: 1}
        return {GROUP_THROUGH_LEFT: lanes - 1, GROUP_RIGHT: 1}

    def colocated_exit(self, entrance_id: str) -> str:
        """Exit stub that leaves through the boundary node of an entrance"""
        link = self.link_by_id[entrance_id]
        return link_id_for(link.to_node, link.from_node)


def intersection_id(row: int, col: int) -> str:
    return f"J{row:02d}{col:02d}"


def boundary_id(side: str, index: int) -> str:
    return f"B{side}{index:02d}"


def link_id_for(from_node: str, to_node: str) -> str:
    return f"{from_node}>{to_node}"


def _heading(src: Tuple[float, float], dst: Tuple[float, float]) -> Tuple[int, int]:
    dx, dy = dst[0] - src[0], dst[1] - src[1]
    return (int(dx > 0) - int(dx < 0), int(dy > 0) - int(dy < 0))


def classify_turn(heading_in: Tuple[int, int], heading_out: Tuple[int, int]) -> str:
    """Turn type of a movement from its link headings"""
    if heading_out == heading_in:
        return THROUGH
    if heading_out == (-heading_in[1], heading_in[0]):
        return LEFT
    if heading_out == (heading_in[1], -heading_in[0]):
        return RIGHT
    return UTURN


def _phase_for(heading_in: Tuple[int, int], turn: str) -> int:
    # Vehicles heading north or south came from the south or north approach
    north_south = heading_in in (NORTH, SOUTH)
    if turn == RIGHT:
        return 1 if north_south else 3
    return 0 if north_south else 2


def _group_for(turn: str, lane_count: int) -> str:
    if lane_count == 1:
        return GROUP_SHARED
    return GROUP_RIGHT if turn == RIGHT else GROUP_THROUGH_LEFT


def build_grid(rows: int, cols: int, link_length: float, lanes_per_dir: int, speed_limit: float) -> Network:
    """Build an R x C signalized grid with a boundary stub at every perimeter approach"""
    if rows < 1 or cols < 1:
        raise InvalidDimensionError(
            f"Grid dimensions must be positive, got {rows}x{cols}",
            details={"rows": rows, "cols": cols}
        )
    if link_length <= 0 or speed_limit <= 0 or lanes_per_dir < 1:
        raise InvalidDimensionError(
            "link_length and speed_limit must be positive and lanes_per_dir at least 1",
            details={"link_length": link_length, "speed_limit": speed_limit, "lanes_per_dir": lanes_per_dir}
        )

    node_xy: Dict[str, Tuple[float, float]] = {}
    for r in range(rows):
        for c in range(cols):
            node_xy[intersection_id(r, c)] = (c * link_length, -r * link_length)

    # (boundary node, adjacent intersection)
    stubs: List[Tuple[str, str]] = []
    for c in range(cols):
        node_xy[boundary_id("n", c)] = (c * link_length, link_length)
        node_xy[boundary_id("s", c)] = (c * link_length, -rows * link_length)
        stubs.append((boundary_id("n", c), intersection_id(0, c)))
        stubs.append((boundary_id("s", c), intersection_id(rows - 1, c)))
    for r in range(rows):
        node_xy[boundary_id("w", r)] = (-link_length, -r * link_length)
        node_xy[boundary_id("e", r)] = (cols * link_length, -r * link_length)
        stubs.append((boundary_id("w", r), intersection_id(r, 0)))
        stubs.append((boundary_id("e", r), intersection_id(r, cols - 1)))

    edges: List[Tuple[str, str, str]] = []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                edges.append((intersection_id(r, c), intersection_id(r, c + 1), "internal"))
            if r + 1 < rows:
                edges.append((intersection_id(r, c), intersection_id(r + 1, c), "internal"))

    links: Dict[str, DirectedLink] = {}

    def add_link(src: str, dst: str, kind: str) -> None:
        lid = link_id_for(src, dst)
        links[lid] = DirectedLink(
            link_id=lid, from_node=src, to_node=dst, length=float(link_length),
            lane_count=int(lanes_per_dir), free_flow_speed=float(speed_limit),
            kind=kind, heading=_heading(node_xy[src], node_xy[dst])
        )

    for a, b, kind in edges:
        add_link(a, b, kind)
        add_link(b, a, kind)
    entrances, exits = [], []
    for boundary, junction in stubs:
        add_link(boundary, junction, "entrance")
        add_link(junction, boundary, "exit")
        entrances.append(link_id_for(boundary, junction))
        exits.append(link_id_for(junction, boundary))

    movement_phase: Dict[Movement, int] = {}
    movement_turn: Dict[Movement, str] = {}
    movement_group: Dict[Movement, str] = {}
    intersections = []
    for r in range(rows):
        for c in range(cols):
            nid = intersection_id(r, c)
            incoming = sorted(l.link_id for l in links.values() if l.to_node == nid)
            outgoing = sorted(l.link_id for l in links.values() if l.from_node == nid)
            phase_moves: List[List[Movement]] = [[], [], [], []]
            for lin in incoming:
                for lout in outgoing:
                    turn = classify_turn(links[lin].heading, links[lout].heading)
                    phase = _phase_for(links[lin].heading, turn)
                    movement = (lin, lout)
                    phase_moves[phase].append(movement)
                    movement_phase[movement] = phase
                    movement_turn[movement] = turn
                    movement_group[movement] = _group_for(turn, links[lin].lane_count)
            phases = tuple(
                MovementPhase(phase_id=i, name=PHASE_NAMES[i], movements=frozenset(moves))
                for i, moves in enumerate(phase_moves)
            )
            intersections.append(Intersection(
                node_id=nid, row=r, col=c, incoming=tuple(incoming),
                outgoing=tuple(outgoing), phases=phases
            ))

    network = Network(
        intersections=tuple(intersections),
        links=tuple(links[k] for k in sorted(links)),
        entrances=tuple(sorted(entrances)),
        exits=tuple(sorted(exits)),
        speed_limit=float(speed_limit),
        rows=rows,
        cols=cols,
        link_by_id=dict(sorted(links.items())),
        intersection_by_id={i.node_id: i for i in intersections},
        movement_phase=movement_phase,
        movement_turn=movement_turn,
        movement_group=movement_group,
        node_xy=node_xy,
    )
    logger.debug(f"Built {rows}x{cols} grid: {len(network.links)} links, {len(network.entrances)} entrances")
    return network


def _graph(network: Network) -> nx.DiGraph:
    graph = nx.DiGraph()
    for link in network.links:
        graph.add_edge(link.from_node, link.to_node, weight=link.free_flow_time, link_id=link.link_id)
    return graph


def _make_route(network: Network, origin: str, destination: str, link_ids: List[str]) -> Route:
    length = 0.0
    free_flow_time = 0.0
    for lid in link_ids:
        link = network.link_by_id[lid]
        length += link.length
        free_flow_time += link.free_flow_time
    return Route(origin=origin, destination=destination, links=tuple(link_ids),
                 length=length, free_flow_time=free_flow_time)


def shortest_route(network: Network, origin: str, destination: str,
                   graph: Optional[nx.DiGraph] = None) -> Route:
    """Free-flow shortest route; equal-time ties go to the smallest link-id sequence"""
    entrance = network.link_by_id[origin]
    exit_link = network.link_by_id[destination]
    if exit_link.to_node == entrance.from_node:
        # Leaves through its own stub: U-turn at the first intersection
        return _make_route(network, origin, destination, [origin, destination])

    graph = graph if graph is not None else _graph(network)
    try:
        node_paths = list(nx.all_shortest_paths(graph, entrance.from_node, exit_link.to_node, weight="weight"))
    except nx.NetworkXNoPath:
        raise UnreachableExitError(
            f"Exit {destination} unreachable from {origin}",
            details={"origin": origin, "destination": destination}
        )
    candidates = [
        [graph.edges[u, v]["link_id"] for u, v in zip(path, path[1:])]
        for path in node_paths
    ]
    return _make_route(network, origin, destination, min(candidates))


def enumerate_routes(network: Network, origin: str, exclude_uturn: bool = True) -> List[Route]:
    """One shortest route per admissible exit, in exit order"""
    if origin not in network.entrances:
        raise UnreachableExitError(f"{origin} is not an entrance", details={"origin": origin})
    graph = _graph(network)
    own_exit = network.colocated_exit(origin)
    routes = []
    for exit_id in network.exits:
        if exclude_uturn and exit_id == own_exit:
            continue
        routes.append(shortest_route(network, origin, exit_id, graph))
    return routes


def route_table(network: Network, exclude_uturn: bool = True) -> Dict[str, List[Route]]:
    """Routes for every entrance"""
    return {entrance: enumerate_routes(network, entrance, exclude_uturn) for entrance in network.entrances}


def route_movements(network: Network, route: Route) -> List[Movement]:
    return list(zip(route.links, route.links[1:]))


def network_dump(network: Network) -> Dict:
    """JSON-serialisable view of nodes, links and phases"""
    return {
        "rows": network.rows,
        "cols": network.cols,
        "speed_limit": network.speed_limit,
        "nodes": [
            {"id": node, "x": xy[0], "y": xy[1], "signalized": node in network.intersection_by_id}
            for node, xy in sorted(network.node_xy.items())
        ],
        "links": [
            {
                "id": l.link_id, "from": l.from_node, "to": l.to_node, "length": l.length,
                "lanes": l.lane_count, "free_flow_speed": l.free_flow_speed, "kind": l.kind
            }
            for l in network.links
        ],
        "entrances": list(network.entrances),
        "exits": list(network.exits),
        "intersections": [
            {
                "id": i.node_id,
                "row": i.row,
                "col": i.col,
                "phases": [
                    {
                        "phase_id": p.phase_id,
                        "name": p.name,
                        "movements": [
                            {"in": m[0], "out": m[1], "turn": network.movement_turn[m],
                             "lane_group": network.movement_group[m]}
                            for m in sorted(p.movements)
                        ],
                    }
                    for p in i.phases
                ],
            }
            for i in network.intersections
        ],
    }
