"""
Story graph: the undirected multigraph of story facts over non-reserved entities.

A binary fact between two distinct entities is an edge; a fact whose second
argument is reserved (a group or property constant) or that relates an entity
to itself is a self-loop on its first argument.
"""

import logging
from typing import Dict, FrozenSet, Iterable, List, Mapping, NamedTuple, Optional, Set, Tuple

import networkx as nx

from ..models.program import GroundAtom

logger = logging.getLogger(__name__)


class StoryEdge(NamedTuple):
    atom: GroundAtom
    u: str
    v: str

    @property
    def is_loop(self) -> bool:
        return self.u == self.v


def fact_edges(atoms: Iterable[GroundAtom], entities: Mapping[str, str]) -> List[StoryEdge]:
    """Edges of the story graph, one per unary or binary fact with a non-reserved subject."""
    edges = []
    for atom in atoms:
        if not atom.args or entities.get(atom.args[0], "reserved") == "reserved":
            continue
        subject = atom.args[0]
        if atom.arity == 1:
            edges.append(StoryEdge(atom, subject, subject))
        elif atom.arity == 2:
            other = atom.args[1]
            if entities.get(other, "reserved") == "reserved":
                other = subject
            edges.append(StoryEdge(atom, subject, other))
    return edges


def blocks_between(graph: nx.Graph, a: str, b: str) -> Set[FrozenSet[str]]:
    """
    Vertex pairs of the edges that lie on at least one simple a-b path.

    An edge lies on a simple a-b path exactly when its biconnected block is on
    the path between a and b in the block-cut tree.
    """
    if a == b or a not in graph or b not in graph:
        return set()
    blocks = [list(edges) for edges in nx.biconnected_component_edges(graph)]
    tree = nx.Graph()
    for i, edges in enumerate(blocks):
        for u, v in edges:
            tree.add_edge(("block", i), ("node", u))
            tree.add_edge(("block", i), ("node", v))
    start, end = ("node", a), ("node", b)
    if start not in tree or end not in tree or not nx.has_path(tree, start, end):
        return set()
    on_path: Set[FrozenSet[str]] = set()
    for kind, index in nx.shortest_path(tree, start, end):
        if kind == "block":
            on_path.update(frozenset(e) for e in blocks[index])
    return on_path


class StoryGraph:
    """Multigraph of one refinement's facts with memoized off-path queries."""

    def __init__(self, atoms: Iterable[GroundAtom], entities: Mapping[str, str]):
        self.entities = dict(entities)
        self.edges = fact_edges(atoms, entities)
        self.graph = nx.MultiGraph()
        self.graph.add_nodes_from(n for n, kind in self.entities.items() if kind != "reserved")
        for edge in self.edges:
            self.graph.add_edge(edge.u, edge.v, key=edge.atom, predicate=edge.atom.predicate)
        self._edge_of: Dict[GroundAtom, StoryEdge] = {e.atom: e for e in self.edges}
        self._off: Dict[Tuple[str, str], FrozenSet[GroundAtom]] = {}

    def __contains__(self, atom: GroundAtom) -> bool:
        return atom in self._edge_of

    def simple_graph(self) -> nx.Graph:
        simple = nx.Graph()
        simple.add_nodes_from(self.graph.nodes)
        simple.add_edges_from((e.u, e.v) for e in self.edges if not e.is_loop)
        return simple

    def off_path(self, a: str, b: str) -> FrozenSet[GroundAtom]:
        """Fact edges that no simple path between a and b traverses."""
        pair = (a, b) if a <= b else (b, a)
        if pair not in self._off:
            on_path = blocks_between(self.simple_graph(), a, b)
            self._off[pair] = frozenset(
                e.atom for e in self.edges if e.is_loop or frozenset((e.u, e.v)) not in on_path
            )
        return self._off[pair]

    def to_dot(
        self,
        a: Optional[str] = None,
        b: Optional[str] = None,
        used: Iterable[GroundAtom] = (),
        name: str = "story",
    ) -> str:
        """
        Render the graph as DOT.

        Args:
            a: Query source, drawn as a double circle
            b: Query target, drawn as a double circle
            used: Facts used by a proof, drawn bold
            name: Graph name

        Returns:
            DOT text; off-path edges are colored when a and b are given
        """
        used = set(used)
        off = self.off_path(a, b) if a is not None and b is not None else frozenset()
        lines = [f"digraph {_quote(name)} {{"]
        for node in sorted(self.graph.nodes):
            shape = "box" if self.entities.get(node) == "place" else "circle"
            if node in (a, b):
                shape = "doublecircle"
            lines.append(f"    {_quote(node)} [shape={shape}];")
        for edge in self.edges:
            label = edge.atom.predicate
            if edge.is_loop and edge.atom.arity == 2 and edge.atom.args[1] != edge.u:
                label = f"is_{edge.atom.args[1]}"
            attrs = [f"label={_quote(label)}"]
            if edge.atom in off:
                attrs.append('color="deeppink"')
            if edge.atom in used:
                attrs.append("penwidth=2")
            lines.append(f"    {_quote(edge.u)} -> {_quote(edge.v)} [{', '.join(attrs)}];")
        lines.append("}")
        return "\n".join(lines) + "\n"


def _quote(text: str) -> str:
    return '"' + str(text).replace('"', '\\"') + '"'
