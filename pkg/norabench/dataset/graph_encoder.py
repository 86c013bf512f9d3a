"""
Graph view of a story: entities become anonymized nodes, binary facts become
labeled edges, unary facts become self-loops and every ambiguous fact gets its
own ambiguity node.
"""

import logging
from typing import Dict, Iterable, List, Optional, Tuple

from ..errors import StoryError
from ..models.program import GroundAtom
from ..models.schemas import EncodedGraph, GraphEdge, GraphNode
from ..models.story import AmbiguousFact, EntityKind, Story

logger = logging.getLogger(__name__)

UNARY_PREFIX = "is_"
EXACTLY_ONE = "exactly_one"
AT_LEAST_ONE = "at_least_one"


def _node_names(story: Story) -> List[Tuple[str, EntityKind]]:
    entities = story.entities
    names = sorted(name for name, kind in entities.items() if kind != "reserved")
    # Reserved constants only become nodes when an edge has to end on them
    reserved = set()
    for atom in story.facts:
        if atom.arity == 2 and entities[atom.args[0]] == "reserved":
            reserved.update(a for a in atom.args if entities[a] == "reserved")
    for fact in story.ambiguous:
        for choice in fact.choices:
            reserved.update(a for a in choice.args if entities[a] == "reserved")
    return [(n, entities[n]) for n in names] + [(n, "reserved") for n in sorted(reserved)]


def _fact_edge(atom: GroundAtom, ids: Dict[str, int], entities: Dict[str, EntityKind]) -> GraphEdge:
    if atom.arity == 1:
        node = ids[atom.args[0]]
        return GraphEdge(src=node, dst=node, label=atom.predicate, predicate=atom.predicate, kind="unary")
    if atom.arity != 2:
        raise StoryError(f"cannot encode {atom}: only unary and binary facts have an edge form")
    subject, other = atom.args
    if entities[other] == "reserved" and entities[subject] != "reserved":
        node = ids[subject]
        return GraphEdge(
            src=node, dst=node, label=f"{UNARY_PREFIX}{other}", predicate=atom.predicate, kind="unary"
        )
    return GraphEdge(src=ids[subject], dst=ids[other], label=atom.predicate, predicate=atom.predicate, kind="fact")


def encode_graph(story: Story, source: str, target: str, labels: Iterable[str] = ()) -> EncodedGraph:
    """
    Encode a story and its query as a labeled directed graph.

    Args:
        story: Story to encode
        source: Query source entity
        target: Query target entity
        labels: Label set R of the query

    Returns:
        EncodedGraph with entity nodes first, then one amb<i> node per ambiguous fact
    """
    for name in (source, target):
        if name not in story.entities:
            raise StoryError(f"query entity '{name}' is not in story {story.story_id}")
    names = _node_names(story)
    ids = {name: i for i, (name, _) in enumerate(names)}
    nodes = [GraphNode(id=i, name=name, kind=kind) for i, (name, kind) in enumerate(names)]
    edges = [_fact_edge(atom, ids, story.entities) for atom in story.facts]

    bounds: Dict[str, Tuple[int, int]] = {}
    for number, fact in enumerate(story.ambiguous, start=1):
        amb_name = f"amb{number}"
        amb_id = len(nodes)
        nodes.append(GraphNode(id=amb_id, name=amb_name, kind="amb"))
        bounds[amb_name] = (fact.lower, fact.upper)
        edges.append(
            GraphEdge(src=ids[fact.subject], dst=amb_id, label=fact.predicate, predicate=fact.predicate, kind="amb_source")
        )
        label = EXACTLY_ONE if fact.exactly_one else AT_LEAST_ONE
        for choice in fact.choices:
            edges.append(
                GraphEdge(src=amb_id, dst=ids[choice.args[1]], label=label, predicate=fact.predicate, kind="amb_choice")
            )

    logger.debug(f"Encoded {story.story_id}: {len(nodes)} nodes, {len(edges)} edges, {len(bounds)} ambiguity nodes")
    return EncodedGraph(
        nodes=nodes,
        edges=edges,
        query=(ids[source], ids[target]),
        labels=sorted(labels),
        bounds=bounds,
    )


def decode_graph(graph: EncodedGraph, story_id: str = "story") -> Story:
    """Rebuild the story facts, ambiguous facts and entity kinds from an encoded graph."""
    nodes = {node.id: node for node in graph.nodes}
    entities: Dict[str, EntityKind] = {
        node.name: node.kind for node in graph.nodes if node.kind != "amb"
    }
    facts: List[GroundAtom] = []
    sources: Dict[int, Tuple[str, str]] = {}
    choices: Dict[int, List[GroundAtom]] = {}

    for edge in graph.edges:
        src, dst = nodes[edge.src], nodes[edge.dst]
        if edge.kind == "fact":
            facts.append(GroundAtom(edge.predicate, (src.name, dst.name)))
        elif edge.kind == "unary":
            if edge.label == edge.predicate:
                facts.append(GroundAtom(edge.predicate, (src.name,)))
            else:
                value = edge.label[len(UNARY_PREFIX):]
                entities.setdefault(value, "reserved")
                facts.append(GroundAtom(edge.predicate, (src.name, value)))
        elif edge.kind == "amb_source":
            sources[edge.dst] = (edge.predicate, src.name)
            choices.setdefault(edge.dst, [])
        else:
            predicate, subject = sources[edge.src]
            choices[edge.src].append(GroundAtom(predicate, (subject, dst.name)))

    ambiguous = []
    for amb_id in sorted(choices):
        lower, upper = graph.bounds[nodes[amb_id].name]
        ambiguous.append(AmbiguousFact(choices=tuple(choices[amb_id]), lower=lower, upper=upper))
    return Story(story_id=story_id, facts=tuple(facts), ambiguous=tuple(ambiguous), entities=entities)


def query_names(graph: EncodedGraph) -> Tuple[str, str]:
    names = {node.id: node.name for node in graph.nodes}
    return names[graph.query[0]], names[graph.query[1]]


def graph_to_dot(graph: EncodedGraph, name: Optional[str] = None) -> str:
    """DOT text of an encoded graph; ambiguity nodes are diamonds and the query nodes double circles."""
    lines = [f'digraph "{name or "story"}" {{']
    for node in graph.nodes:
        attrs = [f'label="{node.name}"']
        if node.kind == "amb":
            attrs.append("shape=diamond")
        elif node.kind == "place":
            attrs.append("shape=box")
        elif node.id in graph.query:
            attrs.append("shape=doublecircle")
        lines.append(f"  n{node.id} [{', '.join(attrs)}];")
    for edge in graph.edges:
        style = ", style=dashed" if edge.kind == "amb_choice" else ""
        lines.append(f'  n{edge.src} -> n{edge.dst} [label="{edge.label}"{style}];')
    lines.append("}")
    return "\n".join(lines) + "\n"
