"""Experimental finite-state segmenter for agglutinative suffix chains.

Not used by the WordPiece tokenizer. The bundled lexicon only knows a handful
of stems and suffixes; extend it with an FSM file::

    [stems]
    мен
    [suffixes]
    ган лар дан ми сиз
    [cycles]
    да ги лар

Each ``[suffixes]`` line is a chain of suffixes that may follow a stem; every
suffix boundary along the chain is a valid word end. A ``[cycles]`` line is a
chain that may repeat any number of times after the stem.

Orthography drops one of two identical letters at a morpheme boundary
(мен + нинг is written менинг). With ``degeminate`` set, this reduction is
obligatory both when parsing and in ``join_morphemes``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

START = 0


@dataclass
class SuffixFsm:
    stems: frozenset[str]
    transitions: dict[int, list[tuple[str, int]]] = field(default_factory=dict)
    accepting: set[int] = field(default_factory=set)
    num_states: int = 1
    degeminate: bool = True

    def _new_state(self) -> int:
        self.num_states += 1
        return self.num_states - 1

    def _add(self, src: int, suffix: str, dst: int) -> None:
        edges = self.transitions.setdefault(src, [])
        if (suffix, dst) not in edges:
            edges.append((suffix, dst))

    def add_chain(self, suffixes: Sequence[str]) -> None:
        state = START
        for suffix in suffixes:
            # share prefixes of chains, like a trie
            nxt = next((d for s, d in self.transitions.get(state, []) if s == suffix and d in self._chain_states), None)
            if nxt is None:
                nxt = self._new_state()
                self._chain_states.add(nxt)
                self._add(state, suffix, nxt)
            self.accepting.add(nxt)
            state = nxt

    def add_cycle(self, suffixes: Sequence[str]) -> None:
        if not suffixes:
            return
        first = self._new_state()
        self._add(START, suffixes[0], first)
        state = first
        for suffix in suffixes[1:]:
            nxt = self._new_state()
            self._add(state, suffix, nxt)
            state = nxt
        self.accepting.add(state)
        self._add(state, suffixes[0], first)

    def __post_init__(self):
        self._chain_states: set[int] = set()

    def edges(self, state: int) -> list[tuple[str, int]]:
        # longest suffix first gives the greedy reading priority
        return sorted(self.transitions.get(state, []), key=lambda e: (-len(e[0]), e[0], e[1]))

    def accepts_suffixes(self, suffixes: Sequence[str]) -> bool:
        states = {START}
        for suffix in suffixes:
            states = {d for s in states for sfx, d in self.transitions.get(s, []) if sfx == suffix}
            if not states:
                return False
        return bool(states & self.accepting)


def build_fsm(stems: Iterable[str], chains: Iterable[Sequence[str]] = (),
              cycles: Iterable[Sequence[str]] = (), degeminate: bool = True) -> SuffixFsm:
    fsm = SuffixFsm(frozenset(stems), degeminate=degeminate)
    for chain in chains:
        fsm.add_chain(list(chain))
    for cycle in cycles:
        fsm.add_cycle(list(cycle))
    return fsm


def default_fsm() -> SuffixFsm:
    return build_fsm(
        stems=["мен", "уй", "ют"],
        chains=[["нинг"], ["ган", "лар", "дан", "ми", "сиз"]],
        cycles=[["да", "ги", "лар"]],
    )


def load_fsm(path: str | Path) -> SuffixFsm:
    sections: dict[str, list[str]] = {"stems": [], "suffixes": [], "cycles": []}
    current = None
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]"):
            current = line[1:-1].strip()
            if current not in sections:
                raise ValueError(f"{path}:{lineno}: unknown section [{current}]")
            continue
        if current is None:
            raise ValueError(f"{path}:{lineno}: entry outside of a section")
        sections[current].append(line)
    return build_fsm(
        stems=sections["stems"],
        chains=[line.split() for line in sections["suffixes"]],
        cycles=[line.split() for line in sections["cycles"]],
    )


def _surface(prev: str, suffix: str, degeminate: bool) -> str:
    if degeminate and prev and prev[-1] == suffix[0]:
        return suffix[1:]
    return suffix


def join_morphemes(morphemes: Sequence[str], degeminate: bool = True) -> str:
    """Spell out a morpheme sequence, inverse of ``segment_morph``."""
    out = morphemes[0] if morphemes else ""
    for prev, suffix in zip(morphemes, morphemes[1:]):
        out += _surface(prev, suffix, degeminate)
    return out


def segment_morph(word: str, fsm: SuffixFsm) -> list[str] | None:
    """Split ``word`` into stem + suffixes, or return None when no parse exists.

    Stems are tried longest first; suffixes are consumed greedily (longest
    first) with backtracking, and the first parse that ends in an accepting
    state exactly at the end of the word wins.
    """
    for stem in sorted((s for s in fsm.stems if word.startswith(s)), key=lambda s: (-len(s), s)):
        if len(stem) == len(word):
            return [stem]
        # iterative DFS; explicit stack because cycles allow very long words
        stack = [(len(stem), START, 0)]
        path: list[str] = []
        while stack:
            pos, state, edge_idx = stack.pop()
            del path[len(stack):]
            prev = path[-1] if path else stem
            edges = fsm.edges(state)
            for i in range(edge_idx, len(edges)):
                suffix, dst = edges[i]
                surface = _surface(prev, suffix, fsm.degeminate)
                if surface and word.startswith(surface, pos):
                    stack.append((pos, state, i + 1))
                    path.append(suffix)
                    end = pos + len(surface)
                    if end == len(word) and dst in fsm.accepting:
                        return [stem, *path]
                    stack.append((end, dst, 0))
                    break
    return None
