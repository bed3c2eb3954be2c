"""Schema linking and the ordered-pair relation matrix over question/schema nodes.

Node order is columns, then tables, then question tokens.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .schema import QuestionTokens, Schema, tokenize


class Relation(str, Enum):
    SELF = "SELF"
    QQ_DIST_M2 = "QQ-DIST(-2)"
    QQ_DIST_M1 = "QQ-DIST(-1)"
    QQ_DIST_P1 = "QQ-DIST(+1)"
    QQ_DIST_P2 = "QQ-DIST(+2)"
    QQ_NONE = "QQ-NONE"
    SAME_TABLE = "SAME-TABLE"
    FOREIGN_F = "FOREIGN-F"
    FOREIGN_R = "FOREIGN-R"
    CC_NONE = "CC-NONE"
    PRIMARY_KEY_F = "PRIMARY-KEY-F"
    HAS_F = "HAS-F"
    CT_NONE = "CT-NONE"
    PRIMARY_KEY_R = "PRIMARY-KEY-R"
    HAS_R = "HAS-R"
    TC_NONE = "TC-NONE"
    FOREIGN_TAB_F = "FOREIGN-TAB-F"
    FOREIGN_TAB_R = "FOREIGN-TAB-R"
    FOREIGN_TAB_B = "FOREIGN-TAB-B"
    TT_NONE = "TT-NONE"
    QC_NO_MATCH = "QC-NO-MATCH"
    QC_PARTIAL_MATCH = "QC-PARTIAL-MATCH"
    QC_EXACT_MATCH = "QC-EXACT-MATCH"
    QC_HAS_VALUE = "QC-HAS-VALUE"
    QT_NO_MATCH = "QT-NO-MATCH"
    QT_PARTIAL_MATCH = "QT-PARTIAL-MATCH"
    QT_EXACT_MATCH = "QT-EXACT-MATCH"
    CQ_NO_MATCH_REV = "CQ-NO-MATCH-REV"
    CQ_PARTIAL_MATCH_REV = "CQ-PARTIAL-MATCH-REV"
    CQ_EXACT_MATCH_REV = "CQ-EXACT-MATCH-REV"
    CQ_HAS_VALUE_REV = "CQ-HAS-VALUE-REV"
    TQ_NO_MATCH_REV = "TQ-NO-MATCH-REV"
    TQ_PARTIAL_MATCH_REV = "TQ-PARTIAL-MATCH-REV"
    TQ_EXACT_MATCH_REV = "TQ-EXACT-MATCH-REV"


RELATIONS: tuple[Relation, ...] = tuple(Relation)
RELATION_INDEX = {r: i for i, r in enumerate(RELATIONS)}

# labels each (source kind, target kind) pair may carry
ALLOWED = {
    ("Q", "Q"): {Relation.SELF, Relation.QQ_DIST_M2, Relation.QQ_DIST_M1, Relation.QQ_DIST_P1,
                 Relation.QQ_DIST_P2, Relation.QQ_NONE},
    ("C", "C"): {Relation.SELF, Relation.SAME_TABLE, Relation.FOREIGN_F, Relation.FOREIGN_R,
                 Relation.CC_NONE},
    ("C", "T"): {Relation.PRIMARY_KEY_F, Relation.HAS_F, Relation.CT_NONE},
    ("T", "C"): {Relation.PRIMARY_KEY_R, Relation.HAS_R, Relation.TC_NONE},
    ("T", "T"): {Relation.SELF, Relation.FOREIGN_TAB_F, Relation.FOREIGN_TAB_R,
                 Relation.FOREIGN_TAB_B, Relation.TT_NONE},
    ("Q", "C"): {Relation.QC_NO_MATCH, Relation.QC_PARTIAL_MATCH, Relation.QC_EXACT_MATCH,
                 Relation.QC_HAS_VALUE},
    ("Q", "T"): {Relation.QT_NO_MATCH, Relation.QT_PARTIAL_MATCH, Relation.QT_EXACT_MATCH},
    ("C", "Q"): {Relation.CQ_NO_MATCH_REV, Relation.CQ_PARTIAL_MATCH_REV,
                 Relation.CQ_EXACT_MATCH_REV, Relation.CQ_HAS_VALUE_REV},
    ("T", "Q"): {Relation.TQ_NO_MATCH_REV, Relation.TQ_PARTIAL_MATCH_REV,
                 Relation.TQ_EXACT_MATCH_REV},
}

NO_MATCH, PARTIAL_MATCH, EXACT_MATCH, HAS_VALUE = "NO-MATCH", "PARTIAL-MATCH", "EXACT-MATCH", "HAS-VALUE"
DEFAULT_PRECEDENCE = (EXACT_MATCH, HAS_VALUE, PARTIAL_MATCH, NO_MATCH)

_QC = {NO_MATCH: Relation.QC_NO_MATCH, PARTIAL_MATCH: Relation.QC_PARTIAL_MATCH,
       EXACT_MATCH: Relation.QC_EXACT_MATCH, HAS_VALUE: Relation.QC_HAS_VALUE}
_CQ = {NO_MATCH: Relation.CQ_NO_MATCH_REV, PARTIAL_MATCH: Relation.CQ_PARTIAL_MATCH_REV,
       EXACT_MATCH: Relation.CQ_EXACT_MATCH_REV, HAS_VALUE: Relation.CQ_HAS_VALUE_REV}
_QT = {NO_MATCH: Relation.QT_NO_MATCH, PARTIAL_MATCH: Relation.QT_PARTIAL_MATCH,
       EXACT_MATCH: Relation.QT_EXACT_MATCH}
_TQ = {NO_MATCH: Relation.TQ_NO_MATCH_REV, PARTIAL_MATCH: Relation.TQ_PARTIAL_MATCH_REV,
       EXACT_MATCH: Relation.TQ_EXACT_MATCH_REV}


def normalize_word(w: str) -> str:
    w = w.lower()
    if len(w) > 3 and w.endswith("ies"):
        return w[:-3] + "y"
    if len(w) > 3 and w.endswith("s") and not w.endswith("ss"):
        return w[:-1]
    return w


def _is_word(tok: str) -> bool:
    return any(ch.isalnum() for ch in tok)


def link_names(q: QuestionTokens, s: Schema) -> dict[tuple[int, tuple[str, int]], str]:
    """Label every (token, schema node) pair with NO/PARTIAL/EXACT match."""
    norm_q = [normalize_word(t) for t in q.tokens]
    nodes = [(("column", i), c.name) for i, c in enumerate(s.columns)]
    nodes += [(("table", i), t.name) for i, t in enumerate(s.tables)]
    out = {}
    for node, name in nodes:
        words = tuple(normalize_word(w) for w in name)
        L = len(words)
        exact = set()
        for start in range(len(norm_q) - L + 1):
            if tuple(norm_q[start:start + L]) == words:
                exact.update(range(start, start + L))
        wordset = set(words)
        for i, tok in enumerate(norm_q):
            if i in exact:
                label = EXACT_MATCH
            elif _is_word(q.tokens[i]) and tok in wordset:
                label = PARTIAL_MATCH
            else:
                label = NO_MATCH
            out[(i, node)] = label
    return out


def link_values(q: QuestionTokens, s: Schema) -> set[tuple[int, int]]:
    """(token, column) pairs where the token occurs inside a cell value of the column.

    Matching is word-level: a token links when it equals one of the words of
    some cell value, case-insensitively.
    """
    if not s.cell_values:
        return set()
    out = set()
    for ci, values in sorted(s.cell_values.items()):
        words = set()
        for v in values:
            if v.strip():
                words.update(tokenize(v).tokens)
        for i, tok in enumerate(q.tokens):
            if _is_word(tok) and tok in words:
                out.add((i, ci))
    return out


@dataclass(frozen=True)
class RelationMatrix:
    n: int
    labels: np.ndarray  # (n, n) int indices into RELATIONS
    kinds: tuple[str, ...]  # "C" / "T" / "Q" per node
    names: tuple[str, ...]

    def label(self, i: int, j: int) -> Relation:
        return RELATIONS[int(self.labels[i, j])]

    def rows(self):
        for i in range(self.n):
            for j in range(self.n):
                yield self.names[i], self.names[j], self.label(i, j)


def node_names(q: QuestionTokens, s: Schema) -> tuple[str, ...]:
    cols = tuple(f"C{i}:{s.tables[c.table_index].original}.{c.original}" for i, c in enumerate(s.columns))
    tabs = tuple(f"T{i}:{t.original}" for i, t in enumerate(s.tables))
    qs = tuple(f"Q{i}:{tok}" for i, tok in enumerate(q.tokens))
    return cols + tabs + qs


def build_relation_matrix(q: QuestionTokens, s: Schema,
                          precedence: tuple[str, ...] = DEFAULT_PRECEDENCE) -> RelationMatrix:
    nc, nt, nq = len(s.columns), len(s.tables), len(q.tokens)
    n = nc + nt + nq
    R = np.full((n, n), -1, dtype=np.int64)
    idx = RELATION_INDEX
    T0, Q0 = nc, nc + nt

    fk = set(s.foreign_keys)
    for a in range(nc):
        ca = s.columns[a]
        for b in range(nc):
            if a == b:
                r = Relation.SELF
            elif (a, b) in fk:
                r = Relation.FOREIGN_F
            elif (b, a) in fk:
                r = Relation.FOREIGN_R
            elif ca.table_index == s.columns[b].table_index:
                r = Relation.SAME_TABLE
            else:
                r = Relation.CC_NONE
            R[a, b] = idx[r]
        for t in range(nt):
            if ca.table_index == t:
                fwd, rev = ((Relation.PRIMARY_KEY_F, Relation.PRIMARY_KEY_R) if ca.is_primary_key
                            else (Relation.HAS_F, Relation.HAS_R))
            else:
                fwd, rev = Relation.CT_NONE, Relation.TC_NONE
            R[a, T0 + t] = idx[fwd]
            R[T0 + t, a] = idx[rev]

    tab_fk = {(s.columns[a].table_index, s.columns[b].table_index) for a, b in s.foreign_keys}
    for x in range(nt):
        for y in range(nt):
            if x == y:
                r = Relation.SELF
            elif (x, y) in tab_fk and (y, x) in tab_fk:
                r = Relation.FOREIGN_TAB_B
            elif (x, y) in tab_fk:
                r = Relation.FOREIGN_TAB_F
            elif (y, x) in tab_fk:
                r = Relation.FOREIGN_TAB_R
            else:
                r = Relation.TT_NONE
            R[T0 + x, T0 + y] = idx[r]

    for i in range(nq):
        for j in range(nq):
            d = j - i
            if d == 0:
                r = Relation.SELF
            elif abs(d) > 2:
                r = Relation.QQ_NONE
            else:
                r = {-2: Relation.QQ_DIST_M2, -1: Relation.QQ_DIST_M1,
                     1: Relation.QQ_DIST_P1, 2: Relation.QQ_DIST_P2}[d]
            R[Q0 + i, Q0 + j] = idx[r]

    names = link_names(q, s)
    values = link_values(q, s)
    rank = {lab: k for k, lab in enumerate(precedence)}
    for i in range(nq):
        for c in range(nc):
            cands = [names[(i, ("column", c))]]
            if (i, c) in values:
                cands.append(HAS_VALUE)
            best = min(cands, key=lambda lab: rank[lab])
            R[Q0 + i, c] = idx[_QC[best]]
            R[c, Q0 + i] = idx[_CQ[best]]
        for t in range(nt):
            lab = names[(i, ("table", t))]
            R[Q0 + i, T0 + t] = idx[_QT[lab]]
            R[T0 + t, Q0 + i] = idx[_TQ[lab]]

    kinds = ("C",) * nc + ("T",) * nt + ("Q",) * nq
    return RelationMatrix(n, R, kinds, node_names(q, s))


def permute_matrix(m: RelationMatrix, order: list[int]) -> RelationMatrix:
    """Reindex nodes: new node k is old node order[k]."""
    o = np.asarray(order)
    return RelationMatrix(m.n, m.labels[np.ix_(o, o)], tuple(m.kinds[k] for k in o),
                          tuple(m.names[k] for k in o))
