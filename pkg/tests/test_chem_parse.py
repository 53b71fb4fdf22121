import itertools
import os

import networkx as nx
import numpy as np
import pandas as pd
import pytest

from chem_parse import (
    BOND_AROMATIC, BOND_DOUBLE, BOND_SINGLE, BOND_TRIPLE, CHIRAL_CCW, CHIRAL_CW, DIR_ENDUPRIGHT,
    EMPTY_SCAFFOLD_KEY, canonical_key, murcko_scaffold, parse_smiles, render_smiles, ring_edges,
    scaffold_key_for_smiles,
)
from graph_core import permute_graph
from tests.strategies import to_networkx
from utils.errors import SmilesParseError

CORPUS = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data", "corpus.csv")


@pytest.fixture(scope="module")
def corpus():
    return pd.read_csv(CORPUS, dtype={"smiles": str, "scaffold": str})


def isomorphic(a, b) -> bool:
    return nx.is_isomorphic(to_networkx(a), to_networkx(b),
                            node_match=lambda x, y: x["attrs"] == y["attrs"],
                            edge_match=lambda x, y: x["attrs"] == y["attrs"])


class TestParse:
    def test_ethanol(self):
        g = parse_smiles("CCO")
        assert g.num_nodes == 3
        assert g.node_attrs[:, 0].tolist() == [5, 5, 7]
        assert g.edges.tolist() == [[0, 1], [1, 2]]
        assert g.edge_attrs[:, 0].tolist() == [BOND_SINGLE, BOND_SINGLE]

    def test_bond_orders(self):
        assert parse_smiles("C=C").edge_attrs[0, 0] == BOND_DOUBLE
        assert parse_smiles("C#N").edge_attrs[0, 0] == BOND_TRIPLE
        benzene = parse_smiles("c1ccccc1")
        assert benzene.num_edges == 6
        assert set(benzene.edge_attrs[:, 0].tolist()) == {BOND_AROMATIC}

    def test_ring_closure_and_branches(self):
        g = parse_smiles("CC(C)(C)C1CC1")
        assert g.num_nodes == 7
        assert g.degree().tolist()[1] == 4
        assert (4, 6) in g.edge_set()

    def test_chirality_and_direction(self):
        g = parse_smiles("C[C@H](N)O")
        assert g.node_attrs[1, 1] == CHIRAL_CCW
        assert parse_smiles("N[C@@H](C)O").node_attrs[1, 1] == CHIRAL_CW
        assert parse_smiles("C/C=C/C").edge_attrs[0].tolist() == [BOND_SINGLE, DIR_ENDUPRIGHT]

    def test_bracket_atoms(self):
        g = parse_smiles("O=[N+]([O-])c1cc[nH]c1")
        assert g.node_attrs[1, 0] == 6
        assert g.num_nodes == 8
        assert parse_smiles("[Se]").node_attrs[0, 0] == 33
        assert parse_smiles("ClCBr").node_attrs[:, 0].tolist() == [16, 5, 34]

    @pytest.mark.parametrize("text, offset", [
        ("", 0),
        ("CX", 1),
        ("C1CC", 4),
        ("C(C", 3),
        ("C==C", 2),
        ("C.C", 1),
        ("C[Zz]", 2),
        ("C)", 1),
    ])
    def test_errors_carry_offsets(self, text, offset):
        with pytest.raises(SmilesParseError) as info:
            parse_smiles(text)
        assert info.value.offset == offset

    def test_corpus_parses(self, corpus):
        assert len(corpus) >= 50
        for text in corpus["smiles"]:
            assert parse_smiles(text).num_nodes > 0


class TestRender:
    def test_render_parse_is_isomorphic_on_corpus(self, corpus):
        for text in corpus["smiles"]:
            g = parse_smiles(text)
            again = parse_smiles(render_smiles(g))
            assert isomorphic(g, again), text
            assert canonical_key(g) == canonical_key(again)


class TestScaffold:
    def test_ring_edges(self):
        g = parse_smiles("CCc1ccccc1")
        assert ring_edges(g).tolist() == [False, False] + [True] * 6

    def test_annotated_corpus_scaffolds(self, corpus):
        annotated = corpus[corpus["scaffold"].notna()]
        assert len(annotated) >= 10
        for text, expected in zip(annotated["smiles"], annotated["scaffold"]):
            got = murcko_scaffold(parse_smiles(text))
            if expected == "none":
                assert got.num_nodes == 0
                assert canonical_key(got) == EMPTY_SCAFFOLD_KEY
            else:
                assert isomorphic(got, parse_smiles(expected)), text
                assert canonical_key(got) == canonical_key(parse_smiles(expected))

    def test_ethylbenzene_is_benzene(self):
        assert scaffold_key_for_smiles("CCc1ccccc1") == scaffold_key_for_smiles("c1ccccc1")

    def test_exocyclic_atoms_are_dropped(self):
        assert scaffold_key_for_smiles("O=C1CCCCC1") == scaffold_key_for_smiles("C1CCCCC1")

    def test_canonical_key_has_no_collisions_on_corpus(self, corpus):
        graphs = [parse_smiles(t) for t in corpus["smiles"]]
        graphs += [s for s in (murcko_scaffold(g) for g in graphs) if s.num_nodes]
        keys = [canonical_key(g) for g in graphs]
        for i, j in itertools.combinations(range(len(graphs)), 2):
            assert (keys[i] == keys[j]) == isomorphic(graphs[i], graphs[j])

    def test_canonical_key_ignores_atom_order(self):
        assert canonical_key(parse_smiles("OCC1CCCCC1")) == canonical_key(parse_smiles("C1CCC(CO)CC1"))

    def test_scaffold_of_a_scaffold_is_itself(self, corpus):
        for text in corpus["smiles"]:
            scaffold = murcko_scaffold(parse_smiles(text))
            if not scaffold.num_nodes:
                continue
            again = murcko_scaffold(scaffold)
            assert again.num_nodes == scaffold.num_nodes, text
            assert canonical_key(again) == canonical_key(scaffold), text

    def test_canonical_key_survives_renumbering_on_corpus(self, corpus):
        rng = np.random.default_rng(0)
        for text in corpus["smiles"]:
            g = parse_smiles(text)
            for _ in range(3):
                assert canonical_key(permute_graph(g, rng.permutation(g.num_nodes))) == canonical_key(g), text

    def test_colour_refinement_cannot_split_decalin_from_bicyclopentyl(self):
        decalin, bicyclopentyl = parse_smiles("C1CCC2CCCCC2C1"), parse_smiles("C1CCC(C1)C2CCCC2")
        assert not isomorphic(decalin, bicyclopentyl)
        assert canonical_key(decalin) == canonical_key(bicyclopentyl)
