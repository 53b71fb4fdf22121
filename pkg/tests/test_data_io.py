import json
import os
import struct

import numpy as np
import pandas as pd
import pytest

from chem_parse import BOND_SINGLE, DIR_NONE, parse_smiles
from data_io import (
    DataConfig, SplitAssignment, assert_disjoint, generate_planted_benchmark, graph_fingerprint, ingest_csv,
    load_checkpoint, planted_rule, random_split, read_checkpoint, read_jsonl, read_manifest, save_checkpoint,
    scaffold_split, species_split, write_jsonl,
)
from data_io.checkpoint import load_head
from data_io.planted import CARBON, MOTIF_FAMILY, TEST_MOTIFS, TRAIN_MOTIFS
from data_io.splits import greedy_group_split
from gnn import Encoder, EncoderConfig, LinearHead
from graph_core import PROTEIN_VOCAB
from tests.strategies import random_graph
from utils.errors import (
    DataError, HashMismatchError, InvalidArgumentError, LeakageError, ShapeMismatchError, VersionMismatchError,
)

CORPUS = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "data", "corpus.csv")

BENZENES = ["Cc1ccccc1", "CCc1ccccc1", "Oc1ccccc1", "Nc1ccccc1", "c1ccccc1"]
CYCLOHEXANES = ["CC1CCCCC1", "OC1CCCCC1", "C1CCCCC1"]
PYRIDINES = ["Cc1ccncc1", "c1ccncc1"]


def small_encoder(seed=0, **overrides):
    values = dict(layers=2, width=16, mlp_hidden=32)
    values.update(overrides)
    return Encoder(EncoderConfig(**values), np.random.default_rng(seed))


class TestSplits:
    def test_greedy_groups_fill_train_then_valid_then_test(self):
        split = greedy_group_split(["a"] * 5 + ["b"] * 3 + ["c"] * 2)
        assert split.sizes() == {"train": 8, "valid": 0, "test": 2}

    def test_scaffold_split_keeps_scaffolds_together(self):
        molecules = [parse_smiles(s) for s in BENZENES + CYCLOHEXANES + PYRIDINES]
        split = scaffold_split(molecules)
        assert split.train == list(range(8))
        assert split.valid == []
        assert split.test == [8, 9]
        assert split.rule == "scaffold"

    def test_scaffold_split_is_reproducible(self):
        molecules = [parse_smiles(s) for s in pd.read_csv(CORPUS)["smiles"]]
        a, b = scaffold_split(molecules), scaffold_split(list(molecules))
        assert a == b
        assert a.indices() == set(range(len(molecules)))

    def test_species_split_counts(self):
        rng = np.random.default_rng(0)
        species = ["human"] * 20 + ["mouse"] * 40 + ["fly"] * 20
        graphs = [random_graph(rng, 4, 0.5).replace(species=s) for s in species]
        split = species_split(graphs, "human", 0.85, seed=3)
        assert split.sizes() == {"train": 51, "valid": 9, "test": 10, "prior": 10}
        assert {species[i] for i in split.test + split.prior} == {"human"}
        assert "human" not in {species[i] for i in split.train + split.valid}

    def test_species_split_pools_other_species_before_cutting(self):
        rng = np.random.default_rng(1)
        species = ["human"] * 4 + ["mouse"] * 3 + ["fly"] * 3
        graphs = [random_graph(rng, 4, 0.5).replace(species=s) for s in species]
        split = species_split(graphs, "human", 0.85, seed=0)
        assert (len(split.train), len(split.valid)) == (5, 1)

    def test_species_split_needs_target_and_two_species(self):
        rng = np.random.default_rng(0)
        graphs = [random_graph(rng, 3, 0.5).replace(species="mouse") for _ in range(4)]
        with pytest.raises(DataError):
            species_split(graphs)
        graphs[0] = graphs[0].replace(species="fly")
        with pytest.raises(DataError):
            species_split(graphs, "human")

    def test_random_split_is_seeded(self):
        a, b, c = random_split(100, seed=1), random_split(100, seed=1), random_split(100, seed=2)
        assert a == b
        assert a.train != c.train
        assert a.sizes() == {"train": 80, "valid": 10, "test": 10}

    def test_fractions_are_validated(self):
        with pytest.raises(InvalidArgumentError):
            random_split(10, fracs=(0.5, 0.5, 0.5))
        with pytest.raises(ValueError):
            DataConfig(train_frac=0.7, valid_frac=0.1, test_frac=0.1)

    def test_overlapping_split_file_is_leakage(self, tmp_path):
        path = tmp_path / "split.json"
        path.write_text(json.dumps({"train": [0, 1], "valid": [1], "test": [2], "rule": "manual"}))
        with pytest.raises(LeakageError):
            SplitAssignment.load(str(path))
        with pytest.raises(DataError):
            SplitAssignment.load(str(tmp_path / "missing.json"))

    def test_malformed_split_file_is_a_data_error_not_leakage(self, tmp_path):
        path = tmp_path / "split.json"
        path.write_text("{not json")
        with pytest.raises(DataError) as info:
            SplitAssignment.load(str(path))
        assert not isinstance(info.value, LeakageError)
        path.write_text(json.dumps([0, 1, 2]))
        with pytest.raises(DataError) as info:
            SplitAssignment.load(str(path))
        assert not isinstance(info.value, LeakageError)

    def test_save_load(self, tmp_path):
        split = random_split(20, seed=4)
        split.save(str(tmp_path / "split.json"))
        assert SplitAssignment.load(str(tmp_path / "split.json")) == split
        with pytest.raises(DataError):
            split.check_covers(10)


class TestDatasetFiles:
    def test_jsonl_and_manifest(self, tmp_path):
        rng = np.random.default_rng(0)
        graphs = [random_graph(rng, 6, 0.3, labels=[1, -1]).replace(name=f"g{i}") for i in range(5)]
        path = str(tmp_path / "graphs.jsonl")
        manifest = write_jsonl(path, graphs, task_names=["a", "b"], provenance={"source": "test"})
        assert manifest.graph_count == 5 and manifest.task_count == 2
        assert read_manifest(path).task_names == ["a", "b"]
        again = read_jsonl(path)
        for g, h in zip(graphs, again):
            assert g.structurally_equal(h)
            assert h.labels.tolist() == [1, -1]
            assert h.name == g.name

    def test_edited_file_no_longer_matches_its_manifest(self, tmp_path):
        path = tmp_path / "graphs.jsonl"
        write_jsonl(str(path), [parse_smiles("CCO"), parse_smiles("CCN")])
        with open(path, "a") as f:
            f.write('{"n":1,"node_attrs":[[5,0]]}\n')
        with pytest.raises(DataError):
            read_jsonl(str(path))

    def test_inconsistent_label_widths(self, tmp_path):
        graphs = [parse_smiles("CC").replace(labels=[1]), parse_smiles("CO").replace(labels=[1, 0])]
        with pytest.raises(InvalidArgumentError):
            write_jsonl(str(tmp_path / "x.jsonl"), graphs)

    def test_bad_lines_raise_or_are_logged(self, tmp_path):
        path = tmp_path / "graphs.jsonl"
        path.write_text('{"n": 1, "node_attrs": [[5, 0]]}\nnot json\n{"n": 2}\n')
        with pytest.raises(DataError):
            read_jsonl(str(path))
        graphs = read_jsonl(str(path), run_id="bad-lines", log_root=str(tmp_path))
        assert len(graphs) == 1
        with open(tmp_path / "fail_logs" / "bad-lines.jsonl") as f:
            assert len(f.readlines()) == 2

    def test_ingest_corpus(self, tmp_path):
        graphs, tasks = ingest_csv(CORPUS, log_root=str(tmp_path))
        assert tasks == ["active", "soluble"]
        assert len(graphs) == 54
        assert all(g.labels is not None and len(g.labels) == 2 for g in graphs)
        assert not (tmp_path / "fail_logs").exists()

    def test_ingest_logs_unparsable_rows(self, tmp_path):
        path = tmp_path / "mols.csv"
        path.write_text("smiles,active\nCCO,1\nC1CC,0\nCX,1\nc1ccccc1,\n")
        graphs, tasks = ingest_csv(str(path), run_id="ingest-test", log_root=str(tmp_path))
        assert tasks == ["active"]
        assert [g.labels.tolist() for g in graphs] == [[1], [-1]]
        with open(tmp_path / "fail_logs" / "ingest-test.jsonl") as f:
            records = [json.loads(line) for line in f]
        assert [r["item_id"] for r in records] == ["row_1", "row_2"]

    def test_fingerprint_ignores_labels_and_names(self):
        g = parse_smiles("CC(=O)O")
        assert graph_fingerprint(g) == graph_fingerprint(g.replace(labels=[1], name="acid"))
        assert graph_fingerprint(g) != graph_fingerprint(parse_smiles("CC(=O)N"))

    def test_assert_disjoint(self):
        test = [parse_smiles("CCO"), parse_smiles("c1ccccc1")]
        assert_disjoint([parse_smiles("CCN")], test)
        with pytest.raises(LeakageError):
            assert_disjoint([parse_smiles("CCN"), parse_smiles("CCO").replace(labels=[0])], test)


class TestPlanted:
    def test_size_and_kind_are_checked(self):
        with pytest.raises(InvalidArgumentError):
            generate_planted_benchmark("transfer", 63)
        with pytest.raises(InvalidArgumentError):
            generate_planted_benchmark("scaffolds", 64)

    def test_context_classes_alternate(self):
        bench = generate_planted_benchmark("context-classes", 64, seed=1)
        assert [int(g.labels[0]) for g in bench.graphs[:4]] == [0, 1, 0, 1]
        assert all(g.degree().max() <= 2 for g in bench.graphs[::2])

    def test_context_classes_share_one_attribute_alphabet(self):
        bench = generate_planted_benchmark("context-classes", 64, seed=1)
        for cls in (0, 1):
            members = [g for g in bench.graphs if int(g.labels[0]) == cls]
            assert {tuple(row) for g in members for row in g.node_attrs.tolist()} == {(CARBON, 0)}
            assert {tuple(row) for g in members for row in g.edge_attrs.tolist()} == {(BOND_SINGLE, DIR_NONE)}
        assert any(g.degree().max() == 3 for g in bench.graphs[1::2])

    def test_masked_rule_atoms_follow_degree(self):
        bench = generate_planted_benchmark("masked-rule", 64, seed=2)
        for g in bench.graphs:
            np.testing.assert_array_equal(g.node_attrs[:, 0], planted_rule(g))

    def test_transfer_split_is_motif_disjoint(self):
        bench = generate_planted_benchmark("transfer", 128, seed=3)
        split = bench.split
        assert {bench.motifs[i] for i in split.train} <= set(TRAIN_MOTIFS)
        assert {bench.motifs[i] for i in split.valid + split.test} <= set(TEST_MOTIFS)
        for i, g in enumerate(bench.graphs):
            assert int(g.labels[0]) == MOTIF_FAMILY[bench.motifs[i]]
            ring = g.num_nodes - int((g.node_attrs[:, 0] == CARBON).sum())
            assert int(g.labels[0]) == int(ring % 2 == 0)
        assert len(bench.pretrain_graphs) == 128
        assert len(bench.pretrain_task_names) == len(bench.pretrain_graphs[0].labels) == 8
        assert not any("family" in name for name in bench.pretrain_task_names)
        assert_disjoint(bench.pretrain_graphs, [bench.graphs[i] for i in split.test])

    def test_ppi_ego_graphs(self):
        bench = generate_planted_benchmark("ppi-ego", 64, seed=4)
        assert len(bench.graphs) == 64
        assert len({g.species for g in bench.graphs}) == 8
        for g in bench.graphs:
            assert g.vocab is PROTEIN_VOCAB
            assert g.center == 0
            assert len(g.labels) == 7

    def test_same_seed_same_benchmark(self):
        a = generate_planted_benchmark("context-classes", 64, seed=5)
        b = generate_planted_benchmark("context-classes", 64, seed=5)
        assert [graph_fingerprint(g) for g in a.graphs] == [graph_fingerprint(g) for g in b.graphs]


class TestCheckpoint:
    @pytest.fixture
    def saved(self, tmp_path):
        enc = small_encoder()
        head = LinearHead(enc.config.output_dim, 3, np.random.default_rng(1), prefix="head")
        path = str(tmp_path / "encoder.ckpt")
        digest = save_checkpoint(path, enc, heads={"head": head}, provenance={"objective": "context"})
        return path, enc, head, digest

    def test_round_trip_is_bitwise(self, saved):
        path, enc, head, digest = saved
        loaded, ckpt = load_checkpoint(path)
        assert ckpt.content_hash == digest
        assert ckpt.header["provenance"] == {"objective": "context"}
        rng = np.random.default_rng(7)
        samples = [random_graph(rng, int(rng.integers(2, 15)), 0.3) for _ in range(10)]
        np.testing.assert_array_equal(enc.encode_graphs(samples), loaded.encode_graphs(samples))
        restored = load_head(ckpt, "head")
        np.testing.assert_array_equal(restored.w.data, head.w.data)
        with pytest.raises(DataError):
            load_head(ckpt, "mask_head")

    def test_load_into_existing_encoder(self, saved):
        path, enc, _, _ = saved
        target = small_encoder(seed=9)
        load_checkpoint(path, encoder=target)
        g = parse_smiles("CC(N)C(=O)O")
        np.testing.assert_array_equal(enc.encode_graphs([g]), target.encode_graphs([g]))

    def test_shape_mismatch(self, saved):
        with pytest.raises(ShapeMismatchError):
            load_checkpoint(saved[0], encoder=small_encoder(width=8))

    def test_corrupt_payload(self, saved):
        path = saved[0]
        raw = bytearray(open(path, "rb").read())
        raw[-1] ^= 0xFF
        open(path, "wb").write(bytes(raw))
        with pytest.raises(HashMismatchError):
            read_checkpoint(path)

    def test_truncated_file(self, saved):
        path = saved[0]
        raw = open(path, "rb").read()
        open(path, "wb").write(raw[:-16])
        with pytest.raises(HashMismatchError):
            read_checkpoint(path)
        open(path, "wb").write(raw[:4])
        with pytest.raises(HashMismatchError):
            read_checkpoint(path)

    def test_version_mismatch(self, saved):
        path = saved[0]
        raw = open(path, "rb").read()
        (size,) = struct.unpack_from("<Q", raw)
        header = json.loads(raw[8:8 + size])
        header["format_version"] = 99
        body = json.dumps(header).encode()
        open(path, "wb").write(struct.pack("<Q", len(body)) + body + raw[8 + size:])
        with pytest.raises(VersionMismatchError):
            read_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            read_checkpoint(str(tmp_path / "nope.ckpt"))
