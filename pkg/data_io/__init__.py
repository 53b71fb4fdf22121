from data_io.formats import (
    DatasetManifest, assert_disjoint, graph_fingerprint, ingest_csv, load_graphs, read_jsonl, read_manifest,
    write_jsonl,
)
from data_io.splits import DataConfig, SplitAssignment, random_split, scaffold_split, species_split
from data_io.planted import PlantedBenchmark, generate_planted_benchmark, planted_rule
from data_io.checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
