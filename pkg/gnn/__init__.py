from gnn.batch import GraphBatch
from gnn.config import VOCABS, EncoderConfig
from gnn.encoder import Encoder, LinearHead
from gnn.layers import gcn_layer, gin_layer, gin_layer_bio, readout, sage_layer
