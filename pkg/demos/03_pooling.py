"""Look inside the two pooling operators on one input window.

DiffPool softly assigns every road to one of ceil(n/2) clusters; SAGPool
scores roads with a graph attention layer and keeps the top half, three
times over.  Run: python3 demos/03_pooling.py
"""
import numpy as np

from hgpool.data import minmax_normalize, synth_dataset
from hgpool.graphs import build_graph
from hgpool.pooling import ModelConfig, assemble_model, model_forward, node_features

tensor, topo = synth_dataset(n=20, days=3, seed=3)
scaled, _, _ = minmax_normalize(tensor.values)
graph = build_graph("Topo", tensor.values, topo)
window = scaled[:24]
x = node_features(window)

diff = assemble_model("DiffPool", topo.n, x.shape[1], 5,
                      ModelConfig(hidden=16, mlp_hidden=32), seed=0)
trace = []
diff.logits(graph.adjacency, x, trace=trace)
s = trace[0]["assignment"]
print(f"DiffPool: {topo.n} roads -> {s.shape[1]} clusters (untrained)")
print("most likely cluster of each road:", s.argmax(axis=1).tolist())
print("largest assignment probability per road:", np.round(s.max(axis=1), 2).tolist())
print("rows of S sum to one:", bool(np.allclose(s.sum(axis=1), 1.0)))

sag = assemble_model("SAGPool", topo.n, x.shape[1], 5,
                     ModelConfig(hidden=16, mlp_hidden=32, blocks=3), seed=0)
trace = []
sag.logits(graph.adjacency, x, trace=trace)
print(f"\nSAGPool keeps {sag.node_counts} nodes in its three blocks")
for b, t in enumerate(trace):
    print(f"block {b}: kept positions {t['kept'].tolist()}")
    print(f"         scores {np.round(t['scores'], 2).tolist()}")

probs = model_forward(sag, window, graph)
print("\nuntrained grade probabilities for road 0:", np.round(probs[0], 3))
