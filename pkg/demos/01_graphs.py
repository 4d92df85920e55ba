"""Build the four road graphs for a small synthetic network.

Each graph weights the same roads differently: hop distance, road
length along the path, similarity of daily flow curves, and similarity of
static road attributes.  Run: python3 demos/01_graphs.py
"""
import numpy as np

from hgpool.data import split_bounds, synth_dataset
from hgpool.graphs import GRAPH_KINDS, build_graph, hop_distances

tensor, topo = synth_dataset(n=12, days=7, seed=0)
train_end, _ = split_bounds(tensor.T)
print(f"{topo.n} roads, {len(topo.edges)} links, {tensor.T} hours ({train_end} for training)")

hops = hop_distances(topo)
print(f"network diameter: {int(hops.max())} hops")

span = tensor.values[:train_end]
print(f"\n{'graph':<9} {'min':>7} {'max':>7} {'mean':>7}  strongest partner of road 0")
for kind in GRAPH_KINDS:
    w = build_graph(kind, span, topo).adjacency
    off = w[~np.eye(topo.n, dtype=bool)]
    print(f"{kind:<9} {off.min():7.3f} {off.max():7.3f} {off.mean():7.3f}  "
          f"road {int(np.argmax(w[0]))} ({w[0].max():.3f})")

# neighbours in the network are close under Topo and Geo by construction;
# HistPatt and Attr may link far-apart roads that behave alike
topo_w = build_graph("Topo", span, topo).adjacency
patt_w = build_graph("HistPatt", span, topo).adjacency
print("\ncorrelation of Topo and HistPatt weights:",
      round(float(np.corrcoef(topo_w.ravel(), patt_w.ravel())[0, 1]), 3))
