"""Community recovery on planted-partition graphs across a range of p_out."""
import argparse

from sklearn.metrics import adjusted_rand_score

from omicsgraph.community import louvain
from omicsgraph.netbuild import graph_from_dense
from omicsgraph.synthetic import planted_partition_graph


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--blocks", type=int, default=4)
    ap.add_argument("--size", type=int, default=8)
    ap.add_argument("--p-in", type=float, default=0.9)
    ap.add_argument("--runs", type=int, default=10)
    args = ap.parse_args()
    names = None
    for p_out in (0.02, 0.05, 0.1, 0.2, 0.3):
        aris = []
        for seed in range(args.runs):
            A, truth = planted_partition_graph([args.size] * args.blocks, args.p_in, p_out, seed)
            names = [f"n{i:03d}" for i in range(len(truth))]
            part = louvain(graph_from_dense(names, A), seed=seed)
            aris.append(adjusted_rand_score(truth, part.assignment))
        good = sum(a >= 0.9 for a in aris)
        print(f"p_out={p_out:.2f}  mean ARI {sum(aris) / len(aris):.3f}  runs with ARI>=0.9: {good}/{args.runs}")


if __name__ == "__main__":
    main()
