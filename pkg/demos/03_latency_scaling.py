"""Show why the two-stage design scales: constant-cost stage 1 vs linear scan.

Builds one tree, grows the corpus around it at several sizes, and times the
identifier decode (stage 1), the full two-stage retrieve, and a brute-force
cosine scan over the whole corpus. Stage 1 cost depends only on the tree
shape, so it stays flat while brute force grows with the corpus.
"""
from semindex import pipeline
from semindex.bench import build_scaling_fixture


def main():
    sizes = (500, 1000, 2000, 4000)
    print(f"building fixture at corpus sizes {sizes} (one tree, grown corpora)...")
    fixture = build_scaling_fixture(sizes=sizes, dim=32, n_queries=50, seed=0)
    rows = pipeline.bench_scaling(fixture.engines, fixture.queries)
    print()
    print(pipeline.format_scaling(rows))

    first, last = rows[0], rows[-1]
    print(f"\ncorpus grew {last.corpus_size / first.corpus_size:.0f}x; "
          f"stage 1 moved {last.stage1_ms / first.stage1_ms:.2f}x, "
          f"brute force {last.brute_force_ms / first.brute_force_ms:.1f}x")


if __name__ == "__main__":
    main()
