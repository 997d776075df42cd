"""
Three similarity scorers on a toy text pool
===========================================

BM25 works straight off the raw text. Cosine and token-recall need vector
artifacts, built here by hand so the demo has no model dependency; at
production scale an extractor writes the same tensor-file formats from a
real encoder.
"""

import numpy as np

from iif import (
    Dataset,
    ExampleRecord,
    bm25_build,
    bm25_scores,
    bsr_score,
    cosine_score,
    tokenize,
)

pool = Dataset(
    tuple(
        ExampleRecord(id=f"d{i}", task=task, split="train", input_text=text)
        for i, (task, text) in enumerate(
            [
                ("astronomy", "mars orbits the sun in 687 days"),
                ("astronomy", "jupiter has dozens of moons"),
                ("cooking", "bake the loaf for 40 minutes"),
                ("cooking", "knead the dough and let it rise"),
                ("algebra", "solve the quadratic by factoring"),
            ]
        )
    )
)

query = "how many moons does jupiter have"
print(f"query: {query!r}")
print(f"query terms: {tokenize(query)}")

index = bm25_build(pool)
scores = bm25_scores(index, query)
print("\nbm25 ranking:")
for rec_id, value in sorted(scores.entries.items(), key=lambda kv: -kv[1]):
    text = next(r.input_text for r in pool.records if r.id == rec_id)
    print(f"  {value:6.3f}  {text}")

# hand-built embeddings: one axis per topic, so geometry mirrors the tasks
topic_axis = {"astronomy": 0, "cooking": 1, "algebra": 2}
vecs = {}
for rec in pool.records:
    vec = np.full(3, 0.08)
    vec[topic_axis[rec.task]] = 1.0
    vecs[rec.id] = vec
query_vec = np.array([1.0, 0.1, 0.05])

print("\ncosine ranking on the topic embeddings:")
ranked = sorted(pool.records, key=lambda r: -cosine_score(query_vec, vecs[r.id]))
for rec in ranked:
    print(f"  {cosine_score(query_vec, vecs[rec.id]):6.3f}  [{rec.task}] {rec.input_text}")

# token-recall: every query token looks for its best match among the
# candidate's tokens, so coverage of the query is what gets rewarded
q_tokens = np.array([[1.0, 0.0], [0.0, 1.0]])
full_cover = np.array([[1.0, 0.0], [0.0, 1.0], [0.7, 0.7]])
half_cover = np.array([[1.0, 0.0]])
print("\ntoken-recall scores:")
print(f"  candidate covering both query tokens: {bsr_score(q_tokens, full_cover):.3f}")
print(f"  candidate covering one query token:   {bsr_score(q_tokens, half_cover):.3f}")
