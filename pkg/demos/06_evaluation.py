"""
Matching detections and scoring
===============================

Predicted centroids are matched one-to-one to true centroids within a
radius. Precision, recall and F1 are then computed from pooled counts
(micro) and per image (macro).
"""

from uvmitosis.evaluation import MetricsReport, compute_macro_metrics, compute_metrics, format_table, match_detections

images = [
    ([(10, 10), (30, 31), (50, 5)], [(12, 10), (29, 30)]),
    ([], [(5, 5)]),
    ([(40, 40)], [(41, 42)]),
]
matches = [match_detections(preds, truths, radius=8) for preds, truths in images]
for i, m in enumerate(matches):
    print(f"image {i}: pairs {m.pairs}, tp={m.tp} fp={m.fp} fn={m.fn}")

print(format_table(compute_metrics(matches), compute_macro_metrics(matches), radius=8))

# Precision 0.6803, recall 0.6757 and F1 0.6780 from tp=100, fp=47, fn=48.
r = MetricsReport(100, 47, 48)
print(round(r.precision, 4), round(r.recall, 4), round(r.f1, 4))

# Greedy matching takes the closest pair first, which can cost a match that
# an optimal assignment keeps.
preds, truths = [(0, 0), (10, 0)], [(1, 0), (-9, 0)]
print("greedy tp:", match_detections(preds, truths, 10).tp,
      "optimal tp:", match_detections(preds, truths, 10, method="optimal").tp)
