"""Agreement among the synthetic raters and the consensus label rule.

Three experts rate every video and usually agree; one non-expert is noisier. The
label is the majority rating, or the rounded mean when all three differ.
"""

import numpy as np

from fingertap import stats
from fingertap.ingest import derive_ground_truth
from fingertap.synth import severity_grade_dataset

ds = severity_grade_dataset(20, seed=5)
videos = [lab["video_id"] for lab in ds.labels]
raters = ["E1", "E2", "E3", "N1"]
R = np.full((len(videos), len(raters)), np.nan)
pos = {v: i for i, v in enumerate(videos)}
for r in ds.ratings:
    R[pos[r["video_id"]], raters.index(r["rater_id"])] = r["rating"]

experts = R[:, :3]
print(f"{len(videos)} videos")
for variant in stats.ICC_VARIANTS:
    res = stats.icc(experts, variant)
    print(f"  {variant}: {res.value:.3f}  95% CI [{res.ci_low:.3f}, {res.ci_high:.3f}]")
print(f"  Krippendorff alpha, experts {stats.krippendorff_alpha(experts):.3f}, "
      f"with non-expert {stats.krippendorff_alpha(R):.3f}")
for row in stats.pairwise_agreement(R, raters):
    print(f"  {row['rater_i']}-{row['rater_j']}: {row['exact_agreement_percent']:5.1f}% exact, MAE {row['mae']:.3f}")

labels = [derive_ground_truth(row.astype(int).tolist()) for row in experts]
print("consensus equals the generating grade for every video:",
      labels == [lab["ground_truth"] for lab in ds.labels])
