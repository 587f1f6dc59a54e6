"""How ratio bounds become expectation constraints.

Every constrained activity owns two feature coordinates whose expected
values under a posterior are negative exactly when the corpus-level male
ratio sits inside [b* - gamma, b* + gamma]. This script prints the feature
case table for one activity and then sweeps a posterior across the
boundary to show the expectation changing sign with the ratio residual.
"""

import numpy as np

import biascal as bc

B_STAR = 0.3
GAMMA = 0.05

cs = bc.ConstraintSet((0,), np.array([B_STAR]), GAMMA)

print(f"feature values for b* = {B_STAR}, gamma = {GAMMA}:")
for gender in (bc.GenderTag.MALE, bc.GenderTag.FEMALE, bc.GenderTag.UNGENDERED):
    cand = bc.CandidateStructure(0, gender, 0.0)
    print(f"  {gender.name.lower():10s} -> {bc.feature_vector(cand, cs)}")

# one instance with a male/female candidate pair; the posterior male share
# sweeps from well below the lower bound to well above the upper bound
corpus = bc.Corpus(
    (
        bc.Instance(
            "i0",
            (
                bc.CandidateStructure(0, bc.GenderTag.MALE, 0.0),
                bc.CandidateStructure(0, bc.GenderTag.FEMALE, 0.0),
            ),
        ),
    ),
    {"cooking": 0},
)

print(f"\n{'male share':>10s} {'E[upper]':>10s} {'E[lower]':>10s} {'in bounds':>10s}")
for male_share in (0.10, 0.25, B_STAR - GAMMA, 0.30, B_STAR + GAMMA, 0.40, 0.60):
    posterior = [bc.InstancePosterior("i0", np.array([male_share, 1.0 - male_share]))]
    expectation = bc.corpus_expectation(corpus, posterior, cs)
    result = bc.check_equivalence(corpus, posterior, cs, 0)
    inside = expectation[0] <= 1e-12 and expectation[1] <= 1e-12
    print(
        f"{male_share:10.3f} {expectation[0]:10.4f} {expectation[1]:10.4f} {str(inside):>10s}"
    )
    assert result.minus_ok and result.plus_ok

print("\nboth expectations <= 0 exactly on [b* - gamma, b* + gamma] =",
      f"[{B_STAR - GAMMA:.2f}, {B_STAR + GAMMA:.2f}]")
