"""
Learning soft-rule weights from labeled worlds
==============================================

Three soft rules propose conflicting associations. Hidden weights decide
which world is correct at each tick; the perceptron recovers weights that
reproduce every labeled world.
"""
import numpy as np

from streamfusion import Hypothesis, Iri, RuleWeights, TimestampedFact, select_world
from streamfusion.learner import LabeledTick, dump_samples, train

rng = np.random.default_rng(0)
SAMPLE_OF = Iri("http://www.w3.org/ns/sosa/isSampleOf")
rules = [Iri(f"http://example.org/ssr/rule_w_{i}") for i in (1, 2, 3)]
hidden = RuleWeights({r: w for r, w in zip(rules, (1.6, 0.4, 0.9))})


def ex(local):
    return Iri("http://example.org/stream#" + local)


# random association hypotheses, labeled by the world the hidden weights pick
samples = []
for t in range(30):
    hyps = []
    for d in range(3):
        for o in range(3):
            for r in rules:
                if rng.random() < 0.35:
                    b, obj = ex(f"b{t}_{d}"), ex(f"o{o}")
                    hyps.append(Hypothesis(r, TimestampedFact(b, SAMPLE_OF, obj, t), b, obj, rng.uniform(0.5, 1), t))
    samples.append(LabeledTick(t, tuple(hyps), frozenset(select_world(hyps, hidden).chosen_facts)))

print(dump_samples(samples[:1]))

# train from uniform weights
report = train(samples, lr=0.1, max_epochs=50)
print(report.summary())

# only ratios matter: compare the normalized weight vectors
learned = np.array([report.weights[r] for r in rules])
truth = np.array([hidden[r] for r in rules])
print("learned", learned / learned.sum())
print("hidden ", truth / truth.sum())

# the learned weights reproduce every labeled world
agree = sum(set(select_world(s.hypotheses, report.weights).chosen_facts) == s.gold for s in samples)
print(f"{agree}/{len(samples)} ticks reproduced")
