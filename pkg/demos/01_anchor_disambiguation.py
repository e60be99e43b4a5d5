"""Walkthrough of anchor-based prompt disambiguation.

Encodes a two-subject prompt with the toy contextual encoder, shows how much
each subject's embedding leaks toward the other subject, and applies the
anchor-direction correction at a few schedule strengths.

Run:  python demos/01_anchor_disambiguation.py
"""

import numpy as np

from compvid import (
    PromptSpec,
    SadState,
    TextEncoder,
    attenuation,
    cosine,
    embed_prompt,
    interpolate,
    pool_span,
)

prompt = PromptSpec.from_text(
    "a brown dog and a gray cat",
    [("brown dog", 1, 3), ("gray cat", 5, 7)],
)
encoder = TextEncoder(seed=7)
emb = embed_prompt(prompt, encoder)

print("prompt:", prompt.text)
print("subjects:", [s.name for s in prompt.subjects])
print()

print("how contextual encoding entangles the subjects")
iso = cosine(emb.pooled_anchors[0], emb.pooled_anchors[1])
ctx = cosine(emb.pooled_prompt[0], emb.pooled_prompt[1])
print(f"  cosine(anchor dog, anchor cat)      = {iso:+.4f}   (isolated encodings)")
print(f"  cosine(context dog, context cat)    = {ctx:+.4f}   (same phrases inside the prompt)")
print(f"  -> cross-token interference inflates similarity by {ctx - iso:+.4f}")
print()

state = SadState.from_pooled(emb.pooled_prompt, emb.pooled_anchors)
print("per-subject correction state (computed once, cached for the whole run)")
for i, span in enumerate(prompt.subjects):
    print(f"  {span.name:10s}  confusion s={state.confusion[i]:.4f}"
          f"  |direction|={np.linalg.norm(state.directions[i]):.3f}")
print()

print("applying the correction at a few points of the strength schedule")
total_steps = 50
for step in (0, 10, 25, 49):
    omega = attenuation(step, total_steps)
    star = interpolate(emb.prompt, emb.spans, state.confusion, state.directions, omega)
    after = cosine(pool_span(star, emb.spans[0]), pool_span(star, emb.spans[1]))
    print(f"  step {step:2d}  omega={omega:.2f}  inter-subject cosine {ctx:+.4f} -> {after:+.4f}")
print()
print("strength decays linearly, so early steps get clean semantics and late")
print("steps recover the original contextual embedding for interactions.")
