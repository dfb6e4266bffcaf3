"""Token-budget scheduling: long histories in a fixed context window.

The layout string assigns frames to anchor / spatial / temporal /
generate slots, each compressing with its own kernel. Total tokens depend
on the layout and latent raster alone, never on how much history exists.
"""

from scenemem.contextpack import (
    DEFAULT_LAYOUT,
    assemble_plan,
    latent_frame_count,
    parse_layout,
    token_count,
)

layout = parse_layout(DEFAULT_LAYOUT)
print(f"Layout: {DEFAULT_LAYOUT}")
print(f"  spatial capacity: {layout.spatial_capacity()} retrieved frames")
print(f"  temporal capacity: {layout.temporal_capacity()} recent latents + anchor")

H_LAT, W_LAT, PATCH = 60, 104, 2  # 832x480 through an 8x VAE, patchify 2
per_slot, total = token_count(layout, H_LAT, W_LAT, PATCH)
print(f"\nPer-slot tokens at {W_LAT}x{H_LAT} latents, patch {PATCH}:")
for spec, tokens in zip(layout.slots(), per_slot):
    print(f"  {spec.kind:9s} f{spec.n}k{spec.m}: {tokens}")
print(f"  total: {total}")

print("\nVideo frames -> latent frames (4x causal temporal compression):")
for frames in (1, 5, 80, 81, 321):
    print(f"  F={frames:4d} -> F'={latent_frame_count(frames)}")

print("\nBudget is history-independent:")
for history in (21, 101, 501, 2001):
    plan = assemble_plan(history, [7, 3, 9, 1, 5], layout, H_LAT, W_LAT, PATCH)
    print(f"  history={history:5d} latents -> total tokens {plan.total_tokens}")

print("\nConcrete plan for a short history (3 latents, 2 retrieved frames):")
plan = assemble_plan(3, [4, 2], layout, H_LAT, W_LAT, PATCH)
for slot in plan.slots:
    print(f"  {slot.kind:9s} f{slot.n}k{slot.m} -> {list(slot.assignment)} ({slot.tokens} tokens)")
print(f"  total: {plan.total_tokens} (under-filled temporal slots drop their tokens)")
