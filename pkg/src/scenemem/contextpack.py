"""Fixed-budget context scheduling for the video generator.

A layout string describes how history enters the context window: an
anchor slot pins the initial frame at full resolution, spatial slots hold
retrieved memory frames, temporal slots compress recent history with
progressively larger spatial subsampling kernels, and a generate slot
holds the target segment. Token arithmetic depends only on the layout and
latent raster size, never on how long the history is - that is the whole
point.

Layout grammar: sections separated by "|", tokens ``f<n>k<m>`` (n frames,
kernel m) or ``g<n>`` (generation target). Sections map positionally:
``generate``; ``temporal | generate``; ``anchor | temporal | generate``;
``anchor | spatial | temporal | generate``. Without separators the
trailing ``g`` token is the generate slot and any preceding ``f`` tokens
are temporal.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

__all__ = [
    "SlotSpec",
    "ContextLayout",
    "PlanSlot",
    "ContextPlan",
    "DEFAULT_LAYOUT",
    "parse_layout",
    "format_layout",
    "latent_frame_count",
    "token_count",
    "assign_temporal",
    "assemble_plan",
]

DEFAULT_LAYOUT = "f1k1 | f4k2 f1k1 | f16k4 f2k2 f1k1 | g20"

_TOKEN_RE = re.compile(r"^(?:f(\d+)k(\d+)|g(\d+))$")


@dataclass(frozen=True)
class SlotSpec:
    """One layout slot: ``n`` frames at spatial subsampling kernel ``m``."""

    kind: str  # anchor | spatial | temporal | generate
    n: int
    m: int = 1

    def __post_init__(self):
        if self.kind not in ("anchor", "spatial", "temporal", "generate"):
            raise ValueError(f"unknown slot kind {self.kind!r}")
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.m < 1 or (self.m & (self.m - 1)) != 0:
            raise ValueError("kernel m must be a power of two")
        if self.kind == "generate" and self.m != 1:
            raise ValueError("generate slots are always full resolution")

    def tokens_per_frame(self, h_lat: int, w_lat: int, p: int) -> int:
        mp = self.m * p
        return -(-h_lat // mp) * -(-w_lat // mp)


@dataclass(frozen=True)
class ContextLayout:
    """Ordered slot groups; at most one anchor, exactly one generate slot."""

    anchor: SlotSpec | None
    spatial: tuple
    temporal: tuple
    generate: SlotSpec

    def __post_init__(self):
        if self.anchor is not None and self.anchor.n != 1:
            raise ValueError("anchor slot holds exactly one frame")
        if self.generate.kind != "generate":
            raise ValueError("final slot must be a generate slot")

    def spatial_capacity(self) -> int:
        return sum(s.n for s in self.spatial)

    def temporal_capacity(self) -> int:
        return sum(s.n for s in self.temporal)

    def slots(self):
        out = []
        if self.anchor is not None:
            out.append(self.anchor)
        out.extend(self.spatial)
        out.extend(self.temporal)
        out.append(self.generate)
        return out


class LayoutParseError(ValueError):
    pass


def _parse_tokens(section: str, kind: str, position: int):
    specs = []
    for tok in section.split():
        m = _TOKEN_RE.match(tok)
        if m is None:
            raise LayoutParseError(f"malformed token {tok!r} in section {position}")
        if m.group(3) is not None:
            raise LayoutParseError(
                f"generate token {tok!r} only allowed in the final section"
            )
        n, k = int(m.group(1)), int(m.group(2))
        if n < 1:
            raise LayoutParseError(f"token {tok!r}: n must be >= 1")
        specs.append(SlotSpec(kind, n, k))
    return specs


def parse_layout(spec: str) -> ContextLayout:
    """Parse a layout string; raises :class:`LayoutParseError` with position."""
    sections = [s.strip() for s in spec.split("|")]
    if any(not s for s in sections):
        raise LayoutParseError("empty layout section")

    # Final section: optional leading f-tokens (treated as temporal when no
    # separators are present) followed by exactly one g-token.
    last = sections[-1].split()
    if not last:
        raise LayoutParseError("missing generate slot")
    gen_tok = last[-1]
    m = _TOKEN_RE.match(gen_tok)
    if m is None or m.group(3) is None:
        raise LayoutParseError(f"layout must end with a generate token, got {gen_tok!r}")
    g_n = int(m.group(3))
    if g_n < 1:
        raise LayoutParseError(f"token {gen_tok!r}: n must be >= 1")
    generate = SlotSpec("generate", g_n, 1)
    trailing_temporal = _parse_tokens(" ".join(last[:-1]), "temporal", len(sections) - 1)

    heads = sections[:-1]
    if len(heads) > 3:
        raise LayoutParseError("too many layout sections (max anchor|spatial|temporal|generate)")
    anchor = None
    spatial: list = []
    temporal: list = []
    if len(heads) == 1:
        temporal = _parse_tokens(heads[0], "temporal", 0)
    elif len(heads) == 2:
        anchor_specs = _parse_tokens(heads[0], "anchor", 0)
        temporal = _parse_tokens(heads[1], "temporal", 1)
        if len(anchor_specs) != 1:
            raise LayoutParseError("anchor section must hold exactly one slot")
        anchor = anchor_specs[0]
    elif len(heads) == 3:
        anchor_specs = _parse_tokens(heads[0], "anchor", 0)
        spatial = _parse_tokens(heads[1], "spatial", 1)
        temporal = _parse_tokens(heads[2], "temporal", 2)
        if len(anchor_specs) != 1:
            raise LayoutParseError("anchor section must hold exactly one slot")
        anchor = anchor_specs[0]
    if trailing_temporal:
        if heads:
            raise LayoutParseError("f-tokens in the final section require a separator-free layout")
        temporal = trailing_temporal
    return ContextLayout(anchor, tuple(spatial), tuple(temporal), generate)


def format_layout(layout: ContextLayout) -> str:
    """Canonical string form; ``parse_layout`` of the result round-trips."""
    sections = []
    if layout.anchor is not None:
        sections.append(f"f{layout.anchor.n}k{layout.anchor.m}")
    if layout.spatial:
        sections.append(" ".join(f"f{s.n}k{s.m}" for s in layout.spatial))
    if layout.temporal:
        sections.append(" ".join(f"f{s.n}k{s.m}" for s in layout.temporal))
    sections.append(f"g{layout.generate.n}")
    return " | ".join(sections)


def latent_frame_count(frames: int) -> int:
    """Latent frames after 4x causal temporal compression: (F-1)//4 + 1."""
    if frames < 1:
        raise ValueError("frame count must be >= 1")
    return (frames - 1) // 4 + 1


def token_count(layout: ContextLayout, h_lat: int, w_lat: int, p: int = 2):
    """Per-slot and total token counts at full occupancy.

    A slot of n frames with kernel m contributes
    ``n * ceil(h_lat/(m*p)) * ceil(w_lat/(m*p))`` tokens for patch factor p.
    Returns (per_slot list aligned with layout.slots(), total).
    """
    if h_lat < 1 or w_lat < 1:
        raise ValueError("latent raster must be at least 1x1")
    per_slot = [s.n * s.tokens_per_frame(h_lat, w_lat, p) for s in layout.slots()]
    return per_slot, sum(per_slot)


def assign_temporal(history_latent_len: int, layout: ContextLayout):
    """Assign recent history latents to the temporal slots.

    ``history_latent_len`` counts all history latents including the anchor
    (latent 0); the temporal pool is latents 1..len-1. Slots fill from the
    most recent latent backwards, finest kernel first, so the last slot in
    layout order always holds the newest latent. Each entry of the result
    is a (start, stop) half-open latent range aligned with
    ``layout.temporal``; partially filled slots shrink, empty slots are
    (start, start).
    """
    if history_latent_len < 1:
        raise ValueError("history must hold at least the anchor latent")
    ranges = [None] * len(layout.temporal)
    hi = history_latent_len  # exclusive upper bound of unassigned pool
    for idx in range(len(layout.temporal) - 1, -1, -1):
        slot = layout.temporal[idx]
        lo = max(1, hi - slot.n)
        lo = min(lo, hi)
        ranges[idx] = (lo, hi)
        hi = lo
    return ranges


@dataclass(frozen=True)
class PlanSlot:
    """One concretely assigned slot of a context plan."""

    kind: str
    n: int
    m: int
    assignment: tuple  # frame ids / latent indices; None entries are padding
    tokens: int


@dataclass(frozen=True)
class ContextPlan:
    """Concrete context-window contents for one generation step."""

    slots: tuple
    total_tokens: int

    def to_json(self) -> dict:
        return {
            "slots": [
                {
                    "kind": s.kind,
                    "n": s.n,
                    "m": s.m,
                    "assignment": list(s.assignment),
                    "tokens": s.tokens,
                }
                for s in self.slots
            ],
            "total_tokens": self.total_tokens,
        }


def assemble_plan(
    history_latents: int,
    retrieved_ids,
    layout: ContextLayout,
    h_lat: int,
    w_lat: int,
    p: int = 2,
) -> ContextPlan:
    """Build the concrete plan for one autoregressive step.

    Spatial slots take the retrieved frames in selection order with the
    first (highest-coverage) pick in the finest-kernel slot; unfilled
    spatial positions stay as padding but keep their tokens, so the budget
    does not depend on how many frames were retrieved. Temporal slots hold
    the most recent history latents; unfilled temporal frames are dropped
    from the plan and its budget. The generate slot covers the next
    ``layout.generate.n`` latent indices.
    """
    retrieved = list(retrieved_ids)
    capacity = layout.spatial_capacity()
    if len(retrieved) > capacity:
        raise ValueError(f"{len(retrieved)} retrieved frames exceed spatial capacity {capacity}")
    if history_latents < 1:
        raise ValueError("history must hold at least the anchor latent")

    slots = []
    if layout.anchor is not None:
        slots.append(
            PlanSlot(
                "anchor",
                layout.anchor.n,
                layout.anchor.m,
                (0,),
                layout.anchor.tokens_per_frame(h_lat, w_lat, p),
            )
        )

    # Finest spatial slot first in fill priority, layout order in output.
    priority = sorted(range(len(layout.spatial)), key=lambda i: (layout.spatial[i].m, i))
    fills: dict[int, list] = {i: [] for i in range(len(layout.spatial))}
    cursor = 0
    for slot_pos in priority:
        spec = layout.spatial[slot_pos]
        take = retrieved[cursor : cursor + spec.n]
        fills[slot_pos] = take + [None] * (spec.n - len(take))
        cursor += len(take)
    for i, spec in enumerate(layout.spatial):
        slots.append(
            PlanSlot(
                "spatial",
                spec.n,
                spec.m,
                tuple(fills[i]),
                spec.n * spec.tokens_per_frame(h_lat, w_lat, p),
            )
        )

    for spec, (lo, hi) in zip(layout.temporal, assign_temporal(history_latents, layout)):
        filled = hi - lo
        slots.append(
            PlanSlot(
                "temporal",
                spec.n,
                spec.m,
                tuple(range(lo, hi)),
                filled * spec.tokens_per_frame(h_lat, w_lat, p),
            )
        )

    gen = layout.generate
    slots.append(
        PlanSlot(
            "generate",
            gen.n,
            gen.m,
            tuple(range(history_latents, history_latents + gen.n)),
            gen.n * gen.tokens_per_frame(h_lat, w_lat, p),
        )
    )
    return ContextPlan(tuple(slots), sum(s.tokens for s in slots))
