"""Decoder parameter counts against the published per-depth table."""
from __future__ import annotations

from dataclasses import dataclass

from ..model import DEEP_AE, LIGHT_AE, PTV3, DecoderSpec, decoder_param_count

# millions of decoder parameters, (single-head, two-head) for depths 1..5
PUBLISHED_COUNTS = {
    LIGHT_AE: [(0.79, 0.79), (1.61, 1.65), (3.31, 3.48), (6.99, 7.68), (8.04, 9.78)],
    DEEP_AE: [(6.30, 6.30), (3.67, 4.20), (7.35, 8.40), (8.40, 10.50), (9.45, 12.60)],
    PTV3: [(3.15, 3.15), (1.71, 1.84), (3.41, 3.68), (7.09, 7.87), (8.14, 9.97)],
}
TOLERANCE_HUNDREDTHS = 1  # +-0.01 M after rounding to two decimals


@dataclass
class AuditRow:
    backbone: str
    depth: int
    heads: int
    layer_dims: tuple
    params: int
    millions: float
    published: float | None
    ok: bool


def audit_params(output_points=2048, head_counts=(1, 2)):
    """One row per (backbone, depth, heads); counts come from layer shapes only."""
    rows = []
    for backbone in (LIGHT_AE, DEEP_AE, PTV3):
        for depth in range(1, 6):
            for heads in head_counts:
                dec = DecoderSpec(backbone, depth, heads, output_points)
                n = decoder_param_count(dec)
                hundredths = round(n / 1e4)
                published = None
                ok = True
                if output_points == 2048 and heads in (1, 2):
                    published = PUBLISHED_COUNTS[backbone][depth - 1][heads - 1]
                    ok = abs(hundredths - round(published * 100)) <= TOLERANCE_HUNDREDTHS
                rows.append(AuditRow(backbone, depth, heads, dec.layer_dims, n,
                                     hundredths / 100, published, ok))
    return rows


def render_audit(rows):
    lines = [f"{'backbone':<8} {'depth':>5} {'heads':>5} {'params':>10} {'M':>6} "
             f"{'table':>6}  status  layers"]
    for r in rows:
        pub = "" if r.published is None else f"{r.published:.2f}"
        dims = " -> ".join(map(str, r.layer_dims))
        lines.append(f"{r.backbone:<8} {r.depth:>5} {r.heads:>5} {r.params:>10} "
                     f"{r.millions:>6.2f} {pub:>6}  {'ok' if r.ok else 'MISMATCH':<6}  {dims}")
    return "\n".join(lines)


def audit_csv(rows):
    out = ["backbone,depth,heads,params,millions,published,ok"]
    for r in rows:
        pub = "" if r.published is None else f"{r.published:.2f}"
        out.append(f"{r.backbone},{r.depth},{r.heads},{r.params},{r.millions:.2f},{pub},{r.ok}")
    return "\n".join(out) + "\n"
