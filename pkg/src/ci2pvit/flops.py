"""Analytical FLOPs and parameter counts for the three classifier variants.

Counting convention: one multiply-accumulate is one FLOP. Under it

* a matmul [m, k] x [k, n] costs m*k*n,
* a convolution costs kh*kw*(Cin/groups)*Cout*Hout*Wout,
* an MLP of width C -> Hid -> C over hw tokens costs 2*hw*C*Hid,
* self-attention over hw tokens of width C costs 4*hw*C^2 + 2*(hw)^2*C
  (q/k/v/output projections plus the score and value products).

Bias adds, normalization (LayerNorm, GDN), softmax, activations and
pooling are not counted. Parameter counts are exact and must match the
element count of the model ``vit.build_model`` constructs.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field, replace

from .vit import ModelDesc

GIGA = 1e9


def matmul_flops(m: int, k: int, n: int) -> int:
    return m * k * n


def conv_flops(kh: int, kw: int, cin: int, cout: int, hout: int, wout: int, groups: int = 1) -> int:
    return kh * kw * (cin // groups) * cout * hout * wout


def mlp_flops(hw: int, c: int, hidden: int) -> int:
    return 2 * hw * c * hidden


def msa_flops(hw: int, C: int) -> int:
    """4*hw*C^2 + 2*hw^2*C."""
    if hw < 1 or C < 1:
        raise ValueError("hw and C must be positive")
    return 4 * hw * C * C + 2 * hw * hw * C


@dataclass
class FlopsRow:
    component: str
    flops: int
    params: int


@dataclass
class FlopsReport:
    variant: str
    image_size: int
    rows: list[FlopsRow] = field(default_factory=list)

    def add(self, component: str, flops: int, params: int) -> None:
        self.rows.append(FlopsRow(component, int(flops), int(params)))

    @property
    def total_flops(self) -> int:
        return sum(r.flops for r in self.rows)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    def row(self, component: str) -> FlopsRow:
        for r in self.rows:
            if r.component == component:
                return r
        raise KeyError(component)

    def reduction_vs(self, baseline: "FlopsReport") -> float:
        """1 - total / baseline_total."""
        return 1.0 - self.total_flops / baseline.total_flops


# -- component costs --------------------------------------------------------

def _block_rows(report: FlopsReport, prefix: str, count: int, hw: int, dim: int, hidden: int) -> None:
    msa_params = (dim * 3 * dim + 3 * dim) + (dim * dim + dim) + 2 * dim
    mlp_params = (dim * hidden + hidden) + (hidden * dim + dim) + 2 * dim
    report.add(f"{prefix}.msa", count * msa_flops(hw, dim), count * msa_params)
    report.add(f"{prefix}.mlp", count * mlp_flops(hw, dim, hidden), count * mlp_params)


def codec_encoder_cost(image_size: int, N: int, M: int) -> tuple[int, int]:
    """Four 5x5 stride-2 convs plus three GDN layers (GDN FLOPs excluded)."""
    chans = [3, N, N, N, M]
    flops = params = 0
    s = image_size
    for i in range(4):
        s //= 2
        flops += conv_flops(5, 5, chans[i], chans[i + 1], s, s)
        params += 25 * chans[i] * chans[i + 1] + chans[i + 1]
        if i < 3:
            params += chans[i + 1] * chans[i + 1] + chans[i + 1]
    return flops, params


def inverted_residual_cost(cin: int, cout: int, in_size: int, expansion: int = 4,
                           stride: int = 2) -> tuple[int, int]:
    hidden = cin * expansion
    out_size = (in_size + 2 - 3) // stride + 1
    flops = (conv_flops(1, 1, cin, hidden, in_size, in_size)
             + conv_flops(3, 3, hidden, hidden, out_size, out_size, groups=hidden)
             + conv_flops(1, 1, hidden, cout, out_size, out_size))
    params = (cin * hidden + hidden) + (9 * hidden + hidden) + (hidden * cout + cout)
    return flops, params


def model_flops(desc: ModelDesc, image_size: int | None = None) -> FlopsReport:
    """Per-component breakdown for ``desc`` evaluated at ``image_size`` (default ``desc.image_size``)."""
    s = image_size or desc.image_size
    desc = replace(desc, image_size=s).validate()
    rep = FlopsReport(desc.variant, s)
    counts = desc.token_counts()
    if desc.variant == "vit_b16":
        p = desc.patch_size
        rep.add("patch_embed", conv_flops(p, p, 3, desc.dim, s // p, s // p), 3 * p * p * desc.dim + desc.dim)
    else:
        rep.add("codec_encoder", *codec_encoder_cost(s, desc.codec_hidden, desc.codec_latent))
    if desc.variant == "ci2p_vit":
        rep.add("patch_reshape", *inverted_residual_cost(desc.codec_latent, desc.dim, s // 16, desc.expansion))
    if desc.variant == "ci2p_vit_ds":
        if desc.use_pos_embed:
            rep.add("pos_embed", 0, counts[0] * desc.ds_early_dim + counts[1] * desc.dim)
        _block_rows(rep, "stage1", desc.ds_split, counts[0], desc.ds_early_dim, desc.ds_early_mlp)
        rep.add("cnn_reshape", *inverted_residual_cost(desc.ds_early_dim, desc.dim, s // 16, desc.expansion))
        _block_rows(rep, "stage2", desc.depth - desc.ds_split, counts[1], desc.dim, desc.mlp_hidden)
    else:
        if desc.use_pos_embed:
            rep.add("pos_embed", 0, counts[0] * desc.dim)
        _block_rows(rep, "blocks", desc.depth, counts[0], desc.dim, desc.mlp_hidden)
    rep.add("norm", 0, 2 * desc.dim)
    rep.add("head", matmul_flops(1, desc.dim, desc.num_classes), desc.dim * desc.num_classes + desc.num_classes)
    return rep


def model_params(desc: ModelDesc) -> int:
    return model_flops(desc).total_params


def attention_flops(report: FlopsReport) -> int:
    return sum(r.flops for r in report.rows if r.component.endswith(".msa"))


# -- reports ----------------------------------------------------------------

def reference_descs(num_classes: int = 1000) -> dict[str, ModelDesc]:
    """Full-size descriptions of the three variants (ViT-B/16 widths)."""
    return {v: ModelDesc(variant=v, num_classes=num_classes) for v in ("vit_b16", "ci2p_vit", "ci2p_vit_ds")}


def reduction_rows(image_sizes, num_classes: int = 1000) -> list[dict]:
    """Totals per variant and size, with percentage reductions against vit_b16."""
    descs = reference_descs(num_classes)
    out = []
    for s in image_sizes:
        reps = {v: model_flops(d, s) for v, d in descs.items()}
        base = reps["vit_b16"]
        row = {"image_size": s}
        for v, r in reps.items():
            row[f"{v}_gflops"] = r.total_flops / GIGA
            row[f"{v}_params"] = r.total_params
            if v != "vit_b16":
                row[f"{v}_reduction_pct"] = 100.0 * r.reduction_vs(base)
        out.append(row)
    return out


def reduction_table(image_sizes, fmt: str = "table", num_classes: int = 1000) -> str:
    rows = reduction_rows(image_sizes, num_classes)
    if fmt == "csv":
        buf = io.StringIO()
        cols = ["image_size", "vit_b16_gflops", "ci2p_vit_gflops", "ci2p_vit_reduction_pct",
                "ci2p_vit_ds_gflops", "ci2p_vit_ds_reduction_pct"]
        buf.write(",".join(cols) + "\n")
        for r in rows:
            buf.write(",".join(f"{r[c]:.4f}" if isinstance(r[c], float) else str(r[c]) for c in cols) + "\n")
        return buf.getvalue()
    if fmt != "table":
        raise ValueError(f"unknown format '{fmt}'")
    lines = [f"{'size':>6} | {'ViT-B/16':>10} | {'CI2P-ViT':>20} | {'CI2P-ViT-ds':>20}",
             "-" * 66]
    for r in rows:
        s = r["image_size"]
        lines.append(
            f"{s:>4}^2 | {r['vit_b16_gflops']:>8.3f} G | "
            f"{r['ci2p_vit_gflops']:>7.3f} G ({r['ci2p_vit_reduction_pct']:5.2f}%↓) | "
            f"{r['ci2p_vit_ds_gflops']:>7.3f} G ({r['ci2p_vit_ds_reduction_pct']:5.2f}%↓)")
    return "\n".join(lines) + "\n"


def breakdown_csv(reports: list[FlopsReport]) -> str:
    """CSV with columns variant,image_size,component,flops,params (plus a total row per report)."""
    buf = io.StringIO()
    buf.write("variant,image_size,component,flops,params\n")
    for rep in reports:
        for r in rep.rows:
            buf.write(f"{rep.variant},{rep.image_size},{r.component},{r.flops},{r.params}\n")
        buf.write(f"{rep.variant},{rep.image_size},total,{rep.total_flops},{rep.total_params}\n")
    return buf.getvalue()
