"""End-to-end masked-modeling network: sparse hierarchical encoder, per-scale
densify/project, light UNet-style decoder, and the reconstruction loss.

The encoder gathers only visible content and keeps each scale's active set
equal to the mask's footprint at that stride. Before decoding, every scale is
densified with its own learnable mask-fill embedding and width-matched by a
1x1 projection; decoder stages add those skip inputs, upsample by 2, and run
two 3x3 conv + batch-norm blocks with ReLU6 between. The loss is an L2 on
per-patch-normalized pixels, restricted to masked positions by default.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import BatchNormState, DiffTensor
from .masking import (
    PatchMask,
    active_set_at_scale,
    masked_pixel_map,
    per_patch_normalize,
    visible_pixel_map,
)
from .sparse import (
    SparseTensor2D,
    build_downsample_rulebook,
    build_rulebook,
    densify,
    dense_conv_macs,
    gather_from_dense,
    sparse_batchnorm,
    sparse_downsample,
    sparse_flops,
    subm_conv2d,
)

__all__ = [
    "EncoderConfig",
    "LightDecoderConfig",
    "SparkConfig",
    "SparkModel",
    "DenseEncoder",
    "encoder_forward",
    "project_and_densify",
    "decoder_forward",
    "spark_forward",
    "spark_loss",
    "to_dense_encoder",
    "add_ape",
    "encoder_flops_table",
]


@dataclass
class EncoderConfig:
    """Hierarchical encoder geometry; stage i runs at stride stem_stride * 2**i."""

    stages: int = 4
    widths: tuple = (64, 128, 256, 512)
    blocks_per_stage: int = 1
    stem_stride: int = 4
    stage_stride: int = 2
    down_kernel: int = 2  # 2 (stride 2, pad 0) or 3 (stride 2, pad 1)

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if self.stages < 1:
            raise ValueError("EncoderConfig: need at least one stage")
        if len(self.widths) != self.stages:
            raise ValueError(
                f"EncoderConfig: {len(self.widths)} widths for {self.stages} stages"
            )
        if self.stage_stride != 2:
            raise ValueError("EncoderConfig: stage stride must be 2")
        if self.down_kernel not in (2, 3):
            raise ValueError("EncoderConfig: down_kernel must be 2 or 3")

    @property
    def total_stride(self) -> int:
        return self.stem_stride * self.stage_stride ** (self.stages - 1)

    def stride_at(self, stage: int) -> int:
        return self.stem_stride * self.stage_stride ** stage


@dataclass
class LightDecoderConfig:
    """Decoder width schedule: channels halve every x2 upsampling stage."""

    fea_dim: int = 768
    upsample_ratio: int = 32

    def __post_init__(self):
        n = round(math.log2(self.upsample_ratio))
        if 2 ** n != self.upsample_ratio:
            raise ValueError(f"LightDecoderConfig: upsample ratio {self.upsample_ratio} is not a power of two")
        if self.fea_dim // 2 ** n < 1:
            raise ValueError(f"LightDecoderConfig: fea_dim {self.fea_dim} too small for ratio {self.upsample_ratio}")

    @property
    def n_stages(self) -> int:
        return round(math.log2(self.upsample_ratio))

    @property
    def channels(self) -> list[int]:
        return [self.fea_dim // 2 ** i for i in range(self.n_stages + 1)]


@dataclass
class SparkConfig:
    """Full model configuration, including the ablation switches."""

    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    image_size: int = 224
    patch_size: int = 32
    dec_fea_dim: int | None = None  # default: deepest encoder width
    masking: str = "sparse"  # "sparse" | "zero_out"
    hierarchy: bool = True
    ape: bool = False
    loss_on: str = "masked"  # "masked" | "all"

    def __post_init__(self):
        if self.patch_size % self.encoder.total_stride != 0:
            raise ValueError(
                f"SparkConfig: patch size {self.patch_size} not divisible by "
                f"encoder total stride {self.encoder.total_stride}"
            )
        if self.image_size % self.patch_size != 0:
            raise ValueError(
                f"SparkConfig: image size {self.image_size} not divisible by patch size {self.patch_size}"
            )
        if self.masking not in ("sparse", "zero_out"):
            raise ValueError(f"SparkConfig: unknown masking mode {self.masking!r}")
        if self.loss_on not in ("masked", "all"):
            raise ValueError(f"SparkConfig: unknown loss_on {self.loss_on!r}")

    @property
    def decoder(self) -> LightDecoderConfig:
        fea = self.dec_fea_dim if self.dec_fea_dim is not None else self.encoder.widths[-1]
        return LightDecoderConfig(fea, self.encoder.total_stride)

    def to_dict(self) -> dict:
        return {
            "encoder": {
                "stages": self.encoder.stages,
                "widths": list(self.encoder.widths),
                "blocks_per_stage": self.encoder.blocks_per_stage,
                "stem_stride": self.encoder.stem_stride,
                "stage_stride": self.encoder.stage_stride,
                "down_kernel": self.encoder.down_kernel,
            },
            "image_size": self.image_size,
            "patch_size": self.patch_size,
            "dec_fea_dim": self.dec_fea_dim,
            "masking": self.masking,
            "hierarchy": self.hierarchy,
            "ape": self.ape,
            "loss_on": self.loss_on,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SparkConfig":
        enc = EncoderConfig(**{**d["encoder"], "widths": tuple(d["encoder"]["widths"])})
        return cls(
            encoder=enc,
            image_size=d["image_size"],
            patch_size=d["patch_size"],
            dec_fea_dim=d.get("dec_fea_dim"),
            masking=d.get("masking", "sparse"),
            hierarchy=d.get("hierarchy", True),
            ape=d.get("ape", False),
            loss_on=d.get("loss_on", "masked"),
        )


class SparkModel:
    """Parameter store plus the wiring between encoder, embeddings, and decoder.

    Parameters live in an insertion-ordered name -> DiffTensor map (the
    checkpoint manifest order); batch-norm running stats live alongside in
    ``bn_states``. Names under ``decay`` receive weight decay (conv and
    projection weights only).
    """

    def __init__(self, cfg: SparkConfig, rng=None):
        if rng is None:
            rng = np.random.default_rng(0)
        elif isinstance(rng, int):
            rng = np.random.default_rng(rng)
        self.cfg = cfg
        self.params: "OrderedDict[str, DiffTensor]" = OrderedDict()
        self.bn_states: "OrderedDict[str, BatchNormState]" = OrderedDict()
        self.decay: set[str] = set()
        self._build(rng)

    # -- construction -------------------------------------------------------

    def _conv_param(self, name, cout, cin, kh, kw, rng):
        std = math.sqrt(2.0 / (cin * kh * kw))
        t = DiffTensor(rng.normal(0.0, std, size=(cout, cin, kh, kw)), requires_grad=True)
        self.params[name] = t
        self.decay.add(name)
        return t

    def _vec_param(self, name, values, decay=False):
        t = DiffTensor(values, requires_grad=True)
        self.params[name] = t
        if decay:
            self.decay.add(name)
        return t

    def _bn_param(self, prefix, channels):
        self._vec_param(f"{prefix}.gamma", np.ones(channels))
        self._vec_param(f"{prefix}.beta", np.zeros(channels))
        self.bn_states[prefix] = BatchNormState(channels)

    def _build(self, rng):
        cfg = self.cfg
        enc = cfg.encoder
        w0 = enc.widths[0]
        self._conv_param("encoder.stem.w", w0, 3, enc.stem_stride, enc.stem_stride, rng)
        self._bn_param("encoder.stem.bn", w0)
        if cfg.ape:
            h4 = cfg.image_size // enc.stem_stride
            self._vec_param("ape", np.zeros((1, w0, h4, h4)))

        for i in range(enc.stages):
            wi = enc.widths[i]
            if i > 0:
                k = enc.down_kernel
                self._conv_param(f"encoder.stage{i}.down.w", wi, enc.widths[i - 1], k, k, rng)
                self._bn_param(f"encoder.stage{i}.down.bn", wi)
            for j in range(enc.blocks_per_stage):
                pre = f"encoder.stage{i}.block{j}"
                self._conv_param(f"{pre}.conv0.w", wi, wi, 3, 3, rng)
                self._bn_param(f"{pre}.bn0", wi)
                self._conv_param(f"{pre}.conv1.w", wi, wi, 3, 3, rng)
                self._bn_param(f"{pre}.bn1", wi)

        chans = cfg.decoder.channels
        for i in range(enc.stages):
            # mask-fill embedding and width-matching projection for scale i
            self._vec_param(f"embed.scale{i}", rng.normal(0.0, 0.02, size=enc.widths[i]))
            dec_w = chans[enc.stages - 1 - i]
            self._conv_param(f"proj.scale{i}.w", dec_w, enc.widths[i], 1, 1, rng)
            self._vec_param(f"proj.scale{i}.b", np.zeros(dec_w))

        for k in range(cfg.decoder.n_stages):
            cin, cout = chans[k], chans[k + 1]
            pre = f"decoder.stage{k}"
            std = math.sqrt(2.0 / (cin * 16))
            up = DiffTensor(rng.normal(0.0, std, size=(cin, cin, 4, 4)), requires_grad=True)
            self.params[f"{pre}.up.w"] = up
            self.decay.add(f"{pre}.up.w")
            self._vec_param(f"{pre}.up.b", np.zeros(cin))
            self._conv_param(f"{pre}.conv0.w", cin, cin, 3, 3, rng)
            self._bn_param(f"{pre}.bn0", cin)
            self._conv_param(f"{pre}.conv1.w", cout, cin, 3, 3, rng)
            self._bn_param(f"{pre}.bn1", cout)
        self._conv_param("decoder.proj.w", 3, chans[-1], 1, 1, rng)
        self._vec_param("decoder.proj.b", np.zeros(3))

    # -- access --------------------------------------------------------------

    def param(self, name: str) -> DiffTensor:
        return self.params[name]

    def bn(self, name: str) -> BatchNormState:
        return self.bn_states[name]

    def named_parameters(self):
        return self.params.items()

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def state_arrays(self) -> "OrderedDict[str, np.ndarray]":
        """All persistent arrays (parameters + BN running stats) in manifest order."""
        out = OrderedDict()
        for name, p in self.params.items():
            out[name] = p.data
        for name, st in self.bn_states.items():
            out[f"{name}.running_mean"] = st.running_mean
            out[f"{name}.running_var"] = st.running_var
        return out

    def load_state_arrays(self, arrays: dict):
        for name, p in self.params.items():
            arr = arrays[name]
            if tuple(arr.shape) != tuple(p.shape):
                raise ValueError(f"load_state_arrays: shape mismatch for {name}")
            p.data = np.ascontiguousarray(arr, dtype=np.float64)
        for name, st in self.bn_states.items():
            st.running_mean = np.asarray(arrays[f"{name}.running_mean"], dtype=np.float64).copy()
            st.running_var = np.asarray(arrays[f"{name}.running_var"], dtype=np.float64).copy()


# ---------------------------------------------------------------------------
# encoder
# ---------------------------------------------------------------------------


def _sp_relu(sp: SparseTensor2D) -> SparseTensor2D:
    return SparseTensor2D(sp.height, sp.width, sp.coords, ag.relu(sp.features), validate=False)


def _sp_add(a: SparseTensor2D, b: SparseTensor2D) -> SparseTensor2D:
    return SparseTensor2D(a.height, a.width, a.coords, ag.add(a.features, b.features), validate=False)


def add_ape(model: SparkModel, sp: SparseTensor2D) -> SparseTensor2D:
    """Add the learnable per-position embedding at the active stem sites."""
    ape = model.param("ape")
    rows = gather_from_dense(ape, sp.coords, batch_index=0)
    return _sp_add(sp, rows)


def _normalize_masks(masks, n: int):
    if isinstance(masks, PatchMask):
        return [masks] * n
    masks = list(masks)
    if len(masks) != n:
        raise ValueError(f"expected {n} masks for batch of {n}, got {len(masks)}")
    return masks


def encoder_forward(model: SparkModel, images, masks, mode: str = "train"):
    """Sparse hierarchical encoding of a batch.

    Returns one list per stage (shallow to deep), each holding one
    SparseTensor2D per batch sample. Stage i has resolution
    image/(stem_stride * 2**i) and its active set is exactly the mask's
    footprint at that stride.
    """
    cfg = model.cfg
    enc = cfg.encoder
    images = images if isinstance(images, DiffTensor) else DiffTensor(images)
    n, c, h, w = images.shape
    if h % enc.total_stride or w % enc.total_stride:
        raise ValueError(f"encoder_forward: image {h}x{w} not divisible by total stride {enc.total_stride}")
    if h % cfg.patch_size or w % cfg.patch_size:
        raise ValueError(f"encoder_forward: image {h}x{w} not divisible by patch size {cfg.patch_size}")
    masks = _normalize_masks(masks, n)
    for m in masks:
        if m.image_hw != (h, w):
            raise ValueError(f"encoder_forward: mask geometry {m.image_hw} != image {(h, w)}")
        if m.visible_count == 0:
            raise ValueError("encoder_forward: mask leaves no visible patch")

    active = [[active_set_at_scale(m, enc.stride_at(i)) for i in range(enc.stages)] for m in masks]

    # stem: dense strided conv, then gather the visible sites. Patch edges are
    # multiples of the stem stride, so every gathered site's window lies
    # entirely inside a visible patch and masked pixels never contribute.
    stem = ag.conv2d(images, model.param("encoder.stem.w"), stride=enc.stem_stride, padding=0)
    sps = [gather_from_dense(stem, active[b][0], batch_index=b) for b in range(n)]
    if cfg.ape:
        sps = [add_ape(model, sp) for sp in sps]
    sps = sparse_batchnorm(sps, model.param("encoder.stem.bn.gamma"), model.param("encoder.stem.bn.beta"),
                           model.bn("encoder.stem.bn"), mode=mode)
    sps = [_sp_relu(sp) for sp in sps]

    stage_outputs = []
    for i in range(enc.stages):
        if i > 0:
            k = enc.down_kernel
            pad = 1 if k == 3 else 0
            dw = model.param(f"encoder.stage{i}.down.w")
            sps = [sparse_downsample(sp, active[b][i], dw, stride=2, padding=pad) for b, sp in enumerate(sps)]
            sps = sparse_batchnorm(sps, model.param(f"encoder.stage{i}.down.bn.gamma"),
                                   model.param(f"encoder.stage{i}.down.bn.beta"),
                                   model.bn(f"encoder.stage{i}.down.bn"), mode=mode)
            sps = [_sp_relu(sp) for sp in sps]
        rbs = [build_rulebook(sp.coords, 3, height=sp.height, width=sp.width) for sp in sps]
        for j in range(enc.blocks_per_stage):
            pre = f"encoder.stage{i}.block{j}"
            hidden = [subm_conv2d(sp, model.param(f"{pre}.conv0.w"), None, rb) for sp, rb in zip(sps, rbs)]
            hidden = sparse_batchnorm(hidden, model.param(f"{pre}.bn0.gamma"), model.param(f"{pre}.bn0.beta"),
                                      model.bn(f"{pre}.bn0"), mode=mode)
            hidden = [_sp_relu(sp) for sp in hidden]
            hidden = [subm_conv2d(sp, model.param(f"{pre}.conv1.w"), None, rb) for sp, rb in zip(hidden, rbs)]
            hidden = sparse_batchnorm(hidden, model.param(f"{pre}.bn1.gamma"), model.param(f"{pre}.bn1.beta"),
                                      model.bn(f"{pre}.bn1"), mode=mode)
            hidden = [_sp_relu(sp) for sp in hidden]
            sps = [_sp_add(hh, sp) for hh, sp in zip(hidden, sps)]  # identity residual
        stage_outputs.append(sps)
    return stage_outputs


class DenseEncoder:
    """The same encoder weights applied as ordinary dense convolutions.

    Valid on any input whose dims are divisible by the total stride (no mask
    or patch constraint); on fully visible inputs it reproduces the sparse
    encoder's features.
    """

    def __init__(self, enc_cfg: EncoderConfig, params: dict, bn_states: dict, ape: DiffTensor | None = None):
        self.cfg = enc_cfg
        self.params = params
        self.bn_states = bn_states
        self.ape = ape

    def forward(self, images, mode: str = "eval"):
        enc = self.cfg
        images = images if isinstance(images, DiffTensor) else DiffTensor(images)
        h, w = images.shape[2], images.shape[3]
        if h % enc.total_stride or w % enc.total_stride:
            raise ValueError(f"DenseEncoder: image {h}x{w} not divisible by total stride {enc.total_stride}")

        def bn(x, prefix):
            return ag.batchnorm2d(x, self.params[f"{prefix}.gamma"], self.params[f"{prefix}.beta"],
                                  self.bn_states[prefix], mode=mode)

        x = ag.conv2d(images, self.params["encoder.stem.w"], stride=enc.stem_stride, padding=0)
        if self.ape is not None:
            if self.ape.shape[2:] != x.shape[2:]:
                raise ValueError("DenseEncoder: positional embedding size does not match input")
            x = ag.add_broadcast(x, self.ape)
        x = ag.relu(bn(x, "encoder.stem.bn"))

        stages = []
        for i in range(enc.stages):
            if i > 0:
                k = enc.down_kernel
                pad = 1 if k == 3 else 0
                x = ag.conv2d(x, self.params[f"encoder.stage{i}.down.w"], stride=2, padding=pad)
                x = ag.relu(bn(x, f"encoder.stage{i}.down.bn"))
            for j in range(enc.blocks_per_stage):
                pre = f"encoder.stage{i}.block{j}"
                hdn = ag.conv2d(x, self.params[f"{pre}.conv0.w"], stride=1, padding=1)
                hdn = ag.relu(bn(hdn, f"{pre}.bn0"))
                hdn = ag.conv2d(hdn, self.params[f"{pre}.conv1.w"], stride=1, padding=1)
                hdn = ag.relu(bn(hdn, f"{pre}.bn1"))
                x = ag.add(hdn, x)
            stages.append(x)
        return stages

    def state_arrays(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict()
        for name, p in self.params.items():
            out[name] = p.data
        if self.ape is not None:
            out["ape"] = self.ape.data
        for name, st in self.bn_states.items():
            out[f"{name}.running_mean"] = st.running_mean
            out[f"{name}.running_var"] = st.running_var
        return out


def to_dense_encoder(model: SparkModel) -> DenseEncoder:
    """Reinterpret the sparse encoder weights as a dense encoder (shared tensors)."""
    params = {k: v for k, v in model.params.items() if k.startswith("encoder.")}
    bns = {k: v for k, v in model.bn_states.items() if k.startswith("encoder.")}
    ape = model.params.get("ape") if model.cfg.ape else None
    return DenseEncoder(model.cfg.encoder, params, bns, ape)


# ---------------------------------------------------------------------------
# densify + project, decoder, loss
# ---------------------------------------------------------------------------


def project_and_densify(model: SparkModel, scale: int, sparse_list) -> DiffTensor:
    """Fill scale ``scale``'s inactive sites with its embedding, then 1x1-project.

    Accepts the per-sample list produced by ``encoder_forward``; returns a
    dense [N, dec_width, h, w] tensor ready to enter the decoder.
    """
    fill = model.param(f"embed.scale{scale}")
    dense = ag.concat0([densify(sp, fill) for sp in sparse_list])
    return ag.conv2d(dense, model.param(f"proj.scale{scale}.w"), model.param(f"proj.scale{scale}.b"))


def _project_dense(model: SparkModel, scale: int, x: DiffTensor) -> DiffTensor:
    return ag.conv2d(x, model.param(f"proj.scale{scale}.w"), model.param(f"proj.scale{scale}.b"))


def decoder_forward(model: SparkModel, to_dec, mode: str = "train") -> DiffTensor:
    """Run the decoder over skip inputs ordered deepest first.

    ``to_dec[k]`` (optional except k=0) is added before stage k; each stage
    upsamples x2 with a transposed conv and applies two 3x3 conv + BN layers
    with ReLU6 between; a final 1x1 conv maps to 3 channels.
    """
    cfg = model.cfg.decoder
    chans = cfg.channels
    n_stages = cfg.n_stages
    if len(to_dec) > n_stages:
        raise ValueError(f"decoder_forward: {len(to_dec)} skip inputs for {n_stages} stages")
    if not to_dec or to_dec[0] is None:
        raise ValueError("decoder_forward: the deepest input to_dec[0] is required")

    def bn(x, prefix):
        return ag.batchnorm2d(x, model.param(f"{prefix}.gamma"), model.param(f"{prefix}.beta"),
                              model.bn(prefix), mode=mode)

    x = None
    for k in range(n_stages):
        skip = to_dec[k] if k < len(to_dec) else None
        if skip is not None:
            if skip.shape[1] != chans[k]:
                raise ValueError(
                    f"decoder_forward: skip {k} has {skip.shape[1]} channels, expected {chans[k]}"
                )
            if x is not None and skip.shape != x.shape:
                raise ValueError(
                    f"decoder_forward: skip {k} shape {tuple(skip.shape)} != running shape {tuple(x.shape)}"
                )
            x = skip if x is None else ag.add(x, skip)
        pre = f"decoder.stage{k}"
        x = ag.conv_transpose2d(x, model.param(f"{pre}.up.w"), model.param(f"{pre}.up.b"), stride=2, padding=1)
        x = ag.relu6(bn(ag.conv2d(x, model.param(f"{pre}.conv0.w"), stride=1, padding=1), f"{pre}.bn0"))
        x = bn(ag.conv2d(x, model.param(f"{pre}.conv1.w"), stride=1, padding=1), f"{pre}.bn1")
    return ag.conv2d(x, model.param("decoder.proj.w"), model.param("decoder.proj.b"))


def spark_forward(model: SparkModel, images, masks, mode: str = "train"):
    """Full forward pass: returns (reconstruction, targets, masked pixel maps).

    Skip inputs are assembled deepest first; the hierarchy flag drops all but
    the deepest scale, and the zero-out flag replaces sparse gathering with a
    dense encoder over the zero-filled image.
    """
    cfg = model.cfg
    images = images if isinstance(images, DiffTensor) else DiffTensor(images)
    n = images.shape[0]
    masks = _normalize_masks(masks, n)
    targets = per_patch_normalize(images, cfg.patch_size)
    masked_maps = np.stack([masked_pixel_map(m) for m in masks])

    n_dec = cfg.decoder.n_stages
    stages = cfg.encoder.stages
    to_dec: list = [None] * n_dec
    if cfg.masking == "sparse":
        feats = encoder_forward(model, images, masks, mode=mode)
        for k in range(stages):
            scale = stages - 1 - k
            if k > 0 and not cfg.hierarchy:
                continue
            to_dec[k] = project_and_densify(model, scale, feats[scale])
    else:
        keep = np.stack([visible_pixel_map(m) for m in masks])[:, None, :, :].astype(np.float64)
        zeroed = ag.mul(images, DiffTensor(np.ascontiguousarray(np.broadcast_to(keep, images.shape))))
        dense_feats = to_dense_encoder(model).forward(zeroed, mode=mode)
        for k in range(stages):
            scale = stages - 1 - k
            if k > 0 and not cfg.hierarchy:
                continue
            to_dec[k] = _project_dense(model, scale, dense_feats[scale])

    recon = decoder_forward(model, to_dec, mode=mode)
    return recon, targets, masked_maps


def spark_loss(recon: DiffTensor, targets: DiffTensor, masked_maps: np.ndarray, loss_on: str = "masked") -> DiffTensor:
    """Mean squared error over masked pixels (or every pixel for loss_on='all')."""
    if recon.shape != targets.shape:
        raise ValueError(f"spark_loss: reconstruction {tuple(recon.shape)} != targets {tuple(targets.shape)}")
    sq = ag.square(ag.sub(recon, targets))
    if loss_on == "masked":
        if not masked_maps.any():
            raise ValueError("spark_loss: masked-position loss with an empty mask")
        return ag.mean_over(sq, masked_maps[:, None, :, :])
    if loss_on == "all":
        return ag.mean_over(sq)
    raise ValueError(f"spark_loss: unknown loss_on {loss_on!r}")


# ---------------------------------------------------------------------------
# MAC accounting
# ---------------------------------------------------------------------------


def encoder_flops_table(enc: EncoderConfig, mask: PatchMask) -> list[dict]:
    """Exact per-layer sparse vs dense multiply-accumulate counts for one mask.

    Sparse MACs come from the actual rulebooks (pair count x cin x cout);
    dense MACs count every kernel tap of the zero-padded dense counterpart.
    """
    h, w = mask.image_hw
    rows = []

    def add_row(layer, stride, smacs, dmacs):
        rows.append({
            "layer": layer,
            "scale": stride,
            "sparse_macs": int(smacs),
            "dense_macs": int(dmacs),
            "ratio": smacs / dmacs,
        })

    pix = active_set_at_scale(mask, 1)
    act0 = active_set_at_scale(mask, enc.stem_stride)
    rb = build_downsample_rulebook(pix, (h, w), act0, enc.stem_stride, enc.stem_stride, 0)
    g0 = h // enc.stem_stride
    add_row("stem", enc.stem_stride, sparse_flops(rb, 3, enc.widths[0]),
            dense_conv_macs(g0, w // enc.stem_stride, enc.stem_stride, 3, enc.widths[0]))

    for i in range(enc.stages):
        s = enc.stride_at(i)
        gh, gw = h // s, w // s
        act = active_set_at_scale(mask, s)
        if i > 0:
            k = enc.down_kernel
            pad = 1 if k == 3 else 0
            prev = active_set_at_scale(mask, enc.stride_at(i - 1))
            rb_dn = build_downsample_rulebook(prev, (h // (s // 2), w // (s // 2)), act, k, 2, pad)
            add_row(f"stage{i}.down", s, sparse_flops(rb_dn, enc.widths[i - 1], enc.widths[i]),
                    dense_conv_macs(gh, gw, k, enc.widths[i - 1], enc.widths[i]))
        rb_sub = build_rulebook(act, 3, height=gh, width=gw)
        for j in range(enc.blocks_per_stage):
            for cv in (0, 1):
                add_row(f"stage{i}.block{j}.conv{cv}", s, sparse_flops(rb_sub, enc.widths[i], enc.widths[i]),
                        dense_conv_macs(gh, gw, 3, enc.widths[i], enc.widths[i]))
    return rows
