"""Self-contained invariant suites: gradient checks, the dense-oracle
equivalence, mask erosion vs preservation, and the information-leak guard.

Each suite returns (passed, report_lines) so the CLI can print a table and
exit nonzero on any failure; the test suite asserts on the same functions.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .masking import PatchMask, erosion_profile, generate_mask, masked_pixel_map
from .model import EncoderConfig, SparkConfig, SparkModel, encoder_forward, spark_forward, spark_loss
from .sparse import SparseTensor2D, as_coords, build_rulebook, subm_conv2d

__all__ = ["suite_gradcheck", "suite_oracle", "suite_erosion", "suite_leakage", "run_suites", "SUITES"]

GRAD_TOL = 1e-4


def suite_gradcheck():
    """Finite-difference checks for every differentiable op plus a composite chain."""
    rng = np.random.default_rng(42)
    lines = []
    worst_overall = 0.0

    def check(name, fn, inputs, tol=GRAD_TOL):
        nonlocal worst_overall
        err = ag.grad_check(fn, inputs)
        worst_overall = max(worst_overall, err)
        lines.append(f"  {name}: max rel err {err:.3e} (tol {tol:g})")
        return err < tol

    ok = True
    x = ag.tensor(rng.normal(size=(1, 2, 5, 5)), requires_grad=True)
    w = ag.tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
    b = ag.tensor(rng.normal(size=3), requires_grad=True)
    ok &= check("conv2d", lambda t: ag.mean_over(ag.square(ag.conv2d(t[0], t[1], t[2], 1, 1))), [x, w, b], 1e-6)

    xt = ag.tensor(rng.normal(size=(1, 2, 3, 3)), requires_grad=True)
    wt = ag.tensor(rng.normal(size=(2, 3, 4, 4)), requires_grad=True)
    bt = ag.tensor(rng.normal(size=3), requires_grad=True)
    ok &= check("conv_transpose2d", lambda t: ag.mean_over(ag.square(ag.conv_transpose2d(t[0], t[1], t[2]))), [xt, wt, bt], 1e-6)

    xb = ag.tensor(rng.normal(size=(2, 3, 4, 4)), requires_grad=True)
    gm = ag.tensor(rng.uniform(0.5, 1.5, 3), requires_grad=True)
    bb = ag.tensor(rng.normal(size=3), requires_grad=True)
    st = ag.BatchNormState(3)
    ok &= check("batchnorm2d/train", lambda t: ag.mean_over(ag.square(ag.batchnorm2d(t[0], t[1], t[2], st, "train"))), [xb, gm, bb])
    st_eval = ag.BatchNormState(3)
    st_eval.running_mean = rng.normal(size=3)
    st_eval.running_var = rng.uniform(0.5, 2.0, 3)
    ok &= check("batchnorm2d/eval", lambda t: ag.mean_over(ag.square(ag.batchnorm2d(t[0], t[1], t[2], st_eval, "eval"))), [xb, gm, bb])

    # keep activations away from their kinks: |x| and |x - 6| >> fd step
    xr = ag.tensor(rng.normal(size=(4, 4)) * 3.0 + 0.5, requires_grad=True)
    ok &= check("relu", lambda t: ag.mean_over(ag.square(ag.relu(t[0]))), [xr], 1e-6)
    ok &= check("relu6", lambda t: ag.mean_over(ag.square(ag.relu6(t[0]))), [xr], 1e-6)

    xa = ag.tensor(rng.normal(size=(3, 3)), requires_grad=True)
    ya = ag.tensor(rng.normal(size=(3, 3)), requires_grad=True)
    ok &= check("add/sub/mul/square/mean", lambda t: ag.mean_over(
        ag.square(ag.sub(ag.add(t[0], t[1]), ag.mul_scalar(ag.mul(t[0], t[1]), 0.3)))), [xa, ya], 1e-6)
    msel = rng.random((3, 3)) < 0.5
    ok &= check("mean_over(mask)", lambda t: ag.mean_over(ag.square(t[0]), msel), [xa], 1e-6)

    # composite: conv -> bn -> relu6 -> mse against a fixed target
    st2 = ag.BatchNormState(3)
    tgt = rng.normal(size=(2, 3, 5, 5))
    xc = ag.tensor(rng.normal(size=(2, 2, 5, 5)), requires_grad=True)
    wc = ag.tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True)
    gc = ag.tensor(rng.uniform(0.5, 1.5, 3), requires_grad=True)
    bc = ag.tensor(rng.normal(size=3) * 0.1, requires_grad=True)

    def composite(t):
        y = ag.relu6(ag.batchnorm2d(ag.conv2d(t[0], t[1], None, 1, 1), t[2], t[3], st2, "train"))
        return ag.mean_over(ag.square(ag.sub(y, ag.tensor(tgt))))

    err = ag.grad_check(composite, [xc, wc, gc, bc])
    worst_overall = max(worst_overall, err)
    lines.append(f"  composite conv->bn->relu6->mse: max rel err {err:.3e} (tol 1e-5)")
    ok &= err < 1e-5

    ok &= end_to_end_gradcheck(lines)
    lines.append(f"  worst op-level rel err: {worst_overall:.3e}")
    return bool(ok), lines


def end_to_end_gradcheck(lines=None) -> bool:
    """FD check of the full model on a tiny 2-stage network (sampled entries)."""
    enc = EncoderConfig(stages=2, widths=(4, 8), blocks_per_stage=1)
    cfg = SparkConfig(encoder=enc, image_size=16, patch_size=8, dec_fea_dim=8)
    model = SparkModel(cfg, np.random.default_rng(5))
    rng = np.random.default_rng(6)
    images = rng.random((2, 3, 16, 16))
    masks = [generate_mask(2, 2, 0.5, np.random.default_rng(50 + i), patch_size=8) for i in range(2)]

    names = list(model.params.keys())
    tensors = [model.param(n) for n in names]

    def f(_):
        recon, targets, mmaps = spark_forward(model, images, masks, mode="train")
        return spark_loss(recon, targets, mmaps, loss_on="masked")

    err = ag.grad_check(f, tensors, max_entries_per_input=4, rng=np.random.default_rng(7))
    if lines is not None:
        lines.append(f"  end-to-end tiny model: max rel err {err:.3e} (tol {GRAD_TOL:g})")
    return err < GRAD_TOL


def suite_oracle(instances: int = 200, seed: int = 123):
    """subm_conv2d == zero-fill + dense conv + restrict-to-active (random instances)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    preserved = True
    for _ in range(instances):
        h = int(rng.integers(3, 9))
        w = int(rng.integers(3, 9))
        k = int(rng.choice([1, 3, 5]))
        cin = int(rng.integers(1, 4))
        cout = int(rng.integers(1, 4))
        dens = rng.uniform(0.2, 1.0)
        sites = [(r, c) for r in range(h) for c in range(w) if rng.random() < dens]
        if not sites:
            sites = [(int(rng.integers(0, h)), int(rng.integers(0, w)))]
        coords = as_coords(sites)
        feats = ag.tensor(rng.normal(size=(coords.shape[0], cin)))
        sp = SparseTensor2D(h, w, coords, feats)
        wt = ag.tensor(rng.normal(size=(cout, cin, k, k)))
        bt = ag.tensor(rng.normal(size=cout))
        rb = build_rulebook(coords, k, height=h, width=w)
        out = subm_conv2d(sp, wt, bt, rb)
        preserved &= np.array_equal(out.coords, coords)

        dense = np.zeros((1, cin, h, w))
        dense[0, :, coords[:, 0], coords[:, 1]] = feats.data
        ref = ag.conv2d(ag.tensor(dense), wt, bt, stride=1, padding=k // 2)
        ref_at = ref.data[0][:, coords[:, 0], coords[:, 1]].T
        worst = max(worst, float(np.abs(out.features.data - ref_at).max()))
    lines = [f"  {instances} random instances, max abs diff {worst:.3e} (tol 1e-9)",
             f"  active set preserved in all instances: {preserved}"]
    return bool(worst < 1e-9 and preserved), lines


def suite_erosion(max_layers: int = 20):
    """Dense zero-out erodes a 32x32 hole to nothing in 16 layers; submanifold never does."""
    visible = np.ones((3, 3), dtype=bool)
    visible[1, 1] = False
    mask = PatchMask(3, 3, 32, visible, 1.0 / 9.0)
    profile = erosion_profile(mask, max_layers)
    lines = ["  layer  zero_cells"]
    for i, z in enumerate(profile):
        lines.append(f"  {i:5d}  {z}")
    ok = profile[0] == 1024 and profile[1] == 900 and profile[16] == 0 and profile[15] > 0

    # the same mask under stacked submanifold convs keeps the count constant
    rng = np.random.default_rng(0)
    coords = as_coords(np.argwhere(~masked_pixel_map(PatchMask(3, 3, 4, visible, 1 / 9))))
    sp = SparseTensor2D(12, 12, coords, ag.tensor(rng.normal(size=(coords.shape[0], 2))))
    rb = build_rulebook(coords, 3, height=12, width=12)
    wt = ag.tensor(rng.normal(size=(2, 2, 3, 3)))
    zero_cells = 12 * 12 - coords.shape[0]
    constant = True
    for _ in range(max_layers):
        sp = subm_conv2d(sp, wt, None, rb)
        constant &= (sp.height * sp.width - sp.num_active) == zero_cells
    lines.append(f"  submanifold stack keeps zero-cell count at {zero_cells}: {constant}")
    return bool(ok and constant), lines


def suite_leakage():
    """Masked pixels can never influence sparse features or the masked loss."""
    enc = EncoderConfig(stages=2, widths=(6, 12), blocks_per_stage=1)
    cfg = SparkConfig(encoder=enc, image_size=32, patch_size=8, dec_fea_dim=16)
    model = SparkModel(cfg, np.random.default_rng(11))
    rng = np.random.default_rng(12)
    images = rng.random((1, 3, 32, 32))
    mask = generate_mask(4, 4, 0.5, np.random.default_rng(13), patch_size=8)
    mm = masked_pixel_map(mask)

    with ag.no_grad():
        recon_a, targets, maps = spark_forward(model, images, mask, mode="eval")
        loss_a = spark_loss(recon_a, targets, maps).item()
        feats_a = encoder_forward(model, images, mask, mode="eval")

        perturbed = images.copy()
        perturbed[:, :, mm] = rng.random((1, 3, int(mm.sum())))
        recon_b, _, _ = spark_forward(model, perturbed, mask, mode="eval")
        loss_b = spark_loss(recon_b, targets, maps).item()
        feats_b = encoder_forward(model, perturbed, mask, mode="eval")

        feats_same = all(
            np.array_equal(sa.features.data, sb.features.data)
            for la, lb in zip(feats_a, feats_b)
            for sa, sb in zip(la, lb)
        )
        recon_same = np.array_equal(recon_a.data, recon_b.data)

        visible = images.copy()
        vis_pix = np.argwhere(~mm)
        r, c = vis_pix[0]
        visible[0, 0, r, c] += 0.123
        recon_c, _, _ = spark_forward(model, visible, mask, mode="eval")
        loss_c = spark_loss(recon_c, targets, maps).item()

        # zero-out baseline: the dense encoder computes at masked positions,
        # so noise injected there changes the loss
        model.cfg.masking = "zero_out"
        recon_z, _, _ = spark_forward(model, images, mask, mode="eval")
        loss_z = spark_loss(recon_z, targets, maps).item()
        noisy = images * (~mm)[None, None]
        noisy[:, :, mm] = rng.random((1, 3, int(mm.sum())))  # dense input differs at masked sites
        from .model import to_dense_encoder, decoder_forward, _project_dense

        dense_feats = to_dense_encoder(model).forward(noisy, mode="eval")
        to_dec = [None] * cfg.decoder.n_stages
        for k in range(enc.stages):
            to_dec[k] = _project_dense(model, enc.stages - 1 - k, dense_feats[enc.stages - 1 - k])
        recon_zn = decoder_forward(model, to_dec, mode="eval")
        loss_zn = spark_loss(recon_zn, targets, maps).item()
        model.cfg.masking = "sparse"

    lines = [
        f"  sparse: features bit-identical under masked-pixel noise: {feats_same}",
        f"  sparse: reconstruction bit-identical: {recon_same}",
        f"  sparse: masked loss bit-identical: {loss_a == loss_b}",
        f"  sparse: visible-pixel perturbation changes loss: {loss_a != loss_c}",
        f"  zero-out: masked-site noise changes loss: {loss_z != loss_zn}",
    ]
    ok = feats_same and recon_same and loss_a == loss_b and loss_a != loss_c and loss_z != loss_zn
    return bool(ok), lines


SUITES = {
    "gradcheck": suite_gradcheck,
    "oracle": suite_oracle,
    "erosion": suite_erosion,
    "leakage": suite_leakage,
}


def run_suites(names):
    """Run the named suites; returns (all_passed, report_lines)."""
    all_ok = True
    lines = []
    for name in names:
        ok, sub = SUITES[name]()
        lines.append(f"[{'PASS' if ok else 'FAIL'}] {name}")
        lines.extend(sub)
        all_ok &= ok
    return all_ok, lines
