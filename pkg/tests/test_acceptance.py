"""Acceptance gate.

One test per acceptance criterion, each printing a verdict line. The
training-dependent criteria share three 2000-step smoke runs (skip at p2,
a bitwise repeat of it, and the no-skip control) over a fixed synthetic
corpus, plus an untrained control; expect roughly half an hour of CPU for
the whole module. Run with ``pytest tests/test_acceptance.py -v``.
"""
import base64
import dataclasses
import io
import json
import time

import numpy as np
import pytest

from cdaae import data, ops, synthetic
from cdaae.evaluate import eval_identity, eval_label_control
from cdaae.model import (
    LATENT_DIM,
    CdaaeModel,
    SkipPosition,
    ae_phase_losses,
    disc_phase_losses,
)
from cdaae.optim import Adam
from cdaae.tensor import Graph, Tensor, frozen
from cdaae.training import (
    TrainConfig,
    ae_update,
    build_model,
    disc_update,
    model_from_checkpoint,
    moving_average,
    rng_for,
    train,
)

from oracles import (
    bce_oracle,
    conv2d_oracle,
    conv2d_transpose_oracle,
    dense_oracle,
    finite_difference_check,
    finite_difference_check_piecewise,
    mse_oracle,
    relative_error,
)
from test_data import abundant_au_manifest, emotion_manifest

SMOKE_STEPS = 2000
SMOKE_SEED = 7


def report(name: str, detail: str) -> None:
    print(f"[ACCEPT] {name}: PASS ({detail})")


# ---------------------------------------------------------------------------
# shared artifacts


@pytest.fixture(scope="module")
def corpora(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    train_manifest, _ = synthetic.make_synthetic_corpus(
        root / "train", n_subjects=10, n_expressions=9, seed=100
    )
    held_manifest, held_truth = synthetic.make_synthetic_corpus(
        root / "held", n_subjects=10, n_expressions=9, seed=200
    )
    return {
        "root": root,
        "train_manifest": train_manifest,
        "held_manifest": data.load_manifest(held_manifest),
        "held_truth": synthetic.load_ground_truth(held_truth),
    }


@pytest.fixture(scope="module")
def regressor():
    return synthetic.train_oracle_regressor()


def smoke_config(corpora, position: str) -> TrainConfig:
    return TrainConfig(
        skip_position=position,
        manifest_path=str(corpora["train_manifest"]),
        output_dir=str(corpora["root"] / f"run_{position}"),
        epochs=10_000,  # cut by max_steps
        max_steps=SMOKE_STEPS,
        seed=SMOKE_SEED,
    )


@pytest.fixture(scope="module")
def p2_runs(corpora):
    """The p2 smoke run, executed twice with an identical config."""
    config = smoke_config(corpora, "p2")
    first = train(config)
    first_bytes = first.checkpoint_path.read_bytes()
    second = train(config)
    second_bytes = second.checkpoint_path.read_bytes()
    return {"result": second, "first_bytes": first_bytes, "second_bytes": second_bytes}


@pytest.fixture(scope="module")
def none_run(corpora):
    return train(smoke_config(corpora, "none"))


@pytest.fixture(scope="module")
def trained_p2(p2_runs):
    model, _ = model_from_checkpoint(p2_runs["result"].checkpoint_path)
    return model


@pytest.fixture(scope="module")
def untrained_control(corpora):
    return build_model(smoke_config(corpora, "p2"))


# ---------------------------------------------------------------------------
# criterion: op oracle equivalence


@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-5), (np.float64, 1e-10)])
def test_op_oracle_equivalence(dtype, tol):
    started = time.perf_counter()
    rng = np.random.default_rng(1234)
    worst = 0.0
    for trial in range(20):
        n, c, f = (int(v) for v in rng.integers(1, 4, size=3))
        kh, kw = (int(v) for v in rng.integers(1, 5, size=2))
        stride, pad = int(rng.integers(1, 3)), int(rng.integers(0, 2))
        h, w = kh + 2 + int(rng.integers(0, 5)), kw + 2 + int(rng.integers(0, 5))

        x = rng.normal(size=(n, c, h, w)).astype(dtype)
        k = rng.normal(size=(f, c, kh, kw)).astype(dtype)
        b = rng.normal(size=f).astype(dtype)
        got = ops.conv2d(Tensor(x), Tensor(k), Tensor(b), stride, pad).data
        want = conv2d_oracle(x.astype(np.float64), k.astype(np.float64), b.astype(np.float64), stride, pad)
        worst = max(worst, float(np.max(np.abs(got - want))))

        kt = rng.normal(size=(c, f, kh, kw)).astype(dtype)
        got = ops.conv2d_transpose(Tensor(x), Tensor(kt), Tensor(b), stride, pad).data
        want = conv2d_transpose_oracle(
            x.astype(np.float64), kt.astype(np.float64), b.astype(np.float64), stride, pad
        )
        worst = max(worst, float(np.max(np.abs(got - want))))

        d, kdim = int(rng.integers(1, 12)), int(rng.integers(1, 12))
        xm = rng.normal(size=(n, d)).astype(dtype)
        wm = rng.normal(size=(d, kdim)).astype(dtype)
        bm = rng.normal(size=kdim).astype(dtype)
        got = ops.dense(Tensor(xm), Tensor(wm), Tensor(bm)).data
        worst = max(
            worst,
            float(np.max(np.abs(got - dense_oracle(xm.astype(np.float64), wm.astype(np.float64), bm.astype(np.float64))))),
        )

        a1, a2 = rng.normal(size=(n, 6)).astype(dtype), rng.normal(size=(n, 6)).astype(dtype)
        worst = max(worst, abs(ops.mse_loss(Tensor(a1), Tensor(a2)).item() - mse_oracle(a1, a2)))
        pr = rng.uniform(0, 1, size=(n, 6)).astype(dtype)
        tg = rng.integers(0, 2, size=(n, 6)).astype(dtype)
        worst = max(worst, abs(ops.bce_loss(Tensor(pr), Tensor(tg)).item() - bce_oracle(pr, tg)))
    elapsed = time.perf_counter() - started
    assert worst < tol
    assert elapsed < 60.0
    report("op-oracle-equivalence", f"{np.dtype(dtype).name}: max abs err {worst:.2e} < {tol:g}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# criterion: gradient suite


def test_gradient_suite():
    started = time.perf_counter()
    rng = np.random.default_rng(77)

    worst_op = 0.0
    for trial in range(20):
        x = Tensor(rng.uniform(-1, 1, (2, 2, 6, 6)), requires_grad=True)
        k = Tensor(rng.uniform(-1, 1, (3, 2, 3, 3)), requires_grad=True)
        b = Tensor(rng.uniform(-1, 1, (3,)), requires_grad=True)
        kt = Tensor(rng.uniform(-1, 1, (2, 3, 4, 4)), requires_grad=True)
        bt = Tensor(rng.uniform(-1, 1, (3,)), requires_grad=True)
        w = Tensor(rng.uniform(-1, 1, (4, 5)), requires_grad=True)
        bw = Tensor(rng.uniform(-1, 1, (5,)), requires_grad=True)
        p = Tensor(rng.uniform(0.05, 0.95, (3, 4)), requires_grad=True)
        t = Tensor(rng.uniform(0, 1, (3, 4)), requires_grad=True)
        proj_conv = rng.normal(size=(2, 3, 2, 2))  # (6 - 3)//2 + 1
        proj_deconv = rng.normal(size=(2, 3, 14, 14))  # (6-1)*2 + 4
        proj_dense = rng.normal(size=(3, 5))
        xd = Tensor(rng.uniform(-1, 1, (3, 4)), requires_grad=True)

        def proj(out, arr):
            return ops.sum_elements(ops.mul(out, Tensor(arr)))

        checks = [
            (lambda: proj(ops.conv2d(x, k, b, 2, 0), proj_conv), [x, k, b]),
            (lambda: proj(ops.conv2d_transpose(x, kt, bt, 2, 0), proj_deconv), [x, kt, bt]),
            (lambda: proj(ops.dense(xd, w, bw), proj_dense), [xd, w, bw]),
            (lambda: proj(ops.tanh(xd), np.ones((3, 4))), [xd]),
            (lambda: proj(ops.sigmoid(xd), np.ones((3, 4))), [xd]),
            (lambda: ops.mse_loss(p, t), [p, t]),
            (lambda: ops.bce_loss(p, t), [p, t]),
        ]
        for build, params in checks:
            worst_op = max(worst_op, finite_difference_check(build, params, eps=1e-4))
    assert worst_op < 1e-4

    # full composed model loss, both phases, with kink-flip probes skipped
    model = CdaaeModel(skip=SkipPosition.P2, label_mode="au", seed=3, dtype=np.float64, channels=(4, 8, 8, 8))
    x_s = Tensor(rng.uniform(-1, 1, (2, 3, 32, 32)))
    x_t = Tensor(rng.uniform(-1, 1, (2, 3, 32, 32)))
    labels = Tensor(rng.uniform(0, 1, (2, 12)))
    z_prior = Tensor(rng.standard_normal((2, LATENT_DIM)))
    ae_params = [p_ for _, p_ in model.ae_parameters()]
    disc_params = [p_ for _, p_ in model.disc_parameters()]

    with frozen(disc_params):
        err_ae, checked_ae, skipped_ae = finite_difference_check_piecewise(
            lambda: ae_phase_losses(model, x_s, x_t, labels, 1.0, 1e-2, 1e-3)[3],
            ae_params, eps=1e-4, max_entries_per_param=4, rng=np.random.default_rng(5),
        )
    for p_ in disc_params:
        assert p_.grad is None  # frozen side receives nothing from the AE loss
    with frozen(ae_params):
        err_d, checked_d, skipped_d = finite_difference_check_piecewise(
            lambda: (lambda pair: pair[0] + pair[1])(disc_phase_losses(model, x_s, labels, z_prior)),
            disc_params, eps=1e-4, max_entries_per_param=4, rng=np.random.default_rng(6),
        )
    elapsed = time.perf_counter() - started
    assert err_ae < 1e-4 and err_d < 1e-4
    assert checked_ae > 2 * skipped_ae and checked_d > 2 * skipped_d
    assert elapsed < 300.0
    report(
        "gradient-suite",
        f"ops worst {worst_op:.1e}; model ae {err_ae:.1e} ({checked_ae} probes), "
        f"disc {err_d:.1e} ({checked_d} probes); {elapsed:.0f}s",
    )


# ---------------------------------------------------------------------------
# criterion: architecture conformance


def test_architecture_conformance():
    rng = np.random.default_rng(0)
    for mode, g1_dim in (("au", 112), ("emotion", 108)):
        model = CdaaeModel(skip=SkipPosition.P2, label_mode=mode, seed=1)
        x = Tensor(rng.uniform(-1, 1, (2, 3, 32, 32)).astype(np.float32))
        labels = Tensor(rng.uniform(0, 1, (2, model.label_dim)).astype(np.float32))
        z = model.encode_stage2(model.encode_stage1(x))
        assert z.shape == (2, 100)
        assert model.g1_input_dim == g1_dim
        assert model.dec_fc.weight.shape[0] == g1_dim
        d = model.decode_difference(z, labels)
        assert np.max(np.abs(d.data)) < 1.0

    model = CdaaeModel(skip=SkipPosition.P2, label_mode="au", seed=2)
    x = Tensor(rng.uniform(-1, 1, (2, 3, 32, 32)).astype(np.float32))
    labels = Tensor(rng.uniform(0, 1, (2, 12)).astype(np.float32))
    whole = model.synthesize(x, labels)
    f = model.encode_stage1(x)
    chained = model.decode_output(ops.add(f, model.decode_difference(model.encode_stage2(f), labels)))
    assert whole.data.tobytes() == chained.data.tobytes()

    control = CdaaeModel(skip=SkipPosition.NONE, label_mode="au", seed=2)
    whole = control.synthesize(x, labels)
    z = control.encode_stage2(control.encode_stage1(x))
    no_junction = control.decode_output(control.decode_difference(z, labels))
    assert whole.data.tobytes() == no_junction.data.tobytes()
    report("architecture-conformance", "z=100, g1 in 112/108, composition bitwise, |d|<1, no-skip path clean")


# ---------------------------------------------------------------------------
# criterion: schedule conformance


def test_schedule_conformance(tmp_path):
    defaults = TrainConfig()
    assert (defaults.alpha, defaults.beta1, defaults.beta2) == (1.0, 1e-2, 1e-3)
    assert defaults.batch_size == 32
    assert (defaults.lr_ae, defaults.lr_disc) == (1e-3, 1e-4)
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(defaults.to_dict()), encoding="utf-8")
    loaded = TrainConfig.from_json(config_path)
    assert loaded == defaults

    rng = np.random.default_rng(1)
    model = CdaaeModel(skip=SkipPosition.P2, label_mode="au", seed=0, channels=(4, 8, 8, 8))
    ae_opt = Adam(model.ae_parameters(), lr=loaded.lr_ae)
    disc_opt = Adam(model.disc_parameters(), lr=loaded.lr_disc)
    x_s = Tensor(rng.uniform(-1, 1, (4, 3, 32, 32)).astype(np.float32))
    x_t = Tensor(rng.uniform(-1, 1, (4, 3, 32, 32)).astype(np.float32))
    labels = Tensor(rng.uniform(0, 1, (4, 12)).astype(np.float32))

    ae_before = {name: p.data.copy() for name, p in model.ae_parameters()}
    disc_before = {name: p.data.copy() for name, p in model.disc_parameters()}
    disc_update(model, x_s, labels, disc_opt, rng_for(0, 2, 0))
    assert all(np.array_equal(p.data, ae_before[name]) for name, p in model.ae_parameters())
    latent_moved = any(
        not np.array_equal(p.data, disc_before[name])
        for name, p in model.disc_parameters() if name.startswith("dlat")
    )
    image_moved = any(
        not np.array_equal(p.data, disc_before[name])
        for name, p in model.disc_parameters() if name.startswith("dimg")
    )
    assert latent_moved and image_moved  # both discriminators step together

    disc_mid = {name: p.data.copy() for name, p in model.disc_parameters()}
    ae_update(model, x_s, x_t, labels, ae_opt, loaded.alpha, loaded.beta1, loaded.beta2)
    assert all(np.array_equal(p.data, disc_mid[name]) for name, p in model.disc_parameters())
    assert any(not np.array_equal(p.data, ae_before[name]) for name, p in model.ae_parameters())
    report("schedule-conformance", "phase freezes hold, D_E+D_G update together, defaults verbatim")


# ---------------------------------------------------------------------------
# criterion: pairing counts


def test_pairing_counts():
    pairs = data.sample_pairs_emotion(emotion_manifest(50, 3), seed=0)
    assert len(pairs) == 9600
    assert len(data.sample_pairs_emotion(emotion_manifest(1, 1), seed=0)) == 64

    manifest = abundant_au_manifest()
    au_pairs = data.sample_pairs_au(manifest, per_au_cap=2000, zero_frames=1000, seed=1)
    assert len(au_pairs) == 12 * 2000 + 1000
    report("pairing-counts", "emotion 9600 / 64; AU 12*2000+1000")


# ---------------------------------------------------------------------------
# criterion: training smoke


def test_training_smoke(p2_runs):
    result = p2_runs["result"]
    assert result.final_step == SMOKE_STEPS
    curve = [h["l_r"] for h in result.history]
    assert not any(np.isnan(v) or np.isinf(v) for h in result.history for v in h.values())
    smooth = moving_average(curve, 100)
    drop = smooth[-1] / smooth[99]
    assert drop <= 0.5
    assert p2_runs["first_bytes"] == p2_runs["second_bytes"]
    report(
        "training-smoke",
        f"smoothed L_R {smooth[99]:.4f} -> {smooth[-1]:.4f} ({(1 - drop) * 100:.0f}% drop), "
        "no NaN, repeat run byte-identical",
    )


# ---------------------------------------------------------------------------
# criterion: identity preservation (+ directional ablation)


def test_identity_preservation(corpora, regressor, trained_p2, untrained_control, none_run):
    held = corpora["held_manifest"]
    truth = corpora["held_truth"]
    trained_score, _ = eval_identity(trained_p2, held, truth, regressor)
    untrained_score, _ = eval_identity(untrained_control, held, truth, regressor)
    none_model, _ = model_from_checkpoint(none_run.checkpoint_path)
    none_score, _ = eval_identity(none_model, held, truth, regressor)

    assert trained_score >= 0.8
    assert untrained_score <= 0.4  # chance is 0.1 with ten held-out subjects
    assert trained_score >= none_score  # the skip junction must not hurt identity
    report(
        "identity-preservation",
        f"p2 {trained_score:.2f} >= 0.8; untrained {untrained_score:.2f} ~ chance; none {none_score:.2f} <= p2",
    )


# ---------------------------------------------------------------------------
# criterion: label control


def test_label_control(corpora, regressor, trained_p2):
    held = corpora["held_manifest"]
    monotone, ranged, _ = eval_label_control(trained_p2, held, regressor)
    assert monotone >= 0.8
    assert ranged >= 0.5
    report("label-control", f"monotone {monotone:.2f} >= 0.8; range>0.1 on {ranged:.2f} >= 0.5")


def test_expression_transfer_correlation(corpora, regressor, trained_p2):
    # comparison-strip semantics: re-synthesizing each held-out frame's label
    # from one source must track the real frames' expression parameters
    from cdaae.evaluate import comparison_strip  # noqa: F401  (strip itself rendered in test_evaluate)

    held = corpora["held_manifest"]
    truth = corpora["held_truth"]
    by_subject: dict = {}
    for row in held.rows:
        by_subject.setdefault(row.subject_id, []).append(row)

    real_params, generated_params = [], []
    for subject in sorted(by_subject)[:5]:
        rows = by_subject[subject]
        source = data.load_preprocessed(rows[0])
        labels = np.stack([r.label for r in rows])
        sources = np.repeat(source[None], len(rows), axis=0)
        outputs = trained_p2.synthesize(
            Tensor(sources.astype(trained_p2.dtype)), Tensor(labels.astype(trained_p2.dtype))
        ).data
        generated_params.append(regressor.predict(outputs)[:, 4:])
        real_params.append(np.stack([truth.expression[r.image_path.name] for r in rows]))
    real = np.concatenate(real_params).ravel()
    generated = np.concatenate(generated_params).ravel()
    r = float(np.corrcoef(real, generated)[0, 1])
    assert r > 0.7
    report("expression-transfer", f"Pearson r = {r:.3f} > 0.7 between real and re-synthesized params")


def test_label_continuity(trained_p2, corpora):
    # output moves O(delta) under a small label perturbation
    row = corpora["held_manifest"].rows[0]
    source = data.load_preprocessed(row)[None]
    base = np.zeros((1, 12), dtype=np.float32)
    bumped = base.copy()
    delta = 1e-2
    bumped[0, synthetic.EXPRESSION_AU_INDICES[2]] += delta
    out_a = trained_p2.synthesize(Tensor(source), Tensor(base)).data
    out_b = trained_p2.synthesize(Tensor(source), Tensor(bumped)).data
    slope = float(np.max(np.abs(out_a - out_b))) / delta
    assert 0.0 < slope < 50.0
    report("label-continuity", f"max-slope {slope:.2f} bounded")


# ---------------------------------------------------------------------------
# criterion: checkpoint round trip


def test_checkpoint_roundtrip(p2_runs, trained_p2, corpora):
    rng = np.random.default_rng(0)
    x = Tensor(rng.uniform(-1, 1, (2, 3, 32, 32)).astype(np.float32))
    labels = Tensor(rng.uniform(0, 1, (2, 12)).astype(np.float32))
    reloaded, _ = model_from_checkpoint(p2_runs["result"].checkpoint_path)
    assert reloaded.synthesize(x, labels).data.tobytes() == trained_p2.synthesize(x, labels).data.tobytes()
    assert p2_runs["first_bytes"] == p2_runs["second_bytes"]
    report("checkpoint-roundtrip", "save/load/forward bitwise; cross-run files byte-identical")


# ---------------------------------------------------------------------------
# secondary criterion: service integration


def test_service_integration(p2_runs, corpora):
    from fastapi.testclient import TestClient
    from PIL import Image

    from cdaae.service import create_app

    client = TestClient(create_app(p2_runs["result"].checkpoint_path))
    face = synthetic.render_face(synthetic.SyntheticFaceSpec(0.4, 0.5, 0.5, 0.5, 0.2, 0.0, 0.6, 0.5))
    buf = io.BytesIO()
    Image.fromarray(face, mode="RGB").save(buf, format="PNG")
    payload = {"image": base64.b64encode(buf.getvalue()).decode("ascii"), "label": [0.3] * 12}

    first = client.post("/synthesize", json=payload)
    assert first.status_code == 200
    decoded = Image.open(io.BytesIO(base64.b64decode(first.json()["image"])))
    assert decoded.size == (32, 32)

    second = client.post("/synthesize", json=payload)
    assert second.json()["image"] == first.json()["image"]

    bad = client.post("/synthesize", json={"image": payload["image"], "label": [0.3] * 11})
    assert bad.status_code == 400
    assert bad.json()["error"]["code"] == "label_length"

    warm = min(client.post("/synthesize", json=payload).json()["latency_ms"] for _ in range(3))
    assert warm < 200.0
    report("service-integration", f"round trip 32x32, determinism, 400 path, warm latency {warm:.0f}ms")
