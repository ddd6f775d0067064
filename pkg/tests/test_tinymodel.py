import struct

import numpy as np
import pytest

from edgefarm.ensemble import (
    GradientBoostingParams,
    RandomForestParams,
    fit_gradient_boosting,
    fit_random_forest,
)
from edgefarm.ensemble.models import TreeEnsembleModel
from edgefarm.telemetry import ScalerParams
from edgefarm.tinymodel import (
    MAGIC,
    TinyModelError,
    export,
    inspect_artifact,
    load,
    quantize,
)


def toy_model(kind="boosting", n=400, seed=0, **gb_kw):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 4))
    y = 2.0 * X[:, 0] + np.sin(3 * X[:, 1]) + 0.5 * X[:, 2] * X[:, 3]
    if kind == "boosting":
        return fit_gradient_boosting(X, y, GradientBoostingParams(n_estimators=20, **gb_kw), seed=seed), X
    return fit_random_forest(X, y, RandomForestParams(n_estimators=10, max_depth=6), seed=seed), X


def constant_model(value=5.0, n_features=3):
    return TreeEnsembleModel(
        kind="boosting",
        trees=[],
        init_value=value,
        learning_rate=0.1,
        scaler=ScalerParams.identity(n_features),
        feature_names=tuple(f"f{i}" for i in range(n_features)),
    )


class TestExport:
    def test_constant_model_header_size_and_value(self):
        art = export(constant_model(5.0, n_features=3))
        # 4+2+1+1+2+4+4 header + 2 * 3 * 4 scaler bytes, no trees
        assert len(art) == 18 + 24
        em = load(art)
        assert em.infer(np.zeros(3)) == 5.0

    def test_deterministic_bytes(self):
        model, _ = toy_model()
        assert export(model) == export(model)

    def test_export_load_export_fixed_point(self):
        # rebuilding the artifact from decoded arrays must be byte-identical
        model, _ = toy_model()
        art = export(model)
        em = load(art)
        rebuilt = _reencode(em)
        assert rebuilt == art

    def test_feature_limit_enforced(self):
        model = constant_model(1.0, n_features=3)
        model.scaler = ScalerParams.identity(300)
        with pytest.raises(TinyModelError):
            export(model)


def _reencode(em) -> bytes:
    """Re-serialize a loaded v1 EdgeModel from its decoded arrays."""
    out = [
        struct.pack(
            "<4sHBBHff",
            MAGIC, 1,
            0 if em.kind == "boosting" else 1,
            em.n_features, em.n_trees,
            em.init_value, em.learning_rate,
        ),
        em.means.astype("<f4").tobytes(),
        em.stds.astype("<f4").tobytes(),
    ]
    node = struct.Struct("<BBHH2xf")
    for t in range(em.n_trees):
        base = int(em._roots[t])
        n_nodes = em.tree_node_counts[t]
        out.append(struct.pack("<H", n_nodes))
        for i in range(n_nodes):
            j = base + i
            if em._is_leaf[j]:
                out.append(node.pack(0xFF, 0, 0, 0, float(em._thresh[j])))
            else:
                out.append(
                    node.pack(int(em._feat[j]), 0,
                              int(em._left[j] - base), int(em._right[j] - base),
                              float(em._thresh[j]))
                )
    return b"".join(out)


class TestLoad:
    def test_bad_magic(self):
        model, _ = toy_model()
        art = bytearray(export(model))
        art[:4] = b"XXXX"
        with pytest.raises(TinyModelError, match="magic"):
            load(bytes(art))

    def test_truncated_payload(self):
        art = export(toy_model()[0])
        with pytest.raises(TinyModelError):
            load(art[: len(art) // 2])

    def test_trailing_garbage_rejected(self):
        art = export(toy_model()[0])
        with pytest.raises(TinyModelError, match="trailing"):
            load(art + b"\x00")

    def test_single_leaf_tree(self):
        art = (
            struct.pack("<4sHBBHff", MAGIC, 1, 0, 1, 1, 2.0, 0.5)
            + np.zeros(1, "<f4").tobytes()
            + np.ones(1, "<f4").tobytes()
            + struct.pack("<H", 1)
            + struct.pack("<BBHH2xf", 0xFF, 0, 0, 0, 3.0)
        )
        em = load(art)
        assert em.infer(np.array([9.9])) == pytest.approx(2.0 + 0.5 * 3.0)

    def test_out_of_range_child_rejected(self):
        art = (
            struct.pack("<4sHBBHff", MAGIC, 1, 0, 1, 1, 0.0, 1.0)
            + np.zeros(1, "<f4").tobytes()
            + np.ones(1, "<f4").tobytes()
            + struct.pack("<H", 2)
            + struct.pack("<BBHH2xf", 0, 0, 1, 7, 0.5)  # right child 7 of 2
            + struct.pack("<BBHH2xf", 0xFF, 0, 0, 0, 1.0)
        )
        with pytest.raises(TinyModelError, match="out of range"):
            load(art)

    def test_cycle_rejected(self):
        art = (
            struct.pack("<4sHBBHff", MAGIC, 1, 0, 1, 1, 0.0, 1.0)
            + np.zeros(1, "<f4").tobytes()
            + np.ones(1, "<f4").tobytes()
            + struct.pack("<H", 2)
            + struct.pack("<BBHH2xf", 0, 0, 0, 1, 0.5)  # left child = itself
            + struct.pack("<BBHH2xf", 0xFF, 0, 0, 0, 1.0)
        )
        with pytest.raises(TinyModelError):
            load(art)

    def test_nan_threshold_rejected(self):
        art = (
            struct.pack("<4sHBBHff", MAGIC, 1, 0, 1, 1, 0.0, 1.0)
            + np.zeros(1, "<f4").tobytes()
            + np.ones(1, "<f4").tobytes()
            + struct.pack("<H", 1)
            + struct.pack("<BBHH2xf", 0xFF, 0, 0, 0, float("nan"))
        )
        with pytest.raises(TinyModelError, match="non-finite"):
            load(art)

    def test_zero_std_rejected(self):
        art = (
            struct.pack("<4sHBBHff", MAGIC, 1, 0, 1, 0, 0.0, 1.0)
            + np.zeros(1, "<f4").tobytes()
            + np.zeros(1, "<f4").tobytes()
        )
        with pytest.raises(TinyModelError, match="stds"):
            load(art)

    def test_fuzz_random_buffers_never_crash(self):
        # loader totality: arbitrary bytes produce a structured error or a
        # valid model, never any other exception
        rng = np.random.default_rng(1234)
        survived = 0
        for _ in range(400):
            size = int(rng.integers(0, 1024))
            buf = rng.integers(0, 256, size, dtype=np.uint8).tobytes()
            try:
                load(buf)
                survived += 1
            except TinyModelError:
                pass
        assert survived == 0  # random 1 KB buffers essentially never validate

    def test_fuzz_mutated_valid_artifacts(self):
        model, X = toy_model()
        art = bytearray(export(model))
        rng = np.random.default_rng(99)
        for _ in range(300):
            mutated = bytearray(art)
            for _ in range(int(rng.integers(1, 8))):
                mutated[int(rng.integers(0, len(mutated)))] = int(rng.integers(0, 256))
            try:
                em = load(bytes(mutated))
                em.infer(np.zeros(em.n_features, dtype=np.float32))
            except TinyModelError:
                pass


class TestInfer:
    def test_boosting_parity_1000_rows(self):
        model, X = toy_model("boosting", n=1200, seed=3)
        em = load(export(model))
        native = model.predict(X[:1000])
        edge = em.infer_batch(X[:1000])
        assert float(np.max(np.abs(native - edge))) <= 1e-5

    def test_forest_parity_1000_rows(self):
        model, X = toy_model("forest", n=1200, seed=4)
        em = load(export(model))
        native = model.predict(X[:1000])
        edge = em.infer_batch(X[:1000])
        assert float(np.max(np.abs(native - edge))) <= 1e-5

    def test_constant_model_always_init(self):
        em = load(export(constant_model(7.5, 2)))
        for x in ([0.0, 0.0], [1e3, -1e3]):
            assert em.infer(np.array(x)) == 7.5

    def test_wrong_arity_rejected(self):
        em = load(export(toy_model()[0]))
        with pytest.raises(TinyModelError, match="arity"):
            em.infer(np.zeros(3))

    def test_non_finite_input_rejected(self):
        em = load(export(toy_model()[0]))
        with pytest.raises(TinyModelError, match="non-finite"):
            em.infer(np.array([1.0, np.nan, 0.0, 0.0]))

    def test_worst_case_node_visits_bound(self):
        model, _ = toy_model("boosting", max_depth=4)
        em = load(export(model))
        assert em.max_depth <= 4
        # the lockstep walk runs exactly max_depth gather rounds over n_trees
        assert em.n_trees * (em.max_depth + 1) >= em.n_trees

    def test_applies_embedded_scaler(self):
        rng = np.random.default_rng(5)
        X = rng.normal(loc=50, scale=10, size=(300, 2))
        y = X[:, 0] * 0.5
        from edgefarm.telemetry import fit_scaler, standardize
        scaler = fit_scaler(X)
        model = fit_gradient_boosting(
            standardize(X, scaler), y, GradientBoostingParams(n_estimators=10), seed=0, scaler=scaler
        )
        em = load(export(model))
        # raw inputs: the artifact standardizes internally
        assert em.infer(X[0].astype(np.float32)) == pytest.approx(model.predict(X[:1])[0], abs=1e-4)


class TestQuantize:
    def test_i16_grid_roundtrip_of_leaf(self):
        # one leaf 5.0 with scale 5/32767: dequantized within one grid step
        art = export(constant_model(0.0, 1))
        model, X = toy_model()
        q = quantize(export(model), "i16")
        em = load(q)
        emf = load(export(model))
        d = abs(em.infer(X[0]) - emf.infer(X[0]))
        assert d < 1e-2

    def test_i16_shrinks_at_least_35pct(self):
        model, _ = toy_model()
        art = export(model)
        q = quantize(art, "i16")
        assert len(q) <= 0.65 * len(art)

    def test_f16_shrinks_at_least_35pct(self):
        model, _ = toy_model()
        art = export(model)
        q = quantize(art, "f16")
        assert len(q) <= 0.65 * len(art)

    def test_quantized_rmse_within_2pct(self):
        model, X = toy_model("boosting", n=2000, seed=8)
        art = export(model)
        base = load(art).infer_batch(X[:800])
        for mode in ("i16", "f16"):
            qpred = load(quantize(art, mode)).infer_batch(X[:800])
            rel = np.sqrt(np.mean((qpred - base) ** 2)) / np.sqrt(np.mean(base**2))
            assert rel <= 0.02, mode

    def test_version_flagged_in_header(self):
        model, _ = toy_model()
        art = export(model)
        assert inspect_artifact(quantize(art, "f16"))["version"] == 2
        assert inspect_artifact(quantize(art, "i16"))["version"] == 3

    def test_f16_range_exceeded_rejected(self):
        model = constant_model(0.0, 1)
        model.trees = []
        art = export(toy_model()[0])
        # scale a leaf beyond float16 range by hacking the model
        big, _ = toy_model()
        big.init_value = 0.0
        for t in big.trees:
            t.value *= 1e7
            t.threshold *= 1.0
        with pytest.raises(TinyModelError, match="float16"):
            quantize(export(big), "f16")

    def test_unknown_mode_rejected(self):
        with pytest.raises(TinyModelError):
            quantize(export(toy_model()[0]), "i8")

    def test_quantize_requires_v1(self):
        q = quantize(export(toy_model()[0]), "i16")
        with pytest.raises(TinyModelError):
            quantize(q, "i16")


class TestInspect:
    def test_header_fields_and_node_counts(self):
        model, _ = toy_model()
        info = inspect_artifact(export(model))
        assert info["magic"] == "TML1"
        assert info["version"] == 1
        assert info["model_kind"] == "boosting"
        assert info["n_trees"] == 20
        assert len(info["tree_node_counts"]) == 20
        assert all(c >= 1 for c in info["tree_node_counts"])
