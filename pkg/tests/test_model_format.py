import numpy as np
import pytest

from fedfleet.model_format import (
    PLATFORM_INDEX_KEYED,
    PLATFORM_NAME_KEYED,
    Arch,
    CanonicalModel,
    MissingLayer,
    ModelFormatError,
    ShapeMismatch,
    Tensor,
    UnknownLayer,
    canonical_json,
    decode_from_platform,
    encode_for_platform,
    from_document,
    layers_from_shapes,
    new_linear_model,
    new_mlp_model,
    to_document,
    validate_model,
)


def tiny_linear() -> CanonicalModel:
    layers = layers_from_shapes([("w", [2]), ("b", [1])])
    return CanonicalModel("m", 1, Arch("linear"), layers, np.array([1.0, 2.0, 3.0]))


def random_model(rng: np.random.Generator) -> CanonicalModel:
    n_layers = int(rng.integers(1, 6))
    shapes = []
    for i in range(n_layers):
        ndim = int(rng.integers(1, 4))
        shapes.append((f"layer{i}", [int(rng.integers(1, 5)) for _ in range(ndim)]))
    layers = layers_from_shapes(shapes)
    total = sum(s.length for s in layers)
    return CanonicalModel("rand", 1, Arch("linear"), layers, rng.standard_normal(total))


class TestEncode:
    def test_name_keyed_slices_by_name(self):
        enc = encode_for_platform(tiny_linear(), PLATFORM_NAME_KEYED)
        assert set(enc.named) == {"w", "b"}
        assert enc.named["w"].values.tolist() == [1.0, 2.0]
        assert enc.named["b"].values.tolist() == [3.0]

    def test_index_keyed_slices_by_position(self):
        enc = encode_for_platform(tiny_linear(), PLATFORM_INDEX_KEYED)
        assert [(i, t.values.tolist()) for i, t in enc.indexed] == [(0, [1.0, 2.0]), (1, [3.0])]

    def test_unknown_platform_rejected(self):
        with pytest.raises(ModelFormatError):
            encode_for_platform(tiny_linear(), "CoreFoo")


class TestDecode:
    def test_name_keyed_is_order_insensitive(self):
        model = tiny_linear()
        enc = encode_for_platform(model, PLATFORM_NAME_KEYED)
        reversed_map = dict(reversed(list(enc.named.items())))
        enc.named = reversed_map
        assert decode_from_platform(enc, model.spec_only()).tolist() == [1.0, 2.0, 3.0]

    def test_index_keyed_pairs_may_arrive_shuffled(self):
        model = tiny_linear()
        enc = encode_for_platform(model, PLATFORM_INDEX_KEYED)
        enc.indexed = list(reversed(enc.indexed))
        assert decode_from_platform(enc, model.spec_only()).tolist() == [1.0, 2.0, 3.0]

    def test_missing_layer(self):
        model = tiny_linear()
        enc = encode_for_platform(model, PLATFORM_NAME_KEYED)
        del enc.named["b"]
        with pytest.raises(MissingLayer):
            decode_from_platform(enc, model.spec_only())

    def test_unknown_layer(self):
        model = tiny_linear()
        enc = encode_for_platform(model, PLATFORM_NAME_KEYED)
        enc.named["extra"] = Tensor((1,), np.array([9.0]))
        with pytest.raises(UnknownLayer):
            decode_from_platform(enc, model.spec_only())

    def test_shape_mismatch(self):
        model = tiny_linear()
        enc = encode_for_platform(model, PLATFORM_NAME_KEYED)
        enc.named["w"] = Tensor((1, 2), enc.named["w"].values)
        with pytest.raises(ShapeMismatch):
            decode_from_platform(enc, model.spec_only())

    def test_decoding_is_pure(self):
        model = tiny_linear()
        enc = encode_for_platform(model, PLATFORM_INDEX_KEYED)
        first = decode_from_platform(enc, model.spec_only())
        second = decode_from_platform(enc, model.spec_only())
        assert np.array_equal(first, second)


class TestRoundTrip:
    def test_round_trip_bit_exact_both_platforms(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            model = random_model(rng)
            for platform in (PLATFORM_NAME_KEYED, PLATFORM_INDEX_KEYED):
                enc = encode_for_platform(model, platform)
                decoded = decode_from_platform(enc, model.spec_only())
                assert np.array_equal(decoded, model.params)

    def test_cross_platform_equivalence(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            model = random_model(rng)
            via_name = decode_from_platform(
                encode_for_platform(model, PLATFORM_NAME_KEYED), model.spec_only()
            )
            via_index = decode_from_platform(
                encode_for_platform(model, PLATFORM_INDEX_KEYED), model.spec_only()
            )
            assert np.array_equal(via_name, via_index)


class TestValidate:
    def test_valid_model_has_no_violations(self):
        assert validate_model(tiny_linear()) == []

    def test_duplicate_name(self):
        layers = layers_from_shapes([("w", [2]), ("w", [1])])
        model = CanonicalModel("m", 1, Arch("linear"), layers, np.zeros(3))
        assert any(v.code == "DuplicateName" for v in validate_model(model))

    def test_length_mismatch(self):
        model = tiny_linear()
        model.params = np.array([1.0, 2.0])
        assert any(v.code == "LengthMismatch" for v in validate_model(model))

    def test_empty_layers(self):
        model = CanonicalModel("m", 1, Arch("linear"), [], np.zeros(0))
        assert any(v.code == "EmptyLayers" for v in validate_model(model))

    def test_bad_version(self):
        model = tiny_linear()
        model.version = 0
        assert any(v.code == "BadVersion" for v in validate_model(model))

    def test_noncontiguous_offsets(self):
        layers = layers_from_shapes([("w", [2]), ("b", [1])])
        bad = [layers[0], type(layers[1])("b", (1,), 5)]
        model = CanonicalModel("m", 1, Arch("linear"), bad, np.zeros(3))
        assert any(v.code == "BadOffset" for v in validate_model(model))


class TestDocument:
    def test_document_round_trip(self):
        model = new_mlp_model("clf", n_features=3, hidden=4, n_classes=2, seed=5)
        doc = to_document(model)
        back = from_document(doc)
        assert validate_model(back) == []
        assert back.model_id == model.model_id
        assert back.arch == model.arch
        assert np.array_equal(back.params, model.params)
        assert [(s.name, s.shape, s.offset) for s in back.layers] == [
            (s.name, s.shape, s.offset) for s in model.layers
        ]

    def test_document_omits_offsets(self):
        doc = to_document(tiny_linear())
        assert all("offset" not in entry for entry in doc["layers"])

    def test_canonical_json_ignores_key_order(self):
        doc = to_document(tiny_linear())
        reordered = dict(reversed(list(doc.items())))
        assert canonical_json(doc) == canonical_json(reordered)

    def test_malformed_documents_rejected(self):
        with pytest.raises(ModelFormatError):
            from_document({"model_id": "x", "version": 1})
        with pytest.raises(ModelFormatError):
            from_document({"model_id": "x", "version": "1", "arch": {"kind": "linear"}, "layers": []})
        with pytest.raises(ModelFormatError):
            from_document(
                {"model_id": "x", "version": 1, "arch": {"kind": "mlp"}, "layers": [], "params": []}
            )


class TestConstructors:
    def test_linear_model_zero_init(self):
        model = new_linear_model("lin", 2)
        assert model.params.tolist() == [0.0, 0.0, 0.0]
        assert validate_model(model) == []

    def test_mlp_model_seeded_init(self):
        a = new_mlp_model("clf", 3, 4, 2, seed=9)
        b = new_mlp_model("clf", 3, 4, 2, seed=9)
        assert np.array_equal(a.params, b.params)
        assert np.all(np.abs(a.params) <= 0.1)
        assert validate_model(a) == []
