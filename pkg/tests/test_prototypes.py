import json

import numpy as np
import pytest

from zsmil.errors import (
    DimMismatch,
    DuplicateClass,
    EmptyTemplates,
    EnsembleDegenerate,
    SidecarMismatch,
)
from zsmil.prototypes import (
    PrototypeSet,
    TemplateEmbeddings,
    ensemble,
    load_prototypes,
    load_template_embeddings,
    save_prototypes,
)


def unit(v):
    v = np.asarray(v, dtype=np.float64)
    return v / np.linalg.norm(v)


class TestEnsemble:
    def test_single_template_passthrough(self):
        a = unit([1.0, 2.0, 2.0])
        b = unit([0.0, 1.0, 0.0])
        protos = ensemble([TemplateEmbeddings("a", a[None, :]),
                           TemplateEmbeddings("b", b[None, :])])
        np.testing.assert_allclose(protos.weights, np.vstack([a, b]), atol=1e-15)

    def test_orthogonal_pair(self):
        # normalize(mean([1,0],[0,1])) = [1,1]/sqrt(2)
        t = TemplateEmbeddings("c", np.array([[1.0, 0.0], [0.0, 1.0]]))
        other = TemplateEmbeddings("d", np.array([[0.0, -1.0]]))
        protos = ensemble([t, other])
        expected = 0.7071067811865475
        np.testing.assert_allclose(protos.weights[0], [expected, expected], rtol=1e-15)

    def test_exact_cancellation_degenerate(self):
        v = np.array([0.3, -0.4, 0.5])
        t = TemplateEmbeddings("c", np.vstack([v, -v]))
        other = TemplateEmbeddings("d", np.array([[1.0, 0.0, 0.0]]))
        with pytest.raises(EnsembleDegenerate):
            ensemble([t, other])

    def test_scale_invariance(self):
        rng = np.random.default_rng(2)
        base = rng.standard_normal((3, 8))
        scales = np.array([0.01, 5.0, 300.0])[:, None]
        a = ensemble([TemplateEmbeddings("a", base),
                      TemplateEmbeddings("b", rng.standard_normal((2, 8)))])
        b = ensemble([TemplateEmbeddings("a", base * scales),
                      TemplateEmbeddings("b", a.weights[1][None, :] * 7.0)])
        np.testing.assert_allclose(a.weights[0], b.weights[0], atol=1e-12)

    def test_template_order_irrelevant(self):
        rng = np.random.default_rng(4)
        rows = rng.standard_normal((5, 12))
        other = TemplateEmbeddings("o", rng.standard_normal((1, 12)))
        forward_order = ensemble([TemplateEmbeddings("a", rows), other])
        reversed_order = ensemble([TemplateEmbeddings("a", rows[::-1].copy()), other])
        np.testing.assert_allclose(forward_order.weights, reversed_order.weights,
                                   atol=1e-12)

    def test_rows_unit_regardless_of_scale(self):
        rng = np.random.default_rng(5)
        per_class = [TemplateEmbeddings(f"c{i}", rng.standard_normal((4, 6)) * 10.0 ** i)
                     for i in range(3)]
        protos = ensemble(per_class)
        norms = np.linalg.norm(protos.weights, axis=1)
        np.testing.assert_allclose(norms, 1.0, atol=1e-12)

    def test_errors(self):
        a = TemplateEmbeddings("a", np.eye(3)[:1])
        with pytest.raises(EmptyTemplates):
            ensemble([])
        with pytest.raises(EmptyTemplates):
            TemplateEmbeddings("x", np.zeros((0, 3)))
        with pytest.raises(DuplicateClass):
            ensemble([a, TemplateEmbeddings("a", np.eye(3)[1:2])])
        with pytest.raises(DimMismatch):
            ensemble([a, TemplateEmbeddings("b", np.eye(4)[:1])])


class TestPrototypeIO:
    def _protos(self):
        rng = np.random.default_rng(9)
        w = rng.standard_normal((3, 16))
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        return PrototypeSet(["alpha", "beta", "gamma"], w, temperature_default=0.05)

    def test_round_trip(self, tmp_path):
        protos = self._protos()
        save_prototypes(protos, tmp_path / "protos")
        again = load_prototypes(tmp_path / "protos")
        assert again.class_names == protos.class_names
        assert again.temperature_default == 0.05
        # float32 storage plus renormalization on load
        np.testing.assert_allclose(again.weights, protos.weights, atol=1e-6)
        np.testing.assert_allclose(np.linalg.norm(again.weights, axis=1), 1.0,
                                   atol=1e-12)

    def test_sidecar_mismatch(self, tmp_path):
        protos = self._protos()
        save_prototypes(protos, tmp_path / "protos")
        sidecar = json.loads((tmp_path / "protos.json").read_text())
        sidecar["class_names"] = sidecar["class_names"][:2]
        (tmp_path / "protos.json").write_text(json.dumps(sidecar))
        with pytest.raises(SidecarMismatch):
            load_prototypes(tmp_path / "protos")

    def test_template_index_round_trip(self, tmp_path):
        from zsmil.dataio import write_embeddings

        rng = np.random.default_rng(1)
        index = {"schema_version": 1, "classes": []}
        for name in ("one", "two"):
            m = rng.standard_normal((3, 8))
            write_embeddings(m, tmp_path / f"{name}.zsml")
            index["classes"].append({"class_name": name, "path": f"{name}.zsml"})
        (tmp_path / "templates.json").write_text(json.dumps(index))
        loaded = load_template_embeddings(tmp_path / "templates.json")
        assert [t.class_name for t in loaded] == ["one", "two"]
        assert loaded[0].vectors.shape == (3, 8)
        protos = ensemble(loaded)
        assert protos.n_classes == 2
