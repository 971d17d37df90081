import itertools
import json

import numpy as np
import pytest

from auxlearn import composition as CP
from auxlearn import model as M
from auxlearn.errors import DomainError, ParseError, RoutingError

from oracles import block_features, block_model

K = 3
N_BLOCKS = 4  # animals, cat breeds, birds, vehicles


def node(name, block, names, aux=None, successors=None):
    return CP.ClassifierNode(name, block_model(block, N_BLOCKS, K), names, aux, successors or {})


@pytest.fixture
def system():
    cat_breeds = node("cat_breeds", 1, ["siamese", "persian", "tabby"])
    animals = node("animals", 0, ["cat", "dog", "others"], aux=2, successors={0: cat_breeds})
    birds = node("birds", 2, ["parrot", "crow", "others"], aux=2)
    vehicles = node("vehicles", 3, ["car", "ship", "others"], aux=2)
    return animals, birds, vehicles


def feats(animal=0, breed=0, bird=0, vehicle=0):
    return block_features([animal, breed, bird, vehicle], K)


class TestHierarchy:

    def test_leaf(self, system):
        trace = CP.route_hierarchy(system[0], feats(animal=1))
        assert trace.steps == (("animals", "dog"),)
        assert trace.final_label == "dog"

    def test_succession(self, system):
        trace = CP.route_hierarchy(system[0], feats(animal=0, breed=0))
        assert trace.steps == (("animals", "cat"), ("cat_breeds", "siamese"))
        assert trace.final_label == "siamese"

    def test_auxiliary_terminates(self, system):
        trace = CP.route_hierarchy(system[0], feats(animal=2))
        assert trace.steps == (("animals", "others"),)
        assert trace.final_label == "others"

    def test_dimension_mismatch_names_node(self, system):
        with pytest.raises(RoutingError) as info:
            CP.route_hierarchy(system[0], np.zeros(5))
        assert info.value.node == "animals"

    def test_deterministic(self, system):
        x = feats(animal=0, breed=2)
        assert CP.route_hierarchy(system[0], x) == CP.route_hierarchy(system[0], x)


class TestConstruction:

    def test_auxiliary_cannot_have_successor(self):
        child = node("c", 1, ["a", "b", "c"])
        with pytest.raises(DomainError):
            node("root", 0, ["x", "y", "z"], aux=2, successors={2: child})

    @pytest.mark.parametrize("aux, succ", [(3, {}), (None, {5: None}), (-1, {})])
    def test_indices_in_range(self, aux, succ):
        succ = {k: node("c", 1, ["a", "b", "c"]) for k in succ}
        with pytest.raises(DomainError):
            node("root", 0, ["x", "y", "z"], aux=aux, successors=succ)

    def test_class_names_match_model(self):
        with pytest.raises(DomainError):
            node("root", 0, ["x", "y"])

    def test_chain_needs_auxiliary_except_last(self, system):
        plain = node("plain", 0, ["a", "b", "c"])
        CP.FusionChain([system[0], plain])
        with pytest.raises(DomainError):
            CP.FusionChain([plain, system[1]])
        with pytest.raises(DomainError):
            CP.FusionChain([])


class TestChain:

    def test_single_node(self, system):
        trace = CP.route_chain(CP.FusionChain([system[0]]), feats(animal=0, breed=1))
        assert trace.final_label == "persian"
        trace = CP.route_chain(CP.FusionChain([system[0]]), feats(animal=1))
        assert trace.final_label == "dog"

    def test_fusion_hand_off(self, system):
        chain = CP.FusionChain(system[:2])
        trace = CP.route_chain(chain, feats(animal=2, bird=0))
        assert trace.final_label == "parrot"
        assert trace.roots == ("animals", "birds")
        assert trace.steps == (("animals", "others"), ("birds", "parrot"))

    def test_all_auxiliary(self, system):
        trace = CP.route_chain(CP.FusionChain(system), feats(animal=2, bird=2, vehicle=2))
        assert trace.final_label == "Others"
        assert trace.roots == ("animals", "birds", "vehicles")

    def test_prefix_property_exhaustive(self, system):
        chain = CP.FusionChain(system)
        names = [n.name for n in chain.nodes]
        for choice in itertools.product(range(K), repeat=N_BLOCKS):
            trace = CP.route_chain(chain, feats(*choice))
            assert list(trace.roots) == names[:len(trace.roots)]
            root_steps = [s[0] for s in trace.steps if s[0] in names]
            assert root_steps == list(trace.roots)
            # stops at the first root that does not resolve to its auxiliary class
            stop = next((i for i, c in enumerate((choice[0], choice[2], choice[3])) if c != 2), None)
            assert len(trace.roots) == (stop + 1 if stop is not None else 3)

    def test_reachable_labels_exhaustive(self, system):
        chain = CP.FusionChain(system)
        seen = {CP.route_chain(chain, feats(*c)).final_label for c in itertools.product(range(K), repeat=N_BLOCKS)}
        assert seen == CP.reachable_labels(chain)
        assert seen == {"siamese", "persian", "tabby", "dog", "parrot", "crow", "car", "ship", "Others"}

    def test_dimension_mismatch(self, system):
        with pytest.raises(RoutingError):
            CP.route_chain(CP.FusionChain(system), np.zeros(2))


def _write_system(tmp_path, doc_overrides=None):
    for name, block in [("animals", 0), ("cat_breeds", 1), ("birds", 2)]:
        M.save_checkpoint(block_model(block, N_BLOCKS, K), tmp_path / f"{name}.ckpt")
    doc = {
        "version": 1,
        "fallback_label": "Unknown",
        "chain": ["animals", "birds"],
        "nodes": {
            "animals": {"checkpoint": "animals.ckpt", "class_names": ["cat", "dog", "others"],
                        "auxiliary_class": 2, "successors": {"cat": "cat_breeds"}},
            "cat_breeds": {"checkpoint": "cat_breeds.ckpt", "class_names": ["siamese", "persian", "tabby"]},
            "birds": {"checkpoint": "birds.ckpt", "class_names": ["parrot", "crow", "others"],
                      "auxiliary_class": 2},
        },
    }
    doc.update(doc_overrides or {})
    path = tmp_path / "chain.json"
    path.write_text(json.dumps(doc))
    return path, doc


class TestDescriptionFile:

    def test_load_and_route(self, tmp_path):
        path, _ = _write_system(tmp_path)
        chain = CP.load_description(path)
        assert CP.route_chain(chain, feats(animal=0, breed=2)).final_label == "tabby"
        assert CP.route_chain(chain, feats(animal=2, bird=2)).final_label == "Unknown"

    def test_cycle_rejected(self, tmp_path):
        path, doc = _write_system(tmp_path)
        doc["nodes"]["cat_breeds"]["successors"] = {"0": "animals"}
        path.write_text(json.dumps(doc))
        with pytest.raises(DomainError, match="cycle"):
            CP.load_description(path)

    def test_unknown_node(self, tmp_path):
        path, _ = _write_system(tmp_path, {"chain": ["animals", "fish"]})
        with pytest.raises(ParseError):
            CP.load_description(path)

    def test_bad_json(self, tmp_path):
        p = tmp_path / "x.json"
        p.write_text("{not json")
        with pytest.raises(ParseError):
            CP.load_description(p)

    def test_auxiliary_successor_rejected(self, tmp_path):
        path, doc = _write_system(tmp_path)
        doc["nodes"]["animals"]["successors"] = {"others": "birds"}
        path.write_text(json.dumps(doc))
        with pytest.raises(DomainError):
            CP.load_description(path)
