import pytest

from poselift.exceptions import ConfigInvalid
from poselift.skeleton import Skeleton, default_skeleton, load_skeleton


def test_default_skeleton_layout():
    sk = default_skeleton()
    assert sk.joint_count == 17
    assert sk.joint_names[sk.root_index] == "pelvis"
    assert len(sk.edges) == 16
    assert sk.parents()[sk.root_index] == -1


def test_topological_order_visits_parents_first():
    sk = default_skeleton()
    placed = {sk.root_index}
    for p, c in sk.topological_edges():
        assert p in placed
        placed.add(c)
    assert placed == set(range(17))


def test_round_trip_through_file(tmp_path):
    import json
    path = tmp_path / "sk.json"
    path.write_text(json.dumps(default_skeleton().to_dict()))
    assert load_skeleton(path) == default_skeleton()


@pytest.mark.parametrize("names,root,edges", [
    (("a", "a", "b"), 0, ((0, 1), (0, 2))),
    (("a", "b", "c"), 0, ((0, 1),)),
    (("a", "b", "c"), 0, ((0, 1), (2, 1))),
    (("a", "b", "c"), 0, ((1, 2), (2, 1))),
    (("a", "b"), 5, ((0, 1),)),
])
def test_invalid_skeletons_rejected(names, root, edges):
    with pytest.raises(ConfigInvalid):
        Skeleton(names, root, edges)
