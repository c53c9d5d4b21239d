import warnings

import numpy as np
import pytest

from trajcast.data import (AgentTrack, IncompleteTrackWarning, Scenario, TrackParseError, group_scenarios,
                           load_tracks, save_scenarios, scenario_arrays, to_relative_frame, to_world_frame,
                           translate, window)
from trajcast.maps import HdMap, save_map
from trajcast.synthetic import generate_synthetic


def write(tmp_path, text, name="tracks.txt"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_plain_text_windows_and_renumbering(tmp_path):
    # frame ids step by 10 (sparse annotation); two agents always present
    lines = ["# frame agent x y"]
    for k, f in enumerate(range(0, 60, 10)):
        lines += [f"{f} 1 {k}.0 0.0", f"{f} 2 0.0 {k}.5"]
    p = write(tmp_path, "\n".join(lines) + "\n")
    scen = load_tracks(p, t_obs=2, t_pred=4, stride=1, ego_id=None)
    assert len(scen) == 3
    s = scen[1]
    assert s.scenario_id == "tracks:10"
    assert list(s.track(1).frames) == [1, 2, 3, 4]
    np.testing.assert_array_equal(s.track(1).xy[:, 0], [1, 2, 3, 4])
    assert s.ego_id is None


def test_plain_text_drops_incomplete_agents(tmp_path):
    rows = []
    for f in range(1, 7):
        rows.append(f"{f} 0 {f} 0")
        if f >= 2:                       # agent 5 misses frame 1
            rows.append(f"{f} 5 0 {f}")
    p = write(tmp_path, "\n".join(rows))
    with pytest.warns(IncompleteTrackWarning) as rec:
        scen = load_tracks(p, t_obs=3, t_pred=6)
    assert rec[0].message.count == 1
    assert scen[0].agent_ids == [0] and scen[0].dropped_agents == 1


def test_agent_with_gap_in_future_is_kept_but_unscored(tmp_path):
    rows = [f"{f} 0 {f} 0" for f in range(1, 7)] + [f"{f} 1 0 {f}" for f in (1, 2, 3, 4, 6)]
    scen = load_tracks(write(tmp_path, "\n".join(rows)), t_obs=3, t_pred=6)
    arr = scenario_arrays(scen[0])
    assert list(arr.targets) == [True, False]
    assert np.isnan(arr.future[1, 1]).all() and not np.isnan(arr.future[1, 0]).any()


@pytest.mark.parametrize("text,match", [
    ("1 2 3\n", "expected"),
    ("1 2 x 4\n", "non-numeric"),
    ("1 2 nan 4\n", "non-finite"),
])
def test_parse_errors_report_line(tmp_path, text, match):
    p = write(tmp_path, "# header\n" + text)
    with pytest.raises(TrackParseError, match=match) as exc:
        load_tracks(p)
    assert exc.value.lineno == 2


def test_missing_file_and_unknown_format(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_tracks(tmp_path / "nope.txt")
    with pytest.raises(ValueError, match="format"):
        load_tracks(write(tmp_path, "1 1 0 0\n"), format="csv")


def test_json_round_trip(tmp_path):
    scen = generate_synthetic("ego_with_plan", 3, seed=4)
    save_scenarios(tmp_path / "s.jsonl", scen)
    back = load_tracks(tmp_path / "s.jsonl", format="scenario_json")
    assert len(back) == 3
    for a, b in zip(scen, back):
        assert a.scenario_id == b.scenario_id and a.ego_id == b.ego_id and a.group == b.group
        for ta, tb in zip(a.tracks, b.tracks):
            assert np.array_equal(ta.xy, tb.xy) and np.array_equal(ta.frames, tb.frames)
        assert np.array_equal(a.ego_plan, b.ego_plan)
        for la, lb in zip(a.hd_map.centerlines, b.hd_map.centerlines):
            assert np.array_equal(la, lb)


def test_json_external_map(tmp_path):
    save_map(tmp_path / "m.json", HdMap(([[0, 0], [10, 0]],)))
    doc = ('{"id": "a", "t_obs": 2, "t_pred": 3, "map": "m.json", '
           '"tracks": [{"id": 0, "points": [[1, 0, 0], [2, 1, 0], [3, 2, 0]]}]}')
    s = load_tracks(write(tmp_path, doc, "a.json"), format="scenario_json")[0]
    assert s.hd_map.centerlines[0].shape == (2, 2) and s.map_ref == "m.json"


def test_json_bad_line_reports_line(tmp_path):
    p = write(tmp_path, '{"id": "a", "t_obs": 1, "t_pred": 2, "tracks": []}\n{oops\n', "x.jsonl")
    with pytest.raises(TrackParseError) as exc:
        load_tracks(p, format="scenario_json")
    assert exc.value.lineno == 2


def test_plain_text_round_trip(tmp_path):
    scen = generate_synthetic("crossing_pedestrians", 2, seed=1)
    save_scenarios(tmp_path / "p.txt", scen, format="plain_text")
    back = load_tracks(tmp_path / "p.txt", t_obs=6, t_pred=12, stride=12, ego_id=None)
    assert len(back) == 2
    for a, b in zip(scen, back):
        for ta, tb in zip(a.tracks, b.tracks):
            assert np.array_equal(ta.xy, tb.xy)


def test_scenario_validation():
    tr = AgentTrack(0, [1, 2, 3], np.zeros((3, 2)))
    with pytest.raises(ValueError):
        Scenario((tr,), 3, 3)
    with pytest.raises(ValueError, match="plan"):
        Scenario((tr,), 2, 3, ego_id=0, ego_plan=np.zeros((2, 2)))
    with pytest.raises(ValueError, match="cover"):
        Scenario((AgentTrack(0, [2, 3], np.zeros((2, 2))),), 2, 3)
    with pytest.raises(ValueError, match="increasing"):
        AgentTrack(0, [2, 1], np.zeros((2, 2)))


def test_relative_frame_round_trip_and_windows():
    s = generate_synthetic("ego_with_plan", 1, seed=9, world_offset=1000.0)[0]
    rel = to_relative_frame(s)
    assert np.array_equal(rel.track(0).position(s.t_obs), [0.0, 0.0])
    back = to_world_frame(rel)
    np.testing.assert_allclose(back.track(3).xy, s.track(3).xy, atol=1e-9)
    obs, fut = window(s)
    assert [f.t for f in obs] == list(range(1, 7)) and [f.t for f in fut] == list(range(7, 13))
    assert translate(s, (0, 0)).origin == s.origin


def test_plan_excludes_ego_from_targets_and_groups():
    s = generate_synthetic("ego_with_plan", 2, seed=0, group="A")
    arr = scenario_arrays(s[0])
    assert arr.ego_index == 0 and not arr.targets[0] and arr.targets[1:].all()
    assert list(group_scenarios(s)) == ["A"]
