import xml.etree.ElementTree as ET

import numpy as np

from scenemotion.forecast import Forecast, ground_truth_forecast
from scenemotion.plot import scene_svg

NS = "{http://www.w3.org/2000/svg}"


def _parse(text):
    root = ET.fromstring(text.split("?>", 1)[1])
    vb = [float(v) for v in root.get("viewBox").split()]
    return root, vb


def test_svg_is_well_formed_with_all_layers(synthetic_scenes):
    s = synthetic_scenes[0]
    root, _ = _parse(scene_svg(s, ground_truth_forecast(s)))
    assert root.tag == NS + "svg"
    groups = {g.get("id") for g in root.iter(NS + "g")}
    assert groups == {"map", "agents", "forecast", "clusters"}
    assert len(root.find(f"{NS}g[@id='map']")) == len(s.map)
    assert len(root.find(f"{NS}g[@id='forecast']")) == 6 * len(s.focal_ids)


def test_empty_forecast_gives_map_only_image(synthetic_scenes):
    s = synthetic_scenes[1]
    empty = Forecast(s.scenario_id, (), np.zeros((6, 0, 80, 5)), np.zeros(6), np.zeros((0, 3)))
    for fc in (None, empty):
        root, _ = _parse(scene_svg(s, fc))
        groups = {g.get("id") for g in root.iter(NS + "g")}
        assert groups == {"map", "agents"}


def test_waypoints_inside_view_box(synthetic_scenes):
    s = synthetic_scenes[2]
    fc = ground_truth_forecast(s)
    fc.traj_params[..., 0] += np.linspace(0, 400, 6)[:, None, None]  # push modes far out
    root, (x0, y0, w, h) = _parse(scene_svg(s, fc))
    n = 0
    for pl in root.find(f"{NS}g[@id='forecast']"):
        for pair in pl.get("points").split():
            x, y = map(float, pair.split(","))
            assert x0 <= x <= x0 + w and y0 <= y <= y0 + h
            n += 1
    assert n == 6 * len(s.focal_ids) * 80
