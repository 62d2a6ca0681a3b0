"""Static SVG rendering of a scene with its forecast.

Coordinates are written in metres with the y axis flipped (SVG y grows
downwards), i.e. a world point (x, y) appears at (x, -y) in the image.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET

import numpy as np

from .forecast import Forecast
from .interaction import cluster_timestep
from .scenario import TrafficScenario, rotation

MODE_COLOURS = ("#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf")
MAP_COLOURS = {"lane": "#bbbbbb", "road_marking": "#555555", "crosswalk": "#e6c300", "speed_bump": "#8c564b", "stop_sign": "#cc0000"}


def _pts(xy) -> str:
    return " ".join(f"{x:.3f},{-y:.3f}" for x, y in xy)


def _box(x, y, heading, length, width):
    R = rotation(heading)
    corners = np.array([[length, width], [length, -width], [-length, -width], [-length, width]]) / 2.0
    return corners @ R.T + (x, y)


def view_box(scenario: TrafficScenario, forecast: Forecast | None = None, margin: float = 5.0):
    """(min_x, min_y, width, height) in image coordinates covering map, agents and forecast."""
    pts = [p.nodes for p in scenario.map]
    pts += [a.positions[a.valid] for a in scenario.agents if a.valid.any()]
    if forecast is not None and forecast.traj_params.size:
        pts.append(forecast.global_means().reshape(-1, 2))
    pts = [p for p in pts if len(p)]
    if not pts:
        return (-margin, -margin, 2 * margin, 2 * margin)
    allp = np.concatenate(pts)
    lo, hi = allp.min(axis=0) - margin, allp.max(axis=0) + margin
    return (float(lo[0]), float(-hi[1]), float(hi[0] - lo[0]), float(hi[1] - lo[1]))


def scene_svg(scenario: TrafficScenario, forecast: Forecast | None = None, eps: float = 2.5) -> str:
    """Map polylines, agent boxes with their past, forecast modes and merged waypoint clusters."""
    vb = view_box(scenario, forecast)
    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", viewBox=" ".join(f"{v:.3f}" for v in vb),
                     width="800", height=f"{800 * vb[3] / max(vb[2], 1e-9):.0f}")
    ET.SubElement(svg, "title").text = scenario.scenario_id
    g_map = ET.SubElement(svg, "g", id="map", fill="none")
    for p in scenario.map:
        ET.SubElement(g_map, "polyline", points=_pts(p.nodes), stroke=MAP_COLOURS.get(p.kind, "#999999"),
                      **{"stroke-width": "0.3"})
    cur = scenario.current_index
    focal = set(scenario.focal_ids)
    g_ag = ET.SubElement(svg, "g", id="agents")
    for a in scenario.agents:
        past = a.positions[: cur + 1][a.valid[: cur + 1]]
        if len(past) > 1:
            ET.SubElement(g_ag, "polyline", points=_pts(past), fill="none", stroke="#777777",
                          **{"stroke-width": "0.2"})
        if a.valid[cur]:
            x, y, h = a.states[cur, :3]
            ET.SubElement(g_ag, "polygon", points=_pts(_box(x, y, h, a.length, a.width)),
                          fill="#333333" if a.agent_id in focal else "#aaaaaa")
    if forecast is not None and forecast.traj_params.size:
        means = forecast.global_means()
        probs = forecast.probabilities()
        g_fc = ET.SubElement(svg, "g", id="forecast", fill="none")
        for k in range(means.shape[0]):
            colour = MODE_COLOURS[k % len(MODE_COLOURS)]
            opacity = f"{0.3 + 0.7 * probs[k] / probs.max():.3f}"
            for i in range(means.shape[1]):
                ET.SubElement(g_fc, "polyline", points=_pts(means[k, i]), stroke=colour, opacity=opacity,
                              **{"stroke-width": "0.25", "data-mode": str(k), "data-agent": forecast.focal_ids[i]})
        g_cl = ET.SubElement(svg, "g", id="clusters", fill="none", stroke="#000000")
        for t in range(means.shape[2]):
            for cl in cluster_timestep(means, t, eps=eps):
                xy = means[list(cl.modes), list(cl.agents), t]
                c = xy.mean(axis=0)
                r = max(float(np.linalg.norm(xy - c, axis=1).max()), 0.5)
                ET.SubElement(g_cl, "circle", cx=f"{c[0]:.3f}", cy=f"{-c[1]:.3f}", r=f"{r:.3f}",
                              **{"stroke-width": "0.15", "data-t": str(t)})
    return ET.tostring(svg, encoding="unicode", xml_declaration=True) + "\n"

