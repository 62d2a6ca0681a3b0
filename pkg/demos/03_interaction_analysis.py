"""Which agents interact? Clustering forecast waypoints.

Uses the checkpoint written by ``02_train_and_evaluate.py``. For every
future step the forecast waypoints are clustered with DBSCAN; an agent counts
as clustered when one of its waypoints shares a cluster with another agent's.
Comparing the within-mode average with the random-assignment baseline asks
whether the modes are scene-consistent: if every mode is a coherent joint
future, its agents should meet no more often than agents drawn from random
modes. A model fit to four scenes only trains the winning mode of each scene
well, so its other modes may well fail that test. The first scene with a
cluster is listed and drawn to an SVG file.

    python demos/03_interaction_analysis.py [--out demo_out]
"""

import argparse
import os
import sys

from scenemotion.forecast import ground_truth_forecast
from scenemotion.interaction import DEFAULT_EPS, interaction_report
from scenemotion.model import load_model
from scenemotion.plot import scene_svg
from scenemotion.synthetic import GeneratorConfig, generate_synthetic


def show(title, report):
    print(f"\n{title}")
    for name, value in report.rows:
        print(f"  {name:<22}{value:6.1f} %")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="demo_out")
    args = ap.parse_args()
    ckpt = os.path.join(args.out, "demo_model.ckpt")
    if not os.path.exists(ckpt):
        sys.exit(f"{ckpt} not found: run demos/02_train_and_evaluate.py --out {args.out} first")
    model, _, _ = load_model(ckpt)

    scenes = generate_synthetic(0, 4, GeneratorConfig(template="crossing"))  # the demo's training scenes
    forecasts = model.predict(scenes)
    print(f"DBSCAN radius {DEFAULT_EPS} m, at least 2 waypoints per cluster, clusters must span 2 agents")
    # the recorded futures, repeated in every mode: a reference for how often the agents really meet
    show("recorded futures as a forecast", interaction_report([ground_truth_forecast(s) for s in scenes], seed=0))
    learned = interaction_report(forecasts, seed=0)
    show("learned forecasts", learned)
    within, rand = learned.value("within_mode_avg"), learned.value("random_baseline_avg")
    verdict = "no more often than" if within <= rand else "more often than"
    print(f"\nwithin a learned mode, agents meet {verdict} under random mode assignment "
          f"({within:.1f} % vs {rand:.1f} %)")

    idx = next((i for i, sc in enumerate(learned.scenes) if sc.listing), 0)
    scene, clusters = scenes[idx], learned.scenes[idx]
    for cl in clusters.listing[:5]:
        ids = sorted({clusters.agent_ids[a] for a in cl.agents})
        print(f"  {scene.scenario_id} t={cl.t / 10:.1f} s: agents {ids} (modes {sorted(set(cl.modes))})")

    svg = os.path.join(args.out, f"{scene.scenario_id}.svg")
    with open(svg, "w", encoding="utf-8") as fh:
        fh.write(scene_svg(scene, forecasts[idx]))
    print(f"\nscene drawing written to {svg}")


if __name__ == "__main__":
    main()
