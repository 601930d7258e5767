"""Deterministic artifact writers for pipeline reports.

Everything is written with fixed formatting and sorted keys so a rerun with
the same seed produces byte-identical files. SVGs are assembled by hand for
the same reason.
"""

import json
import math
import os

import numpy as np

from .divergence import Pose, axes_from_cov
from .gmm import mixture_pdf
from .simulator import RunReport, collective_qos

CANVAS = 640.0


def render(report: RunReport, out_dir):
    """Write every artifact the report's stage supports; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []

    def emit(name, text):
        path = os.path.join(out_dir, name)
        with open(path, "w") as fh:
            fh.write(text)
        written.append(path)

    for i, mixture in enumerate(report.estimates):
        emit(f"gmm_agent{i}.json", _mixture_json(i, mixture))
    emit("estimate.svg", estimate_svg(report))
    if report.trace:
        emit("trace.csv", _trace_csv(report.trace))

    if report.cost_matrix is not None:
        emit("costs.csv", _costs_csv(report.cost_matrix))
        emit("plan.json", json.dumps(report.plan.to_dict(), sort_keys=True, indent=2) + "\n")

    if report.trajectories is not None:
        emit("trajectories.csv", _trajectories_csv(report.trajectories))

    if report.metrics:
        payload = {"run_id": report.run_id, "seed": report.scenario.seed,
                   "stage": report.stage, **report.metrics}
        emit("metrics.json", json.dumps(payload, sort_keys=True, indent=2) + "\n")
        emit("qos.svg", qos_svg(report))
    return written


def _mixture_json(agent_id, mixture):
    payload = {
        "agent": agent_id,
        "components": [
            {"weight": c.weight, "mean": list(c.mean), "cov": [list(row) for row in c.cov]}
            for c in mixture.components
        ],
    }
    return json.dumps(payload, sort_keys=True, indent=2) + "\n"


def _costs_csv(cost):
    n = cost.shape[0]
    lines = ["agent," + ",".join(f"region{k}" for k in range(n))]
    for i in range(n):
        lines.append(str(i) + "," + ",".join(repr(float(v)) for v in cost[i]))
    return "\n".join(lines) + "\n"


def _trajectories_csv(trajectories):
    lines = ["agent,t,x,y,heading,speed,u1,u2"]
    for i, traj in enumerate(trajectories):
        for t, row, u in zip(traj.times, traj.states, traj.inputs):
            vals = [repr(float(t))] + [repr(float(v)) for v in row] + [repr(float(v)) for v in u]
            lines.append(f"{i}," + ",".join(vals))
    return "\n".join(lines) + "\n"


def _trace_csv(trace):
    n_comp = trace[0].shape[1]
    lines = ["round,node," + ",".join(f"y{k}" for k in range(n_comp))]
    for rnd, snapshot in enumerate(trace):
        for node in range(snapshot.shape[0]):
            vals = ",".join(repr(float(v)) for v in snapshot[node])
            lines.append(f"{rnd},{node},{vals}")
    return "\n".join(lines) + "\n"


class _Frame:
    """Maps arena coordinates onto the (y-down) SVG canvas."""

    def __init__(self, arena):
        self.arena = arena
        self.sx = CANVAS / (arena.xmax - arena.xmin)
        self.sy = CANVAS / (arena.ymax - arena.ymin)

    def x(self, x):
        return (x - self.arena.xmin) * self.sx

    def y(self, y):
        return CANVAS - (y - self.arena.ymin) * self.sy


def _f(v):
    return f"{v:.4f}"


def estimate_svg(report: RunReport) -> str:
    """Targets plus the 3-sigma ellipses of node 0's mixture estimate.

    Ellipse stroke width scales with the component weight.
    """
    frame = _Frame(report.scenario.arena)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS:g}" height="{CANVAS:g}" '
        f'viewBox="0 0 {CANVAS:g} {CANVAS:g}">',
        f'<rect width="{CANVAS:g}" height="{CANVAS:g}" fill="white"/>',
    ]
    for x, y in report.targets:
        parts.append(
            f'<circle cx="{_f(frame.x(x))}" cy="{_f(frame.y(y))}" r="1.6" '
            'fill="#444444" fill-opacity="0.35"/>'
        )
    for component in report.estimates[0].components:
        axes = axes_from_cov(component.cov)
        cx, cy = frame.x(component.mean[0]), frame.y(component.mean[1])
        rx = 3.0 * math.sqrt(axes.sigma_major) * frame.sx
        ry = 3.0 * math.sqrt(axes.sigma_minor) * frame.sy
        angle = -math.degrees(axes.theta)  # canvas y points down
        width = 0.6 + 8.0 * component.weight
        parts.append(
            f'<ellipse cx="{_f(cx)}" cy="{_f(cy)}" rx="{_f(rx)}" ry="{_f(ry)}" '
            f'transform="rotate({_f(angle)} {_f(cx)} {_f(cy)})" '
            f'fill="none" stroke="#c23b22" stroke-width="{_f(width)}"/>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def qos_svg(report: RunReport, cells=80) -> str:
    """Collective service-density heatmap with agent markers.

    Uses the post-transport poses when trajectories exist, the initial poses
    otherwise; darker blue marks better service.
    """
    scenario = report.scenario
    profiles = [a.profile for a in scenario.agents]
    if report.trajectories is not None:
        poses = [Pose(position=t.states[-1, :2], heading=t.states[-1, 2])
                 for t in report.trajectories]
    else:
        poses = [a.state.pose() for a in scenario.agents]
    qos = collective_qos(poses, profiles)

    frame = _Frame(scenario.arena)
    xs = np.linspace(scenario.arena.xmin, scenario.arena.xmax, cells + 1)
    ys = np.linspace(scenario.arena.ymin, scenario.arena.ymax, cells + 1)
    cx = 0.5 * (xs[:-1] + xs[1:])
    cy = 0.5 * (ys[:-1] + ys[1:])
    grid = np.stack(np.meshgrid(cx, cy, indexing="ij"), axis=-1).reshape(-1, 2)
    dens = mixture_pdf(qos, grid).reshape(cells, cells)
    peak = float(dens.max()) or 1.0

    cell_w = CANVAS / cells
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{CANVAS:g}" height="{CANVAS:g}" '
        f'viewBox="0 0 {CANVAS:g} {CANVAS:g}">',
        f'<rect width="{CANVAS:g}" height="{CANVAS:g}" fill="white"/>',
    ]
    for ix in range(cells):
        for iy in range(cells):
            level = dens[ix, iy] / peak
            if level < 0.004:
                continue
            r = int(round(255 * (1.0 - 0.85 * level)))
            g = int(round(255 * (1.0 - 0.55 * level)))
            px = frame.x(xs[ix])
            py = frame.y(ys[iy + 1])
            parts.append(
                f'<rect x="{_f(px)}" y="{_f(py)}" width="{_f(cell_w)}" height="{_f(cell_w)}" '
                f'fill="rgb({r},{g},255)"/>'
            )
    for x, y in report.targets:
        parts.append(
            f'<circle cx="{_f(frame.x(x))}" cy="{_f(frame.y(y))}" r="1.2" '
            'fill="#333333" fill-opacity="0.3"/>'
        )
    for i, pose in enumerate(poses):
        px, py = frame.x(pose.position[0]), frame.y(pose.position[1])
        tip_x = px + 12.0 * math.cos(pose.heading)
        tip_y = py - 12.0 * math.sin(pose.heading)
        parts.append(
            f'<line x1="{_f(px)}" y1="{_f(py)}" x2="{_f(tip_x)}" y2="{_f(tip_y)}" '
            'stroke="#b02a1a" stroke-width="2"/>'
        )
        parts.append(f'<circle cx="{_f(px)}" cy="{_f(py)}" r="5" fill="#b02a1a"/>')
        parts.append(
            f'<text x="{_f(px + 7)}" y="{_f(py - 7)}" font-size="14" '
            f'fill="#222222">{i}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
