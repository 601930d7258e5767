"""Command-line front end for the deployment pipeline.

Verbs run the pipeline up to a stage and write that stage's artifacts:

    qosdeploy run <scenario.json> --out <dir>        full pipeline + metrics
    qosdeploy stage1 <scenario.json> --out <dir>     density estimation only
    qosdeploy assign <scenario.json> --out <dir>     + costs and assignment
    qosdeploy transport <scenario.json> --out <dir>  + trajectories

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""

import argparse
import sys

from .exceptions import NumericalError, ScenarioError
from .render import render
from .simulator import load_scenario, run_pipeline

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


def build_parser():
    parser = argparse.ArgumentParser(
        prog="qosdeploy",
        description="Two-stage multi-agent deployment: estimate the target "
                    "density, assign agents to mixture components, transport.",
    )
    sub = parser.add_subparsers(dest="stage", required=True)
    for stage, brief in (
        ("run", "full pipeline with deployment metrics"),
        ("stage1", "distributed density estimation only"),
        ("assign", "estimation plus costs and the common assignment"),
        ("transport", "everything up to the transport trajectories"),
    ):
        cmd = sub.add_parser(stage, help=brief)
        cmd.add_argument("scenario", help="path to the scenario JSON file")
        cmd.add_argument("--out", required=True, help="output directory for artifacts")
        cmd.add_argument("--trace", action="store_true",
                         help="dump per-round consensus outputs to trace.csv")
        cmd.add_argument("--shared-estimate", action="store_true",
                         help="price all assignment costs with node 0's estimate")
        cmd.add_argument("--mc-samples", type=int, default=None,
                         help="override the scenario's Monte-Carlo sample budget")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        scenario = load_scenario(args.scenario)
        report = run_pipeline(
            scenario,
            stage=args.stage,
            shared_estimate=args.shared_estimate,
            trace=args.trace,
            mc_samples=args.mc_samples,
        )
        paths = render(report, args.out)
    except (ScenarioError, OSError) as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL

    print(f"run {report.run_id} ({args.stage}) complete; wrote {len(paths)} artifacts to {args.out}")
    if report.plan is not None:
        pairs = ", ".join(f"{i}->{k}" for i, k in enumerate(report.plan.assignment))
        print(f"assignment: {pairs} (value {report.assignment_value:.6g})")
    if report.metrics:
        pre = report.metrics["mc_kld_pre"]
        post = report.metrics["mc_kld_post"]
        print(
            f"divergence to collective QoS: {pre['value']:.4f} (se {pre['stderr']:.4f}) -> "
            f"{post['value']:.4f} (se {post['stderr']:.4f})"
        )
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
