"""
`check` verb: run the oracle verification suite and report PASS/FAIL per check.
"""

import logging
from pathlib import Path

from commands.common import handles_errors
from services.artifact_service import ArtifactService
from services.check_service import FAULTS, CheckService
from utils.errors import EXIT_CHECK_FAILED, EXIT_OK

logger = logging.getLogger(__name__)


def register(subparsers):
    parser = subparsers.add_parser("check", help="run numerical verification checks")
    parser.add_argument("--fault", choices=FAULTS, help="inject a known fault to exercise the checks")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--output", help="write the JSON report here")
    parser.set_defaults(func=run)


@handles_errors
def run(args) -> int:
    report = CheckService(seed=args.seed, fault=args.fault).run()
    for check in report.checks:
        status = "PASS" if check.passed else "FAIL"
        print(f"{status}  {check.name:<28} {check.value:.3e}  (tol {check.tolerance:.1e})  {check.detail}")
    print(f"max conditional-moment deviation: {report.max_moment_deviation:.3e}")
    if args.output:
        output = Path(args.output)
        ArtifactService(output.parent).write_json(output.name, report)
    if not report.passed:
        failed = ", ".join(c.name for c in report.checks if not c.passed)
        logger.error(f"verification failed: {failed}")
        return EXIT_CHECK_FAILED
    print("All checks passed")
    return EXIT_OK
