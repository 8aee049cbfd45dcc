"""Ready-made jobs used by the demos, the CLI docs and the test-suite."""

from __future__ import annotations

from .ajo import (
    AbstractJob,
    CopyPortfolioToOutcome,
    ExecuteScriptTask,
    IncarnateFiles,
    MakePortfolio,
    ScriptType,
    new_job,
)

DATE_HOSTNAME_SCRIPT = b"date\nhostname\n"

RESULT_TEXT = b"result of AJO Example\n"
RESULT_SCRIPT = DATE_HOSTNAME_SCRIPT + b"echo 'result of AJO Example' > result.txt\n"


def date_hostname_job(
    target_vsite: str = "",
    identity: str = "",
    script_type: ScriptType = ScriptType.CSH,
    script: bytes = RESULT_SCRIPT,
    input_bytes: bytes = b"hello grid\n",
) -> AbstractJob:
    """The seven-action example job: stage a script and an input file, run, save the result.

    Dependency chain::

        incarnate script  -> script portfolio -> execute -> result portfolio -> save
        incarnate inputs  -> input portfolio
    """
    ajo = new_job("AJO Example", target_vsite, identity)

    inf = IncarnateFiles("Script Files")
    inf.add_file("script", script)
    mp = MakePortfolio("AJO Example")
    mp.add_file("script")

    inf1 = IncarnateFiles("Required Files")
    inf1.add_file("input.txt", input_bytes)
    mp1 = MakePortfolio("Required Portfolio")
    mp1.add_file("input.txt")

    for action in (inf, mp, inf1, mp1):
        ajo.add(action)

    est = ExecuteScriptTask("AJO Example Task", script_portfolio=mp.id, script_type=script_type)
    ajo.add(est)

    mp2 = MakePortfolio("Result Portfolio")
    mp2.add_file("result.txt")
    ajo.add(mp2)
    cpto = CopyPortfolioToOutcome("Save Results", target=mp2.id)
    ajo.add(cpto)

    ajo.add_dependency(inf, mp)
    ajo.add_dependency(inf1, mp1)
    ajo.add_dependency(mp, est)
    ajo.add_dependency(est, mp2)
    ajo.add_dependency(mp2, cpto)
    return ajo
