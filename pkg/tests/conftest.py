import os
import sys
import time

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from minigrid.ajo import ScriptType  # noqa: E402
from minigrid.vsite import IncarnationDatabase, ResourceDescription, Vsite  # noqa: E402

SH = "/bin/sh"


SITES: list[Vsite] = []
USPACE_LEFTOVERS: list[str] = []


def make_site(root, name="vsiteA", tsi=None, **kw):
    site = Vsite(
        name,
        root,
        users={"tok": "alice"},
        idb=IncarnationDatabase({ScriptType.SH: SH, ScriptType.CSH: SH}, kw.pop("packages", {})),
        resources=kw.pop(
            "resources",
            ResourceDescription(max_processors=4, max_memory=1024, max_wall_time=600, software_packages={"povray"}),
        ),
        tsi=tsi,
        **kw,
    )
    SITES.append(site)
    return site


@pytest.fixture(autouse=True)
def _uspaces_cleaned(request):
    """Suite-wide uspace audit: every site built in a test must end with an empty uspace root."""
    start = len(SITES)
    yield
    for site in SITES[start:]:
        deadline = time.monotonic() + 10
        while any(site.uspace_root.iterdir()) and time.monotonic() < deadline:
            time.sleep(0.05)
        USPACE_LEFTOVERS.extend(f"{request.node.nodeid}: {p}" for p in site.uspace_root.iterdir())
    del SITES[start:]


@pytest.fixture
def site(tmp_path):
    return make_site(tmp_path / "siteA")


# -- acceptance reporting: one line per criterion in the terminal summary

ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    if 4 in ACCEPTANCE:
        title, ok, detail = ACCEPTANCE[4]
        ok = ok and not USPACE_LEFTOVERS
        detail += f"; suite-wide leftover uspaces: {len(USPACE_LEFTOVERS)}"
        ACCEPTANCE[4] = (title, ok, detail + "".join(f"\n    {v}" for v in USPACE_LEFTOVERS[:5]))
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(
            f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        )
