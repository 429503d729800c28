import pytest

from edgesim.topology import Topology

# Worked example network for EC(3,1) retrieval from ES_6.
# ES ids 1..8 follow the narrated walk-through; id 0 is an extra server hung
# off ES_5 so list positions line up with the narrated ids.
# Links: 6-7, 7-4, 7-8, 4-2, 2-1, 2-3, 2-5, 0-5.
FIG5_EDGES = [(6, 7), (7, 4), (7, 8), (4, 2), (2, 1), (2, 3), (2, 5), (0, 5)]
FIG5_GATEWAYS = {4: 1, 1: 2}


def build_topology(num_es, edges, ap_links, d_ec, gammas=(2.0, 10.0, 25.0)):
    adj = [set() for _ in range(num_es)]
    for u, v in edges:
        adj[u].add(v)
        adj[v].add(u)
    return Topology(
        num_es,
        len(ap_links),
        tuple(tuple(sorted(s)) for s in adj),
        tuple(dict(links) for links in ap_links),
        dict(d_ec),
        *gammas,
    )


@pytest.fixture
def fig5():
    # AP_1 (id 1) is attached only to ES_6 at one hop; the other APs spread out.
    ap_links = [{1: 1}, {6: 1}, {7: 1, 8: 2}, {2: 1, 3: 1}, {4: 2, 5: 1}, {0: 1, 1: 1}]
    return build_topology(9, FIG5_EDGES, ap_links, FIG5_GATEWAYS)


# One verdict line per acceptance criterion, printed after the run.
CRITERIA: dict[int, str] = {}


def record_criterion(num, ok, detail):
    CRITERIA[num] = f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    return ok


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[num])
