import sys
from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

sys.path.insert(0, str(Path(__file__).parent))

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

# acceptance criterion number -> (passed, detail); filled by test_acceptance
CRITERIA = {}


def cluster_centroids(eigs, radius):
    """Replace each eigenvalue by the mean of its cluster.

    Eigenvalues closer than ``radius`` (transitively) form a cluster.  A
    defective eigenvalue of multiplicity k is computed only to about
    eps**(1/k), but the mean of its cluster is accurate to about eps.
    """
    eigs = np.asarray(eigs, complex)
    label = np.arange(eigs.size)
    for i in range(eigs.size):
        for j in range(i):
            if abs(eigs[i] - eigs[j]) < radius:
                label[label == label[i]] = label[j]
    out = eigs.copy()
    for lab in np.unique(label):
        out[label == lab] = eigs[label == lab].mean()
    return out


def spectra_distance(a, b, cluster=None):
    """Largest gap of the best one-to-one matching between two spectra.

    With ``cluster`` set, both spectra are first collapsed onto their
    cluster centroids (see :func:`cluster_centroids`).
    """
    a, b = np.asarray(a, complex), np.asarray(b, complex)
    if cluster is not None:
        a, b = cluster_centroids(a, cluster), cluster_centroids(b, cluster)
    if a.size != b.size:
        return np.inf
    if a.size == 0:
        return 0.0
    cost = np.abs(a[:, None] - b[None, :])
    r, c = linear_sum_assignment(cost)
    return float(cost[r, c].max())


@pytest.fixture
def configs_dir():
    return CONFIGS


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(CRITERIA):
        ok, detail = CRITERIA[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
