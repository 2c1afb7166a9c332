import numpy as np
import pytest

import etatest as et
from etatest.dataset import Dataset
from etatest.lipschitz import LipschitzField
from etatest.qclp import max_linear
from etatest.verify import (Mode, PointReport, Verdict, VerdictKind, classify,
                            eta_test, eta_test_discrete, radius,
                            true_vdot_oracle, write_reports_csv,
                            write_summary_json)


def make_field(n, l_x=1.0, l_u=1.0, delta=0.1, lam=1.0):
    return LipschitzField(np.full(n, l_x), np.full(n, l_u),
                          np.zeros(n, bool), delta, lam)


def test_radius_examples(osc_stable):
    ds = et.collect(osc_stable.system, osc_stable.policy, 10,
                    osc_stable.bounds, 0.0, seed=0)
    field = make_field(len(ds), l_x=2.0, l_u=1.0)
    # noiseless data: the policy reproduces the stored action exactly
    assert radius(ds, 3, 3, osc_stable.policy, field) == 0.0

    xs = np.array([[0.0, 0.0], [0.1, 0.0]])
    us = np.array([[0.0], [0.05]])
    ys = np.zeros((2, 2))
    ds2 = Dataset(xs, us, ys)
    field2 = LipschitzField(np.array([2.0, 2.0]), np.array([1.0, 1.0]),
                            np.zeros(2, bool), 0.1, 1.0)
    r = radius(ds2, 0, 1, et.zero_policy(1), field2)
    assert r == pytest.approx(2.0 * 0.1 + 1.0 * 0.05)
    field2_doubled = LipschitzField(np.array([4.0, 4.0]), np.array([2.0, 2.0]),
                                    np.zeros(2, bool), 0.1, 1.0)
    assert radius(ds2, 0, 1, et.zero_policy(1), field2_doubled) == pytest.approx(2 * r)


def test_true_vdot_oracle_hand_value(osc_stable):
    # hand substitution at x = (1, 1): u = -1/2, f = (1, -1.5),
    # grad V = (5.5, 5)  =>  Vdot = -2
    got = true_vdot_oracle(osc_stable.system, osc_stable.policy,
                           osc_stable.lyapunov, np.array([1.0, 1.0]))
    assert got == pytest.approx(-2.0, abs=1e-12)


def test_true_vdot_oracle_critical_is_zero():
    exp = et.make_experiment("pend-critical")
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.uniform(-1.5, 1.5, 2)
        assert abs(true_vdot_oracle(exp.system, exp.policy, exp.lyapunov, x)) \
            <= 1e-9


def test_single_sample_no_neighbors_indeterminate(osc_stable):
    ds = et.collect(osc_stable.system, osc_stable.policy, 1,
                    osc_stable.bounds, 0.01, seed=5)
    index = et.NeighborIndex(ds, cell_edge=1e-6)
    field = LipschitzField(np.zeros(1), np.zeros(1), np.ones(1, bool),
                           1e-6, 1.0)
    verdict = eta_test(ds, osc_stable.policy, osc_stable.lyapunov, field,
                       1e-6, Mode.STABILITY, index=index,
                       bounds=osc_stable.bounds)
    assert verdict.overall is VerdictKind.INDETERMINATE
    assert verdict.counts["unconstrained"] == 1


def _report(i, eta_max=None, eta_min=None):
    return PointReport(i, np.zeros(2), np.zeros(1), 3,
                       eta_max=eta_max, eta_min=eta_min)


def test_classify_examples():
    stable = [_report(i, eta_max=-0.5, eta_min=-0.7) for i in range(5)]
    assert classify(stable, 0.1) is VerdictKind.STABLE
    unstable = [_report(i, eta_max=0.4, eta_min=0.2) for i in range(5)]
    assert classify(unstable, 0.1) is VerdictKind.UNSTABLE
    critical = [_report(i, eta_max=0.03, eta_min=-0.04) for i in range(5)]
    assert classify(critical, 0.1) is VerdictKind.NEAR_CRITICAL
    assert classify(critical, 0.01) is VerdictKind.INDETERMINATE
    mixed = [_report(0, eta_max=-2.0, eta_min=-3.0),
             _report(1, eta_max=2.0, eta_min=1.0)]
    assert classify(mixed, 0.1) is VerdictKind.INDETERMINATE


def test_eta_test_small_oscillator_reports(osc_small, osc_stable):
    ds, index, field = osc_small
    verdict = eta_test(ds, osc_stable.policy, osc_stable.lyapunov, field, 0.1,
                       Mode.STABILITY, index=index, x_e=osc_stable.system.x_e,
                       bounds=osc_stable.bounds, system=osc_stable.system)
    assert verdict.counts["points"] == len(ds)
    evaluated = [r for r in verdict.reports if r.eta_max is not None]
    assert len(evaluated) > 0.8 * len(ds)
    # worst-case bound never sits above zero spuriously at this scale
    assert all(r.eta_max < 0.5 for r in evaluated)
    # eta fields appear exactly on optimally solved points
    for r in verdict.reports:
        assert (r.eta_max is None) == (r.unconstrained or r.infeasible)


def test_soundness_violations_are_attributable(osc_small, osc_stable):
    """Whenever the worst-case bound undercuts the true derivative, some
    neighbor ball must exclude the true derivative, i.e. the fitted constants
    under-covered that pair."""
    ds, index, field = osc_small
    u_pi = osc_stable.policy(ds.xs)
    queries = np.hstack([ds.xs, u_pi])
    indptr, indices = index.query_batch(queries, 0.1)
    from etatest import kernels
    radii = kernels.radii_batch(indptr, indices, ds.xs, ds.us, ds.xs, u_pi,
                                field.l_x, field.l_u)
    grads = osc_stable.lyapunov.grad(ds.xs)
    true_v = np.sum(grads * osc_stable.system(ds.xs, u_pi), axis=-1)
    true_pts = osc_stable.system(ds.xs, u_pi)
    rng = np.random.default_rng(4)
    violations = attributed = 0
    for i in rng.integers(0, len(ds), 300):
        lo, hi = indptr[i], indptr[i + 1]
        if hi == lo:
            continue
        res = max_linear(grads[i], (ds.ys[indices[lo:hi]], radii[lo:hi]))
        if not res.optimal or res.value >= true_v[i] - 1e-9:
            continue
        violations += 1
        miss = np.linalg.norm(true_pts[i] - ds.ys[indices[lo:hi]], axis=1) \
            - radii[lo:hi]
        if np.max(miss) > 1e-12:
            attributed += 1
    assert violations == attributed


def test_eta_max_monotone_under_field_inflation(osc_small, osc_stable):
    ds, index, field = osc_small
    inflated = LipschitzField(1.5 * field.l_x, 1.5 * field.l_u,
                              field.unconstrained, field.delta, field.lam)
    kw = dict(index=index, x_e=osc_stable.system.x_e, bounds=osc_stable.bounds)
    base = eta_test(ds, osc_stable.policy, osc_stable.lyapunov, field, 0.1,
                    Mode.STABILITY, **kw)
    wide = eta_test(ds, osc_stable.policy, osc_stable.lyapunov, inflated, 0.1,
                    Mode.STABILITY, **kw)
    for rb, rw in zip(base.reports, wide.reports):
        if rb.eta_max is not None and rw.eta_max is not None:
            assert rw.eta_max >= rb.eta_max - 1e-9
        if rb.eta_max is not None:
            # inflation keeps feasible instances feasible
            assert rw.eta_max is not None
    # a sign-decided non-stable verdict never turns stable under inflation
    # (indeterminacy caused by empty intersections can legitimately heal,
    # since inflation enlarges every ball)
    blocked = base.counts["infeasible"] or base.counts["unconstrained"]
    if base.overall is not VerdictKind.STABLE and not blocked:
        assert wide.overall is not VerdictKind.STABLE


def test_thread_count_does_not_change_verdict(osc_small, osc_stable):
    ds, index, field = osc_small
    kw = dict(index=index, x_e=osc_stable.system.x_e, bounds=osc_stable.bounds)
    one = eta_test(ds, osc_stable.policy, osc_stable.lyapunov, field, 0.1,
                   Mode.BOTH, threads=1, **kw)
    four = eta_test(ds, osc_stable.policy, osc_stable.lyapunov, field, 0.1,
                    Mode.BOTH, threads=4, **kw)
    assert one.overall is four.overall
    for a, b in zip(one.reports, four.reports):
        assert a.eta_max == b.eta_max and a.eta_min == b.eta_min


def test_fail_fast_stops_early(osc_small, osc_stable):
    ds, index, field = osc_small
    # instability mode on a stable system violates immediately
    verdict = eta_test(ds, osc_stable.policy, osc_stable.lyapunov, field, 0.1,
                       Mode.INSTABILITY, index=index,
                       x_e=osc_stable.system.x_e, bounds=osc_stable.bounds,
                       fail_fast=True)
    assert verdict.overall is VerdictKind.INDETERMINATE
    assert len(verdict.reports) < len(ds)


def _discrete_run(name, n=2000, delta=0.05, noise=0.005):
    exp = et.make_experiment(name)
    ds = et.collect(exp.system, exp.policy, n, exp.bounds, noise, seed=2)
    index = et.NeighborIndex(ds, cell_edge=delta)
    field = et.estimate_all(ds, index, delta, 1.0)
    return eta_test_discrete(ds, exp.policy, exp.lyapunov, field, delta,
                             index=index, x_e=exp.system.x_e, bounds=exp.bounds)


def test_discrete_contraction_verifies_stable():
    verdict = _discrete_run("disc-half")
    assert verdict.overall is VerdictKind.STABLE
    # direct bound check at sampled states: bound < V(x)
    active = [r for r in verdict.reports
              if not (r.equilibrium or r.unconstrained or r.infeasible)]
    assert active and all(r.eta_max < 0 for r in active)


def test_discrete_identity_is_not_stable():
    verdict = _discrete_run("disc-identity")
    assert verdict.overall is not VerdictKind.STABLE


def test_discrete_empty_dataset():
    exp = et.make_experiment("disc-half")
    ds = et.collect(exp.system, exp.policy, 0, exp.bounds, 0.01, seed=0)
    index = et.NeighborIndex(ds, cell_edge=0.05)
    field = et.estimate_all(ds, index, 0.05, 1.0)
    verdict = eta_test_discrete(ds, exp.policy, exp.lyapunov, field, 0.05,
                                index=index)
    assert verdict.overall is VerdictKind.INDETERMINATE


def test_report_exports(tmp_path, osc_small, osc_stable):
    ds, index, field = osc_small
    verdict = eta_test(ds, osc_stable.policy, osc_stable.lyapunov, field, 0.1,
                       Mode.BOTH, index=index, x_e=osc_stable.system.x_e,
                       bounds=osc_stable.bounds, system=osc_stable.system)
    csv_path = tmp_path / "reports.csv"
    json_path = tmp_path / "summary.json"
    write_reports_csv(verdict, csv_path, ds.n)
    write_summary_json(verdict, json_path)
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == "i,x0,x1,neighbors,eta_max,eta_min,true_vdot"
    assert len(lines) == len(ds) + 1
    import json
    summary = json.loads(json_path.read_text())
    assert summary["verdict"] == verdict.overall.value
    assert summary["delta"] == 0.1
