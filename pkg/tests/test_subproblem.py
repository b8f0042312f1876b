import io
import json
import math

import numpy as np
import pytest

from urllc_ofdma.fbl import UserBitBudget
from urllc_ofdma.model import AllocationState, ChannelGenSpec, generate_instance
from urllc_ofdma.sca import (SolverConfig, exact_penalized_objective,
                             initialize)
from urllc_ofdma.subproblem import (build_assignment_subproblem,
                                    build_power_subproblem, build_subproblem,
                                    default_beta, linearize_square_sum,
                                    penalty_terms)


def _instance(seed=0, dims=(2, 3, 2), bits=(6, 6), p_max_dbm=33.0,
              delays=None, eps=1e-6):
    K, M, N = dims
    delays = delays or (N,) * K
    qos = tuple(UserBitBudget(b, eps, d) for b, d in zip(bits, delays))
    rng = np.random.default_rng(seed)
    return generate_instance(ChannelGenSpec(), dims, p_max_dbm, qos, rng)


def _uniform_state(inst):
    return initialize(inst, SolverConfig(init_policy="uniform"))


def test_penalty_terms_binary_gap_zero():
    s = np.array([0.0, 1.0, 1.0, 0.0])
    assert penalty_terms(s).gap == 0.0


def test_penalty_terms_half_entry():
    assert penalty_terms([0.5]).gap == pytest.approx(0.25)


def test_penalty_terms_zeros():
    pt = penalty_terms(np.zeros(5))
    assert pt.linear_sum == 0.0 and pt.square_sum == 0.0


def test_penalty_terms_validation():
    with pytest.raises(ValueError):
        penalty_terms([1.2])
    with pytest.raises(ValueError):
        penalty_terms([-0.1])


def test_penalty_gap_nonnegative_random():
    rng = np.random.default_rng(0)
    for _ in range(500):
        s = rng.uniform(0, 1, size=rng.integers(1, 30))
        assert penalty_terms(s).gap >= -1e-15


def test_linearize_square_sum_tangency():
    rng = np.random.default_rng(1)
    s_ref = rng.uniform(0, 1, size=10)
    lin = linearize_square_sum(s_ref)
    assert lin(s_ref) == pytest.approx(float(np.sum(s_ref**2)), rel=1e-12)


def test_linearize_square_sum_at_zero_reference():
    lin = linearize_square_sum(np.zeros(4))
    assert lin(np.zeros(4)) == 0.0
    assert lin(np.full(4, 0.7)) == 0.0  # affine part vanishes


def test_linearize_square_sum_underestimates():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        n = rng.integers(1, 20)
        ref = rng.uniform(0, 1, size=n)
        s = rng.uniform(0, 1, size=n)
        assert linearize_square_sum(ref)(s) <= float(np.sum(s**2)) + 1e-12


def test_default_beta_formula():
    inst = _instance()
    expect = 10.0 * math.log2(1.0 + inst.p_max_w / inst.noise_w)
    assert default_beta(inst) == pytest.approx(expect, rel=1e-12)


def test_layout_skips_delay_forbidden_res():
    inst = _instance(dims=(2, 3, 2), delays=(1, 2))
    sub = build_subproblem(inst, _uniform_state(inst), default_beta(inst))
    # user 0 contributes M*1 triples, user 1 M*2
    assert sub.layout.triples.count == 3 * 1 + 3 * 2
    assert sub.num_vars == 3 * sub.layout.triples.count


def test_surrogate_tangent_at_expansion():
    inst = _instance(seed=3)
    state = _uniform_state(inst)
    beta = default_beta(inst)
    sub = build_subproblem(inst, state, beta)
    x = sub.layout.pack(state)
    exact = exact_penalized_objective(inst, state, beta)
    assert sub.objective_at(x) == pytest.approx(exact, rel=1e-9, abs=1e-9)


def test_surrogate_tangent_shannon_mode():
    inst = _instance(seed=4)
    state = _uniform_state(inst)
    beta = default_beta(inst)
    sub = build_subproblem(inst, state, beta, shannon=True)
    x = sub.layout.pack(state)
    exact = exact_penalized_objective(inst, state, beta, shannon=True)
    assert sub.objective_at(x) == pytest.approx(exact, rel=1e-9, abs=1e-9)


def _random_relaxed_state(inst, rng):
    K, M, N = inst.dims
    allowed = inst.allowed_mask()
    raw = rng.uniform(0.0, 1.0, size=(K, M, N)) * allowed
    occupancy = np.sum(raw, axis=0, keepdims=True)
    s = raw / np.maximum(occupancy, 1.0)  # respect exclusivity
    eff = rng.uniform(0.0, 1.0, size=(K, M, N)) * s * inst.p_max_w
    eff *= 0.9 * inst.p_max_w / max(np.sum(eff), inst.p_max_w)
    power = np.divide(eff, s, out=np.zeros_like(eff), where=s > 0)
    return AllocationState(power=power, assign=s, eff_power=eff)


def test_surrogate_majorizes_exact_objective():
    inst = _instance(seed=5)
    beta = default_beta(inst)
    state = _uniform_state(inst)
    sub = build_subproblem(inst, state, beta)
    rng = np.random.default_rng(6)
    for _ in range(200):
        other = _random_relaxed_state(inst, rng)
        x = sub.layout.pack(other)
        exact = exact_penalized_objective(inst, other, beta)
        assert sub.objective_at(x) >= exact - 1e-9


def test_linearized_demand_rows_are_safe_restriction():
    # any point satisfying the linearized bit rows satisfies the exact ones
    inst = _instance(seed=7, bits=(4, 4))
    beta = default_beta(inst)
    state = _uniform_state(inst)
    sub = build_subproblem(inst, state, beta)
    rng = np.random.default_rng(8)
    checked = 0
    for _ in range(500):
        other = _random_relaxed_state(inst, rng)
        x = sub.layout.pack(other)
        conc = sub.concave_values(x)
        if np.all(conc >= 0.0):
            checked += 1
            for k in range(inst.num_users):
                gains = np.broadcast_to(inst.gains[k][:, None],
                                        inst.dims[1:]).ravel()
                from urllc_ofdma.fbl import user_bits
                net = user_bits(gains, other.eff_power[k].ravel(),
                                inst.qos[k].error_prob).net
                assert net >= inst.qos[k].bits_required - 1e-9
    assert checked > 0


def test_expansion_on_forbidden_res_rejected():
    inst = _instance(dims=(2, 2, 2), delays=(1, 2))
    state = _uniform_state(inst)
    bad = state.copy()
    bad.assign[0, 0, 1] = 0.3  # slot 2 forbidden for user 0
    bad.eff_power[0, 0, 1] = 0.1
    with pytest.raises(ValueError):
        build_subproblem(inst, bad, default_beta(inst))


def test_expansion_requires_positive_power():
    inst = _instance()
    state = _uniform_state(inst)
    bad = state.copy()
    bad.eff_power[0, 0, 0] = 0.0
    with pytest.raises(ValueError):
        build_subproblem(inst, bad, default_beta(inst))


def test_big_m_rows_pin_effective_power_on_binary_points():
    inst = _instance(seed=9)
    sub = build_subproblem(inst, _uniform_state(inst), default_beta(inst))
    layout = sub.layout
    rng = np.random.default_rng(10)
    r = layout.triples.count
    for _ in range(200):
        s = rng.integers(0, 2, size=r).astype(float)
        p = rng.uniform(0.0, 1.0, size=r)
        pbar_forced = s * p
        x = np.zeros(sub.num_vars)
        x[layout.s_ix] = s
        x[layout.p_ix] = p
        x[layout.pbar_ix] = pbar_forced
        loc, _ = sub.affine_residuals(x)
        assert np.max(loc) <= 1e-12  # consistent point satisfies the big-M rows
        # violating the product by a margin must break some row
        j = rng.integers(0, r)
        x[layout.pbar_ix[j]] = s[j] * p[j] + 0.05 + 0.1 * rng.uniform()
        loc, _ = sub.affine_residuals(x)
        assert np.max(loc) > 1e-9


def test_easy_point_strictly_inside_affine_rows():
    for seed in range(5):
        inst = _instance(seed=seed, dims=(3, 2, 2), bits=(4, 4, 4),
                         delays=(1, 2, 2))
        for sub in (build_subproblem(inst, _uniform_state(inst),
                                     default_beta(inst)),
                    build_assignment_subproblem(
                        inst, _uniform_state(inst).assign, default_beta(inst),
                        inst.p_max_w / 4),
                    build_power_subproblem(
                        inst, inst.allowed_mask(),
                        _uniform_state(inst).eff_power)):
            loc, coup = sub.affine_residuals(sub.easy_point)
            assert np.max(loc) < 0.0
            if coup.size:
                assert np.max(coup) < 0.0


def test_assignment_subproblem_layout_and_tangency():
    inst = _instance(seed=11)
    beta = default_beta(inst)
    power_re = inst.p_max_w / (inst.num_subcarriers * inst.num_slots)
    state = _uniform_state(inst)
    sub = build_assignment_subproblem(inst, state.assign, beta, power_re)
    assert sub.num_vars == sub.layout.triples.count
    x = sub.layout.pack(state.assign)
    fixed_state = sub.layout.unpack(x)
    exact = exact_penalized_objective(inst, fixed_state, beta)
    assert sub.objective_at(x) == pytest.approx(exact, rel=1e-9, abs=1e-9)


def test_power_subproblem_infeasible_row_for_starved_user():
    inst = _instance(seed=12, bits=(6, 6))
    active = inst.allowed_mask().copy()
    active[1] = False  # user 1 holds nothing but demands bits
    eff = np.where(active, inst.p_max_w / active.sum(), 0.0)
    sub = build_power_subproblem(inst, active, eff)
    labels = [row.label for row in sub.concave_rows]
    assert "bits[k=1]" in labels
    row = sub.concave_rows[labels.index("bits[k=1]")]
    assert row.idx.size == 0 and row.rhs > 0  # constant infeasible


def test_dump_is_parseable_and_labelled():
    inst = _instance(seed=13)
    sub = build_subproblem(inst, _uniform_state(inst), default_beta(inst))
    buf = io.StringIO()
    sub.dump(buf)
    doc = json.loads(buf.getvalue())
    labels = [r["label"] for r in doc["affine_rows"]]
    assert any(l.startswith("eff<=Pmax*s") for l in labels)
    assert any(l == "budget" for l in labels)
    assert len(doc["concave_rows"]) == inst.num_users
