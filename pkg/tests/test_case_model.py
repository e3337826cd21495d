import math

import numpy as np
import pytest
from dataclasses import replace

from opfbnb import DATA_DIR, fixture_path
from opfbnb.case_model import (
    Branch,
    Bus,
    MalformedSection,
    NoReferenceBus,
    NonPositiveBase,
    UnknownBusReference,
    ZeroImpedance,
    effective_admittance,
    load_case,
    parse_case,
    validate,
    write_case,
)

TWO_BUS = fixture_path("case2_fixture").read_text()


def test_two_bus_fixture_fields():
    net = parse_case(TWO_BUS)
    assert (net.n_bus, net.n_branch, net.n_gen) == (2, 1, 1)
    assert net.base_mva == 100.0
    b1, b2 = net.buses
    assert b1 == Bus(1, 1.0, 1.1, 0.0, 0.0, 0.0, 0.0, True)
    assert b2 == Bus(2, 0.9, 1.1, 0.0, 0.0, 0.6, 0.25, False)
    br = net.branches[0]
    g, b = (1 / complex(0.04, 0.2)).real, (1 / complex(0.04, 0.2)).imag
    assert (br.from_bus, br.to_bus) == (1, 2)
    assert br.g == pytest.approx(g, rel=1e-15) and br.b == pytest.approx(b, rel=1e-15)
    assert br.b_c == 0.04 and br.tap == 1.0 and br.shift == 0.0
    assert br.s_max == pytest.approx(1.5)
    assert br.ang_min == pytest.approx(-math.pi / 6) and br.ang_max == pytest.approx(math.pi / 6)
    gen = net.generators[0]
    assert (gen.p_min, gen.p_max, gen.q_min, gen.q_max) == (0.0, 2.0, -1.0, 1.0)
    # 0.02 $/MW^2 h, 15 $/MWh, 100 $/h rescaled to per unit
    assert (gen.c2, gen.c1, gen.c0) == pytest.approx((200.0, 1500.0, 100.0))


def test_empty_text_is_malformed():
    with pytest.raises(MalformedSection):
        parse_case("")


def test_ragged_matrix_is_malformed():
    bad = TWO_BUS.replace("	 1	 1.10	 0.90;", "	 1.10	 0.90;")
    with pytest.raises(MalformedSection):
        parse_case(bad)


def test_unknown_bus_reference():
    with pytest.raises(UnknownBusReference):
        parse_case(TWO_BUS.replace("1	 2	 0.04	 0.2", "1	 7	 0.04	 0.2"))


def test_no_reference_bus():
    with pytest.raises(NoReferenceBus):
        parse_case(TWO_BUS.replace("1	 3	 0.0", "1	 2	 0.0"))


def test_non_positive_base():
    with pytest.raises(NonPositiveBase):
        parse_case(TWO_BUS.replace("mpc.baseMVA = 100.0", "mpc.baseMVA = 0.0"))


def test_piecewise_cost_rejected():
    with pytest.raises(MalformedSection):
        parse_case(TWO_BUS.replace("2	 0.0	 0.0	 3	 0.02", "1	 0.0	 0.0	 3	 0.02"))


def test_case3_shape(nets):
    net = nets["case3_lmbd"]
    assert (net.n_bus, net.n_branch) == (3, 3)


def test_out_of_service_branch_dropped():
    text = TWO_BUS.replace(
        "1	 2	 0.04	 0.2	 0.04	 150.0	 0.0	 0.0	 0.0	 0.0	 1	 -30.0	 30.0;",
        "1	 2	 0.04	 0.2	 0.04	 150.0	 0.0	 0.0	 0.0	 0.0	 1	 -30.0	 30.0;\n"
        "	1	 2	 0.01	 0.1	 0.0	 0.0	 0.0	 0.0	 0.0	 0.0	 0	 -30.0	 30.0;",
    )
    assert parse_case(text).n_branch == 1


def test_validate_clean(nets):
    for name, net in nets.items():
        assert validate(net) == [], name


def test_validate_inverted_voltage(nets):
    net = nets["case2_fixture"]
    bad = replace(net, buses=(replace(net.buses[0], v_min=1.1, v_max=0.9),) + net.buses[1:])
    rules = [v.rule for v in validate(bad)]
    assert rules == ["VoltageBoundsInverted"]
    assert "bus 1" in validate(bad)[0].entity


def test_validate_multiple_reference(nets):
    net = nets["case2_fixture"]
    bad = replace(net, buses=(net.buses[0], replace(net.buses[1], is_ref=True)))
    assert [v.rule for v in validate(bad)] == ["MultipleReferenceBuses"]


def test_effective_admittance_examples():
    assert effective_admittance(0.0, 1.0) == pytest.approx((0.0, -1.0, 0.0))
    assert effective_admittance(1.0, 1.0) == pytest.approx((0.5, -0.5, 0.0))
    with pytest.raises(ZeroImpedance):
        effective_admittance(0.0, 0.0)


def test_effective_admittance_identity_at_unit_tap():
    br = Branch(1, 2, g=0.3, b=-2.0, b_c=0.1)
    assert effective_admittance(br) == (0.3, -2.0, 0.1)


def test_pi_model_matches_bus_admittance_stamp():
    # oracle: MATPOWER-style stamp written out independently
    r, x, bc, tap, shift = 0.01, 0.08, 0.2, 0.95, math.radians(3.0)
    ys = 1 / complex(r, x)
    t = tap * complex(math.cos(shift), math.sin(shift))
    br = Branch(1, 2, ys.real, ys.imag, bc, tap, shift)
    yff, yft, ytf, ytt = br.pi_model()
    assert yff == pytest.approx((ys + 0.5j * bc) / tap**2)
    assert yft == pytest.approx(-ys / t.conjugate())
    assert ytf == pytest.approx(-ys / t)
    assert ytt == pytest.approx(ys + 0.5j * bc)


@pytest.mark.parametrize("path", sorted(DATA_DIR.glob("*.m")), ids=lambda p: p.stem)
def test_round_trip(path):
    net = load_case(path)
    again = parse_case(write_case(net), net.name)
    assert again == net


@pytest.mark.parametrize("path", sorted(DATA_DIR.glob("*.m")), ids=lambda p: p.stem)
def test_per_unit_cost_consistency(path):
    # raw MW cost from the file text vs per-unit cost on the parsed network
    from opfbnb.case_model import _sections

    _, mats = _sections(path.read_text())
    net = load_case(path)
    raw_gen = [r for r in mats["gen"] if r[7] > 0]
    raw_cost = [c for r, c in zip(mats["gen"], mats["gencost"]) if r[7] > 0]
    rng = np.random.default_rng(0)
    for row, cost, gen in zip(raw_gen, raw_cost, net.generators):
        p_mw = rng.uniform(row[9], max(row[8], row[9] + 1.0))
        n = int(cost[3])
        coef = [0.0] * (3 - n) + list(cost[4:4 + n])
        raw = coef[0] * p_mw**2 + coef[1] * p_mw + coef[2]
        pu = p_mw / net.base_mva
        mine = gen.c2 * pu**2 + gen.c1 * pu + gen.c0
        assert mine == pytest.approx(raw, rel=1e-9, abs=1e-9)


def test_angle_limits_clamped_but_raw_kept():
    text = TWO_BUS.replace("-30.0	 30.0;", "-360.0	 360.0;")
    net = parse_case(text)
    lo, hi = net.angle_limits(clamp=True)
    assert hi[0] == pytest.approx(math.pi / 2 - 1e-6) and lo[0] == pytest.approx(-(math.pi / 2 - 1e-6))
    lo, hi = net.angle_limits(clamp=False)
    assert hi[0] == pytest.approx(2 * math.pi)


def test_all_fixtures_parse():
    for path in DATA_DIR.glob("*.m"):
        net = load_case(path)
        assert net.n_bus > 0 and net.n_gen > 0
