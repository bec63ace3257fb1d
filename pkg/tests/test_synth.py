import math

import numpy as np
import pytest

from pretermpred.evaluation import SplitPlan, run_experiment
from pretermpred.schema import MISSING, Cohort, Patient, Tick, default_registry, derive_labels, parse_schema, slice_by_tick
from pretermpred.synth import DEFAULT_EFFECTS, SynthConfig, generate_cohort, inject_missingness

REG = default_registry()

RISK_SCHEMA = """\
AGEMOM DMG T0 numeric(17,40) mean replace=≤17:17,≥40:40
PRETERM PPH T0 yesno default(0)
BPSMOKE SAD T0 yesno mode
BPCRVLT CRVM T1 numeric(5,60) mean
"""


@pytest.fixture(scope="module")
def default_cohort():
    return generate_cohort(SynthConfig(), REG)


def _within(count, n, p, k=3.0):
    return abs(count - n * p) <= k * math.sqrt(n * p * (1 - p))


class TestMarginals:
    def test_spontaneous_count(self, default_cohort):
        n_sp = sum(p.subtype == "spontaneous" for p in default_cohort.patients)
        # 3000 * 0.103 = 309, sigma about 16.6
        assert abs(n_sp - 309) <= 3 * 16.6

    def test_other_marginals(self, default_cohort):
        pts = default_cohort.patients
        assert _within(sum(p.subtype == "indicated" for p in pts), 3000, 0.04)
        assert _within(sum(p.parity == "nulliparous" for p in pts), 3000, 1218 / 2929)
        assert _within(sum(p.last_tick >= Tick.T3 for p in pts), 3000, 2549 / 3002)
        nullip = [p for p in pts if p.parity == "nulliparous"]
        assert _within(sum(p.subtype == "spontaneous" for p in nullip), len(nullip), 0.082)

    def test_validates_and_is_non_clinical_shape(self, default_cohort):
        default_cohort.validate(REG)
        assert len(default_cohort) == 3000
        assert default_cohort.patients[0].id == "P00001"
        # prior-pregnancy history does not exist for a first pregnancy
        assert all(p.get("PRETERM") is MISSING for p in default_cohort.patients if p.parity == "nulliparous")

    def test_bitwise_determinism(self, default_cohort):
        again = generate_cohort(SynthConfig(), REG)
        assert again.patients == default_cohort.patients
        other = generate_cohort(SynthConfig(seed=1, n_patients=50), REG)
        assert other.patients != default_cohort.patients[:50]

    def test_feature_values_do_not_depend_on_cohort_size(self):
        reg = parse_schema(RISK_SCHEMA)
        small = generate_cohort(SynthConfig(n_patients=40), reg)
        big = generate_cohort(SynthConfig(n_patients=80), reg)
        assert [p.values for p in small.patients] == [p.values for p in big.patients[:40]]


class TestConfig:
    @pytest.mark.parametrize(
        "kw",
        [
            dict(n_patients=0),
            dict(overall_sptb=1.5),
            dict(missing_rate=1.0),
            dict(nulliparous_sptb=0.97, indicated_ptb=0.04),
            dict(retention=(0.5, 0.9)),
            dict(effect_sizes={"moon_phase": 2.0}),
            dict(effect_sizes={"smoking": 0.0}),
        ],
    )
    def test_infeasible(self, kw):
        with pytest.raises(ValueError):
            SynthConfig(**kw)

    def test_overall_rate_used_without_parity_rates(self):
        assert SynthConfig(nulliparous_sptb=None, overall_sptb=0.2).sptb_rates == (0.2, 0.2)

    def test_empty_registry(self):
        with pytest.raises(ValueError):
            generate_cohort(SynthConfig(n_patients=5), parse_schema(""))


class TestMissingness:
    SCHEMA = "\n".join(f"F{j:02d} G{j} T0 numeric(0,10) mean" for j in range(50))

    def _full(self, n=1000):
        reg = parse_schema(self.SCHEMA)
        pts = tuple(Patient(f"P{i}", {s.name: "5" for s in reg}, "fullterm", "n/a", "multiparous", Tick.T3) for i in range(n))
        return Cohort(pts), reg

    def test_rate_zero_unchanged(self):
        cohort, reg = self._full(20)
        assert inject_missingness(cohort, reg, 0.0).patients == cohort.patients

    def test_rate_binomial(self):
        cohort, reg = self._full()
        out = inject_missingness(cohort, reg, 0.3, seed=2)
        missing = sum(v is MISSING for p in out.patients for v in p.values.values())
        assert _within(missing, 50_000, 0.3)

    def test_group_blocks_all_or_none(self):
        reg = parse_schema(
            "HERPES INFEC T1 yesno default(0)\nBACTER INFEC T1 yesno default(0)\n"
            "CHLAM INFEC T1 yesno default(0)\nX1 A T0 numeric(0,1) mean\n"
        )
        pts = tuple(
            Patient(f"P{i}", {"HERPES": "0", "BACTER": "1", "CHLAM": "0", "X1": "0.5"}, "fullterm", "n/a", "multiparous", Tick.T3)
            for i in range(400)
        )
        out = inject_missingness(Cohort(pts), reg, 0.4, seed=5)
        blanked = 0
        for p in out.patients:
            states = {p.get(n) is MISSING for n in ("HERPES", "BACTER", "CHLAM")}
            assert len(states) == 1
            blanked += states.pop()
        assert _within(blanked, 400, 0.4)

    def test_bad_rate(self):
        cohort, reg = self._full(2)
        with pytest.raises(ValueError):
            inject_missingness(cohort, reg, 1.0)


def _recurrence(cohort):
    prior = [p for p in cohort.patients if p.get("PRETERM") == "1"]
    return np.mean([p.subtype == "spontaneous" for p in prior])


def test_signal_monotonicity():
    reg = parse_schema(RISK_SCHEMA)
    curve = []
    for m in (1.0, 2.0, 4.0, 8.0, 16.0):
        effects = dict(DEFAULT_EFFECTS, prior_ptb=m)
        curve.append(np.mean([_recurrence(generate_cohort(SynthConfig(n_patients=2000, seed=s, effect_sizes=effects), reg)) for s in range(3)]))
    assert all(b >= a for a, b in zip(curve, curve[1:])), curve
    assert curve[-1] > 0.4


def test_no_signal_gives_chance_level():
    # with every multiplier at 1 the outcome is independent of the features,
    # so sensitivity + specificity of any rule hovers around 1
    cfg = SynthConfig(seed=3, effect_sizes={k: 1.0 for k in DEFAULT_EFFECTS})
    cohort = generate_cohort(cfg, REG)
    data = derive_labels(slice_by_tick(cohort, REG, "T0"), "all")
    rep = run_experiment(data, "creasy7", SplitPlan(seed=3))
    balance = rep.mean("sensitivity") + rep.mean("specificity")
    assert abs(balance - 1.0) <= 0.1
    assert rep.mean("g_mean") <= 0.55
    assert abs(_recurrence(cohort) - 0.119) <= 0.05
