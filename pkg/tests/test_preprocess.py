import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import make_patient
from pretermpred.preprocess import (
    EncodedMatrix,
    EncodingError,
    ImputationError,
    apply_normalizer,
    column_names,
    decode_value,
    drop_sparse,
    encode,
    encode_record,
    encode_value,
    fit_imputer,
    fit_normalizer,
    fit_preprocessor,
    impute,
)
from pretermpred.schema import MISSING, Cohort, Tick, parse_schema, parse_spec_line, slice_by_tick


def spec(line):
    return parse_spec_line(line)


AGE = spec("AGEMOM DMG T0 numeric(17,40) mean replace=≤17:17,≥40:40")
KIDS = spec("BPKIDS DMG T0 ordinal(0,4) mode replace=2-3:2.5,>3:4")
MARITL = spec("BPMARITL DMG T0 categorical(1,2,3,4) mode")
HERPES = spec("HERPES INFEC T1 yesno default(0)")


def matrix(values, columns, sources=None):
    values = np.asarray(values, dtype=float)
    return EncodedMatrix(values, np.isnan(values), tuple(columns), tuple(sources or columns))


class TestEncode:
    def test_clamped_extremes(self):
        assert encode_value(AGE, "≥40") == (40.0,)
        assert encode_value(AGE, "≤17") == (17.0,)
        assert encode_value(AGE, "29") == (29.0,)

    def test_unusual_tokens(self):
        assert encode_value(KIDS, ">3") == (4.0,)
        assert encode_value(KIDS, "2-3") == (2.5,)

    def test_one_hot(self):
        assert encode_value(MARITL, "2") == (0.0, 1.0, 0.0, 0.0)
        assert column_names(MARITL) == ("BPMARITL_1", "BPMARITL_2", "BPMARITL_3", "BPMARITL_4")

    def test_yes_no(self):
        assert encode_value(HERPES, "yes") == (1.0,)
        assert encode_value(HERPES, "0") == (0.0,)

    @pytest.mark.parametrize("s,token", [(AGE, "old"), (MARITL, "9"), (HERPES, "maybe"), (KIDS, "lots")])
    def test_unknown_token_names_feature(self, s, token):
        with pytest.raises(EncodingError, match=s.name) as exc:
            encode_value(s, token)
        assert token in str(exc.value)

    @pytest.mark.parametrize("s,token", [(HERPES, "1"), (HERPES, "0"), (MARITL, "1"), (MARITL, "4")])
    def test_round_trip(self, s, token):
        assert decode_value(s, encode_value(s, token)) == token

    def test_encode_view_mask(self):
        reg = parse_schema("AGEMOM DMG T0 numeric(17,40) mean\nBPMARITL DMG T0 categorical(1,2) mode\n")
        cohort = Cohort((make_patient(0, AGEMOM="30", BPMARITL=MISSING), make_patient(1, AGEMOM=MISSING, BPMARITL="2")))
        m = encode(slice_by_tick(cohort, reg, Tick.T0))
        assert m.columns == ("AGEMOM", "BPMARITL_1", "BPMARITL_2")
        assert m.mask.tolist() == [[False, True, True], [True, False, False]]
        assert m.values[1, 1:].tolist() == [0.0, 1.0]

    def test_encode_record(self):
        rec = encode_record([AGE, MARITL], {"AGEMOM": "≥40", "BPMARITL": MISSING})
        assert rec == {"AGEMOM": 40.0, "BPMARITL_1": None, "BPMARITL_2": None, "BPMARITL_3": None, "BPMARITL_4": None}


class TestDropSparse:
    def test_threshold(self):
        col80 = [np.nan] * 8 + [1, 2]
        full = list(range(10))
        m = matrix(np.column_stack([col80, full]), ["A", "B"])
        kept, dropped = drop_sparse(m, 0.5)
        assert kept.columns == ("B",) and dropped == ["A"]
        assert drop_sparse(m, 1.0)[0].columns == ("A", "B")
        assert drop_sparse(matrix(np.column_stack([full]), ["B"]), 0.01)[0].columns == ("B",)

    def test_cpm_like_fixture(self):
        # 11 columns with known missing fractions; three exceed one half
        fracs = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.9, 0.05, 0.45]
        n = 20
        cols = []
        for f in fracs:
            c = np.arange(n, dtype=float)
            c[: int(round(f * n))] = np.nan
            cols.append(c)
        names = [f"CPM_{i}" for i in range(11)]
        kept, dropped = drop_sparse(matrix(np.column_stack(cols), names), 0.5)
        assert len(kept.columns) == 8
        assert dropped == ["CPM_6", "CPM_7", "CPM_8"]

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            drop_sparse(matrix([[1.0]], ["A"]), 0)


class TestImpute:
    def test_default_policy(self):
        m = matrix([[np.nan], [1.0], [np.nan]], ["HERPES"])
        state = fit_imputer(m, {"HERPES": HERPES})
        assert impute(state, m).values[:, 0].tolist() == [0.0, 1.0, 0.0]

    def test_all_missing_default_column(self):
        m = matrix([[np.nan], [np.nan]], ["HERPES"])
        out = impute(fit_imputer(m, {"HERPES": HERPES}), m)
        assert out.values.tolist() == [[0.0], [0.0]]
        assert not out.mask.any()

    def test_mean(self):
        m = matrix([[2.0], [4.0], [np.nan]], ["AGEMOM"])
        assert impute(fit_imputer(m, {"AGEMOM": AGE}), m).values[2, 0] == 3.0

    def test_zero_observed_without_default(self):
        m = matrix([[np.nan], [np.nan]], ["AGEMOM"])
        with pytest.raises(ImputationError):
            fit_imputer(m, {"AGEMOM": AGE})

    def test_weight_offset_rule(self):
        pre = spec("WGTPRE CPM T0 numeric(30,150) mean")
        v1 = spec("WEIGHTV1 CPM T0 numeric(30,160) derived(offset:WGTPRE)")
        # training gains 4, 5 -> mean gain 4.5
        m = matrix([[50.0, 54.0], [70.0, 75.0], [60.0, np.nan]], ["WGTPRE", "WEIGHTV1"])
        out = impute(fit_imputer(m, {"WGTPRE": pre, "WEIGHTV1": v1}), m)
        assert out.values[2, 1] == pytest.approx(64.5)

    def test_offset_rule_base_also_missing(self):
        pre = spec("WGTPRE CPM T0 numeric(30,150) mean")
        v1 = spec("WEIGHTV1 CPM T0 numeric(30,160) derived(offset:WGTPRE)")
        m = matrix([[50.0, 54.0], [70.0, 75.0], [np.nan, np.nan]], ["WGTPRE", "WEIGHTV1"])
        out = impute(fit_imputer(m, {"WGTPRE": pre, "WEIGHTV1": v1}), m)
        # falls back to the column mean of WEIGHTV1
        assert out.values[2, 1] == pytest.approx(64.5)
        assert out.values[2, 0] == pytest.approx(60.0)

    def test_hand_completed_fixture(self):
        # 5 x 4 fixture: yesno default, numeric mean, ordinal mode, categorical mode
        kids = spec("BPKIDS DMG T0 ordinal(0,4) mode")
        cat = spec("C DMG T0 categorical(a,b) mode")
        specs = {"HERPES": HERPES, "AGEMOM": AGE, "BPKIDS": kids, "C": cat}
        nan = np.nan
        values = [
            [1, 20, 1, 1, 0],
            [nan, 30, 2, 0, 1],
            [0, nan, 2, 0, 1],
            [0, 25, nan, nan, nan],
            [nan, 35, 1, 0, 1],
        ]
        m = matrix(values, ["HERPES", "AGEMOM", "BPKIDS", "C_a", "C_b"], ["HERPES", "AGEMOM", "BPKIDS", "C", "C"])
        expected = [
            [1, 20, 1, 1, 0],
            [0, 30, 2, 0, 1],
            [0, 27.5, 2, 0, 1],
            [0, 25, 1, 0, 1],  # mode tie 1 vs 2 -> lower; level b most common
            [0, 35, 1, 0, 1],
        ]
        out = impute(fit_imputer(m, specs), m)
        np.testing.assert_allclose(out.values, expected)

    def test_complete_matrix_unchanged(self, rng):
        vals = rng.uniform(20, 30, size=(6, 1))
        m = matrix(vals, ["AGEMOM"])
        assert np.array_equal(impute(fit_imputer(m, {"AGEMOM": AGE}), m).values, vals)

    def test_column_mismatch(self):
        m = matrix([[1.0]], ["AGEMOM"])
        state = fit_imputer(m, {"AGEMOM": AGE})
        with pytest.raises(ImputationError):
            impute(state, matrix([[1.0]], ["OTHER"]))


class TestNormalize:
    def test_min_max(self):
        m = matrix([[10.0], [20.0], [30.0]], ["A"])
        assert apply_normalizer(fit_normalizer(m), m)[:, 0].tolist() == [0.0, 0.5, 1.0]

    def test_constant_column(self):
        m = matrix([[7.0], [7.0]], ["A"])
        state = fit_normalizer(m)
        assert state.constant.tolist() == [True]
        assert apply_normalizer(state, m)[:, 0].tolist() == [0.0, 0.0]

    def test_clamp(self):
        state = fit_normalizer(matrix([[10.0], [30.0]], ["A"]))
        assert apply_normalizer(state, np.array([[35.0], [5.0]]))[:, 0].tolist() == [1.0, 0.0]

    @settings(max_examples=40, deadline=None)
    @given(arrays(float, (6, 3), elements=st.floats(-1e3, 1e3)))
    def test_range_and_idempotence(self, vals):
        m = matrix(vals, ["A", "B", "C"])
        state = fit_normalizer(m)
        out = apply_normalizer(state, m)
        assert np.all((out >= 0) & (out <= 1))
        unit = fit_normalizer(matrix(np.array([[0.0] * 3, [1.0] * 3]), ["A", "B", "C"]))
        np.testing.assert_array_equal(apply_normalizer(unit, apply_normalizer(unit, out)), apply_normalizer(unit, out))


def _cohort(n, rng):
    patients = []
    for i in range(n):
        patients.append(
            make_patient(
                i,
                AGEMOM=str(int(rng.integers(17, 41))) if rng.random() > 0.2 else MISSING,
                BPMARITL=str(int(rng.integers(1, 5))) if rng.random() > 0.2 else MISSING,
                BPKIDS=str(int(rng.integers(0, 5))),
                PRETERM="1" if rng.random() < 0.2 else MISSING,
                WGTPRE=f"{rng.uniform(45, 90):.1f}",
                WEIGHTV1=f"{rng.uniform(50, 95):.1f}" if rng.random() > 0.3 else MISSING,
            )
        )
    return Cohort(tuple(patients))


class TestPipeline:
    def test_output_complete_and_unit_range(self, small_registry, rng):
        view = slice_by_tick(_cohort(40, rng), small_registry, Tick.T0)
        pre = fit_preprocessor(view)
        X = pre.transform(view)
        assert not np.isnan(X).any()
        assert X.min() >= 0 and X.max() <= 1

    def test_fitted_state_ignores_row_order(self, small_registry, rng):
        view = slice_by_tick(_cohort(50, rng), small_registry, Tick.T0)
        perm = rng.permutation(len(view))
        shuffled = type(view)(view.tick, view.features, tuple(view.patients[i] for i in perm))
        a, b = fit_preprocessor(view), fit_preprocessor(shuffled)
        for fa, fb in zip(a.imputer.fills, b.imputer.fills):
            assert fa.feature == fb.feature and fa.base == fb.base
            np.testing.assert_allclose(fa.fill, fb.fill, rtol=1e-12)
            assert fa.offset == pytest.approx(fb.offset, rel=1e-12)
        np.testing.assert_array_equal(a.normalizer.lower, b.normalizer.lower)
        np.testing.assert_allclose(a.transform(view)[perm], b.transform(shuffled), atol=1e-12)

    def test_dropped_base_falls_back_to_mean(self, small_registry, rng):
        patients = [
            make_patient(i, WGTPRE=MISSING if i % 4 else "60", WEIGHTV1=MISSING if i == 0 else f"{60 + i}")
            for i in range(12)
        ]
        view = slice_by_tick(Cohort(tuple(patients)), small_registry, Tick.T0)
        pre = fit_preprocessor(view, 0.5)
        assert "WGTPRE" in pre.dropped
        assert pre.imputer.fill_for("WEIGHTV1").base is None
