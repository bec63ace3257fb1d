import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SMALL_SCHEMA, make_patient, table2_cohort
from pretermpred.schema import (
    MISSING,
    Cohort,
    DegenerateDatasetError,
    FeatureRegistry,
    ProblemVariant,
    SchemaError,
    Tick,
    default_registry,
    derive_labels,
    load_schema,
    parse_schema,
    parse_spec_line,
    read_cohort_csv,
    slice_by_tick,
    write_cohort_csv,
)


class TestDescriptor:
    def test_bundled_counts(self):
        reg = default_registry()
        assert reg.feature_count(Tick.T0) == 50
        assert reg.feature_count(Tick.T1) == 205
        assert reg.feature_count(Tick.T3) == 316

    def test_empty_descriptor(self):
        reg = parse_schema("")
        assert len(reg) == 0
        assert all(reg.feature_count(t) == 0 for t in Tick)

    def test_duplicate_name_reports_second_line(self):
        text = "AGEMOM DMG T0 numeric(17,40) mean\nX DMG T0 yesno mode\nAGEMOM DMG T0 numeric(17,40) mean\n"
        with pytest.raises(SchemaError, match="line 3"):
            parse_schema(text)

    @pytest.mark.parametrize(
        "line",
        [
            "A DMG T0 banana mode",
            "A DMG T0 numeric(5,1) mean",
            "A DMG T0 numeric(1) mean",
            "A DMG T9 yesno mode",
            "A DMG T0 categorical() mode",
            "A DMG T0 categorical(a,a) mode",
            "A DMG T0 yesno sometimes",
        ],
    )
    def test_malformed_lines(self, line):
        with pytest.raises(SchemaError, match="line 1"):
            parse_schema(line)

    def test_group_in_two_ticks_rejected(self):
        with pytest.raises(SchemaError):
            parse_schema("A G T0 yesno mode\nB G T1 yesno mode\n")

    def test_reserved_names_rejected(self):
        with pytest.raises(SchemaError):
            parse_schema("OUTCOME G T0 yesno mode\n")

    def test_declaration_order_and_lookups(self, small_registry):
        assert small_registry.names[:3] == ("AGEMOM", "BPMARITL", "BPKIDS")
        assert [s.name for s in small_registry.by_group("INFEC")] == ["HERPES", "BACTER"]
        assert [s.name for s in small_registry.by_tick(Tick.T1)] == ["HERPES", "BACTER"]
        assert small_registry.groups["CPM3"] is Tick.T3

    def test_describe_round_trip(self, small_registry):
        again = parse_schema(small_registry.describe())
        assert again.names == small_registry.names
        assert [s.describe() for s in again] == [s.describe() for s in small_registry]

    def test_spec_line_fields(self):
        spec = parse_spec_line("AGEMOM DMG T0 numeric(17,40) mean replace=≤17:17,≥40:40")
        assert (spec.lower, spec.upper) == (17, 40)
        assert spec.replacements == {"≤17": 17.0, "≥40": 40.0}

    def test_load_schema_file(self, tmp_path):
        path = tmp_path / "s.txt"
        path.write_text(SMALL_SCHEMA, encoding="utf-8")
        assert load_schema(path).names == parse_schema(SMALL_SCHEMA).names

    def test_cumulative_feature_sets(self):
        reg = default_registry()
        t0, t1, t3 = (set(s.name for s in reg.up_to(t)) for t in Tick)
        assert t0 < t1 < t3


class TestSlicing:
    def test_bundled_tick_views(self):
        reg = default_registry()
        empty = Cohort(())
        assert len(slice_by_tick(empty, reg, "T0").features) == 50
        assert len(slice_by_tick(empty, reg, "T3").features) == 316
        view = slice_by_tick(empty, reg, Tick.T0)
        assert len(view) == 0

    def test_attrition_drops_patients(self, small_registry):
        cohort = Cohort((make_patient(0, last=Tick.T0), make_patient(1, last=Tick.T1), make_patient(2)))
        assert [len(slice_by_tick(cohort, small_registry, t)) for t in Tick] == [3, 2, 1]


class TestLabels:
    def test_reference_class_sizes(self):
        view = slice_by_tick(table2_cohort(), FeatureRegistry(), Tick.T0)
        all_ = derive_labels(view, "all")
        assert (all_.n_pos, all_.n_neg) == (434, 2568)
        spont = derive_labels(view, "spontaneous_only")
        assert (spont.n_pos, spont.n_neg, spont.n_excluded) == (309, 2568, 125)
        nul = derive_labels(view, "nulliparous_only")
        assert (nul.n_pos, nul.n_neg) == (156, 1087)

    def test_partition(self):
        view = slice_by_tick(table2_cohort(), FeatureRegistry(), Tick.T0)
        d = derive_labels(view, ProblemVariant.ALL)
        assert d.n_pos + d.n_neg == len(view)
        s = derive_labels(view, ProblemVariant.SPONTANEOUS_ONLY)
        assert s.n_pos + s.n_neg + s.n_excluded == len(view)

    def test_degenerate_variant(self):
        cohort = Cohort(tuple(make_patient(i) for i in range(5)))
        view = slice_by_tick(cohort, FeatureRegistry(), Tick.T0)
        with pytest.raises(DegenerateDatasetError):
            derive_labels(view, "all")

    def test_subtype_outcome_consistency(self):
        with pytest.raises(SchemaError):
            make_patient(0, "fullterm", "spontaneous")
        with pytest.raises(SchemaError):
            make_patient(0, "preterm", "n/a")

    def test_labels_are_deterministic(self):
        view = slice_by_tick(table2_cohort(), FeatureRegistry(), Tick.T0)
        a = derive_labels(view, "nulliparous_only").labels
        b = derive_labels(view, "nulliparous_only").labels
        assert a.tobytes() == b.tobytes()
        assert set(np.unique(a)) == {-1, 1}


class TestCohortCsv:
    def test_round_trip(self, tmp_path, small_registry):
        cohort = Cohort(
            (
                make_patient(0, AGEMOM="≥40", BPMARITL="2", PRETERM=MISSING),
                make_patient(1, "preterm", "indicated", "nulliparous", Tick.T1, AGEMOM="25", BPKIDS=">3"),
            )
        )
        path = tmp_path / "c.csv"
        write_cohort_csv(cohort, path, small_registry)
        back = read_cohort_csv(path, small_registry)
        assert [p.id for p in back.patients] == ["P0", "P1"]
        assert back.patients[0].get("AGEMOM") == "≥40"
        assert back.patients[0].get("PRETERM") is MISSING
        assert back.patients[1].last_tick is Tick.T1
        back.validate(small_registry)

    def test_unknown_column(self, tmp_path, small_registry):
        path = tmp_path / "c.csv"
        path.write_text("NOPE,OUTCOME,SUBTYPE,PARITY\n1,fullterm,n/a,nulliparous\n", encoding="utf-8")
        with pytest.raises(SchemaError, match="NOPE"):
            read_cohort_csv(path, small_registry)

    def test_validate_rejects_out_of_range(self, small_registry):
        with pytest.raises(SchemaError):
            Cohort((make_patient(0, WGTPRE="500"),)).validate(small_registry)
        with pytest.raises(SchemaError):
            Cohort((make_patient(0, NOTAFEATURE="1"),)).validate(small_registry)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["fullterm", "spontaneous", "indicated"]),
                          st.booleans(), st.sampled_from(list(Tick))), min_size=0, max_size=40))
def test_partition_property(rows):
    patients = []
    for i, (kind, nullip, last) in enumerate(rows):
        outcome = "fullterm" if kind == "fullterm" else "preterm"
        subtype = "n/a" if kind == "fullterm" else kind
        patients.append(make_patient(i, outcome, subtype, "nulliparous" if nullip else "multiparous", last))
    cohort = Cohort(tuple(patients))
    for tick in Tick:
        view = slice_by_tick(cohort, FeatureRegistry(), tick)
        for variant in ProblemVariant:
            try:
                d = derive_labels(view, variant)
            except DegenerateDatasetError:
                continue
            assert d.n_pos >= 1 and d.n_neg >= 1
            assert d.n_pos + d.n_neg + d.n_excluded == len(view)
