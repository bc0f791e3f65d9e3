import json
import zipfile

import pytest

from devscan.fixtures import corpus_root
from devscan.report import (
    AppReport,
    Budgets,
    Bucket,
    Status,
    aggregate,
    analyze_app,
    attribute_sources,
    bucket_package,
    canonical_json,
    load_report,
    merge_corpus_reports,
    save_report,
    sdk_prefixes_default,
)


def smali_root(fid):
    return corpus_root() / fid / "smali"


def fixture_apk(tmp_path, fid):
    manifest = json.loads((corpus_root() / fid / "manifest.json").read_text())
    path = tmp_path / f"{fid}.apk"
    with zipfile.ZipFile(path, "w") as zf:
        for name in manifest["apk_entries"]:
            zf.writestr(name, b"x")
    return path


# -- analyze_app -----------------------------------------------------------------

def test_end_to_end_oppo(device_db, rules):
    report = analyze_app(smali_root("oppo_perm"), db=device_db, rules=rules)
    assert report.analysis_status == Status.OK
    assert report.guards == 1
    assert len(report.snippets) == 1
    assert report.snippets[0]["categories"] == ["Permission Management"]
    assert report.brands == ["OPPO"]
    assert report.functionalities == ["Permission Management"]
    assert report.source_counts == {"build_field_read": 1}
    assert report.taint_converged


def test_functionalities_within_rule_categories(device_db, rules):
    allowed = set(rules.categories) | {"unclassified"}
    for fid in ("oppo_perm", "build_fields", "meizu_imei", "multi_guard", "nullcheck"):
        report = analyze_app(smali_root(fid), db=device_db, rules=rules)
        assert set(report.functionalities) <= allowed


def test_zero_source_app_is_clean(device_db, rules):
    report = analyze_app(smali_root("zero_sources"), db=device_db, rules=rules)
    assert report.analysis_status == Status.OK
    assert report.snippets == []
    assert report.source_counts == {}


def test_packed_app_filtered(tmp_path, device_db, rules):
    apk = fixture_apk(tmp_path, "packed_app")
    report = analyze_app(smali_root("packed_app"), apk=apk, db=device_db, rules=rules)
    assert report.analysis_status == Status.FAILED
    assert report.failure_reason == "packed"
    assert report.packing["packed"] is True
    assert report.snippets == [] and report.source_counts == {}


def test_unpacked_apk_proceeds(tmp_path, device_db, rules):
    apk = fixture_apk(tmp_path, "oppo_perm")
    report = analyze_app(smali_root("oppo_perm"), apk=apk, db=device_db, rules=rules)
    assert report.analysis_status == Status.OK
    assert report.packing["packed"] is False
    assert report.guards == 1


def test_missing_root_fails(tmp_path, device_db, rules):
    report = analyze_app(tmp_path / "missing", db=device_db, rules=rules)
    assert report.analysis_status == Status.FAILED
    assert "missing" in report.failure_reason


def test_budget_exhaustion_partial(device_db, rules):
    report = analyze_app(
        smali_root("budget_bomb"),
        db=device_db,
        rules=rules,
        budgets=Budgets(wall_clock_seconds=2.0),
    )
    assert report.analysis_status == Status.PARTIAL_TIMEOUT
    assert report.wall_time_seconds >= 2.0
    assert not report.taint_converged
    # partial report still well-formed
    data = report.to_json_dict()
    assert AppReport.from_json_dict(json.loads(canonical_json(data))).app_id == report.app_id


# -- source attribution --------------------------------------------------------------

def test_bucket_known_sdk():
    assert bucket_package("cn.jpush.android", ("cn.jpush",)) == Bucket.KNOWN_SDK


def test_bucket_obfuscated():
    assert bucket_package("a.b.c", ()) == Bucket.OBFUSCATED
    assert bucket_package("a.b", ()) == Bucket.OBFUSCATED
    assert bucket_package("com.company.a.b", ()) == Bucket.OBFUSCATED


def test_bucket_developer():
    assert bucket_package("com.example.myapp.ui", ()) == Bucket.DEVELOPER
    assert bucket_package("com.example", ()) == Bucket.DEVELOPER


def test_attribution_counts_snippets(device_db, rules):
    report = analyze_app(smali_root("oppo_perm"), db=device_db, rules=rules)
    attribution = attribute_sources(report, sdk_prefixes_default())
    assert attribution == {
        "com.fixtures.oppo": {"bucket": "developer", "frequency": 1}
    }


def test_attribution_prefix_override(device_db, rules):
    report = analyze_app(smali_root("oppo_perm"), db=device_db, rules=rules)
    attribution = attribute_sources(report, ("com.fixtures",))
    assert attribution["com.fixtures.oppo"]["bucket"] == "known_sdk"


# -- aggregation ------------------------------------------------------------------------

def _report(app_id, market, brands=(), oses=(), models=(), cats=(), snippets=1, status=Status.OK):
    return AppReport(
        app_id=app_id,
        market=market,
        analysis_status=status,
        brands=sorted(brands),
        oses=sorted(oses),
        models=sorted(models),
        functionalities=sorted(cats),
        snippets=[{"categories": list(cats)}] * snippets,
    )


def test_average_brands():
    reports = [
        _report("a", "m", brands=("OPPO", "vivo")),
        _report("b", "m", brands=("OPPO", "vivo", "Xiaomi", "Huawei")),
    ]
    corpus = aggregate(reports)
    group = corpus.to_json_dict()["groups"]["m"]
    assert group["avg_brands"] == 3.0


def test_category_table_rows():
    corpus = aggregate([_report("a", "m", cats=("X", "Y", "Z"))])
    table = corpus.to_json_dict()["groups"]["m"]["category_counts"]
    assert table == [["X", 1], ["Y", 1], ["Z", 1]]


def test_counts_follow_status():
    reports = [
        _report("ok1", "m", brands=("OPPO",)),
        _report("empty", "m", snippets=0),
        _report("packed", "m", snippets=0, status=Status.FAILED),
        _report("slow", "m", snippets=0, status=Status.PARTIAL_TIMEOUT),
    ]
    reports[2].failure_reason = "packed"
    group = aggregate(reports).to_json_dict()["groups"]["m"]
    assert group["apps_total"] == 4
    assert group["unpacked"] == 3
    assert group["analyzed"] == 2
    assert group["with_behaviors"] == 1
    assert group["with_behaviors"] <= group["analyzed"] <= group["unpacked"] <= group["apps_total"]


def test_tables_sorted_desc_then_lexicographic():
    reports = [
        _report("a", "m", brands=("OPPO",)),
        _report("b", "m", brands=("OPPO", "Huawei")),
        _report("c", "m", brands=("Xiaomi",)),
    ]
    table = aggregate(reports).to_json_dict()["groups"]["m"]["brand_counts"]
    assert table == [["OPPO", 2], ["Huawei", 1], ["Xiaomi", 1]]


def test_merge_matches_whole(device_db, rules):
    reports = [
        _report("a", "play", brands=("OPPO",), cats=("X",)),
        _report("b", "play", brands=("vivo", "OPPO"), cats=("X", "Y")),
        _report("c", "cn", brands=("Xiaomi",), cats=("Y",)),
        _report("d", "cn", snippets=0),
    ]
    whole = aggregate(reports)
    merged = merge_corpus_reports([aggregate(reports[:2]), aggregate(reports[2:])])
    assert whole.to_json_dict() == merged.to_json_dict()


def test_aggregate_requires_reports():
    with pytest.raises(ValueError):
        aggregate([])


def test_ten_fixture_corpus_totals(device_db, rules):
    ids = [
        "oppo_perm", "meizu_imei", "build_fields", "sysprop_direct", "interproc_ret",
        "param_pass", "zero_sources", "autostart_xiaomi", "autostart_vivo", "oaid_samsung",
    ]
    reports = [
        analyze_app(smali_root(fid), db=device_db, rules=rules, app_id=fid)
        for fid in ids
    ]
    totals = aggregate(reports).to_json_dict()["totals"]
    assert totals["apps_total"] == 10
    assert totals["analyzed"] == 10
    assert totals["with_behaviors"] == 9  # all but zero_sources
    brand_counts = dict(tuple(x) for x in [tuple(r) for r in totals["brand_counts"]])
    assert brand_counts["OPPO"] == 1
    assert brand_counts["Xiaomi"] == 2  # interproc_ret and autostart_xiaomi
    category_counts = dict(tuple(r) for r in totals["category_counts"])
    assert category_counts["Permission Management"] == 4
    assert category_counts["OAID"] == 2  # param_pass and oaid_samsung


# -- JSON round-trip ----------------------------------------------------------------------

def test_report_json_roundtrip_byte_identical(device_db, rules, tmp_path):
    report = analyze_app(smali_root("oppo_perm"), db=device_db, rules=rules)
    first = canonical_json(report.to_json_dict())
    parsed = AppReport.from_json_dict(json.loads(first))
    second = canonical_json(parsed.to_json_dict())
    assert first == second

    path = tmp_path / "report.json"
    save_report(report, path)
    assert canonical_json(load_report(path).to_json_dict()) == first


def test_corpus_report_roundtrip(device_db, rules):
    reports = [_report("a", "m", brands=("OPPO",), cats=("X",))]
    corpus = aggregate(reports)
    text = canonical_json(corpus.to_json_dict())
    assert canonical_json(json.loads(text)) == text
