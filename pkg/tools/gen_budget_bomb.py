#!/usr/bin/env python3
"""Regenerate the budget_bomb fixture: a dense ring of methods shuttling
device-information values around so the taint fixpoint outlives a small
wall-clock budget. Run from the repository root."""

import json
from pathlib import Path

N = 96         # methods in the ring
OFFSETS = (1, 2, 3, 5, 8, 13, 21, 34)  # call targets per method
FIELDS = ["BRAND", "DEVICE", "DISPLAY", "FINGERPRINT", "MANUFACTURER", "MODEL", "PRODUCT"]
CLASS = "Lcom/fixtures/bomb/CallWeb;"

OUT = Path(__file__).resolve().parent.parent / "src/devscan/fixtures/corpus/budget_bomb"


def method_body(i: int) -> str:
    # v1 accumulates the union of the field read, the parameter and every
    # callee return; unions need join points, hence the diamonds
    lines = [
        f".method public static m{i:02d}(Ljava/lang/String;)Ljava/lang/String;",
        "    .registers 8",
        f"    sget-object v0, Landroid/os/Build;->{FIELDS[i % len(FIELDS)]}:Ljava/lang/String;",
        "    if-nez v0, :param",
        "    move-object v1, v0",
        "    goto :seeded",
        "    :param",
        "    move-object v1, p0",
        "    :seeded",
        "    nop",
    ]
    for k in OFFSETS:
        callee = (i + k) % N
        lines += [
            f"    invoke-static {{v1}}, {CLASS}->m{callee:02d}(Ljava/lang/String;)Ljava/lang/String;",
            "    move-result-object v2",
            f"    if-nez v2, :ret{k}",
            "    move-object v3, v1",
            f"    goto :acc{k}",
            f"    :ret{k}",
            "    move-object v3, v2",
            f"    :acc{k}",
            "    move-object v4, v3",
            "    move-object v5, v4",
            "    move-object v1, v5",
        ]
    lines += [
        "    return-object v1",
        ".end method",
        "",
    ]
    return "\n".join(lines)


def main() -> None:
    smali_dir = OUT / "smali"
    smali_dir.mkdir(parents=True, exist_ok=True)
    parts = [f".class public {CLASS}", ".super Ljava/lang/Object;", ""]
    parts += [method_body(i) for i in range(N)]
    (smali_dir / "CallWeb.smali").write_text("\n".join(parts), encoding="utf-8")

    manifest = {
        "fixture_id": "budget_bomb",
        "description": (
            "Pathological call web: a ring of methods that pass and return "
            "device strings through each other until the analysis budget runs out."
        ),
        "expect_status": "partial_timeout",
        "budget_seconds": 2.0,
        "oracle_eligible": False,
        "expected_sources": [],
        "expected_guards": [],
        "expected_snippets": [],
    }
    (OUT / "manifest.json").write_text(
        json.dumps(manifest, indent=2) + "\n", encoding="utf-8"
    )
    print(f"wrote {smali_dir / 'CallWeb.smali'}")


if __name__ == "__main__":
    main()
