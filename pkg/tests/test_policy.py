"""Policy parsing and admission evaluation."""

import json

import pytest

from cdi import (
    Policy,
    PolicyParseError,
    PropertySet,
    ToolDescriptor,
    TrustAnchorSet,
    build_bundle,
    certify_authority,
    certify_tool,
    check_threshold,
    create_root_authority,
    evaluate,
    hash_bytes,
    load_policy,
    parse_policy,
    resolve_tags,
    write_verifying_key,
)
from cdi.policy import (
    ADMIT,
    DENY,
    MODE_ACCEPT_ALL,
    MODE_DEFAULT_DENY,
    RULE_PROVENANCE,
    RULE_REQUIRED_PROPERTIES,
    RULE_TAG,
    RULE_THRESHOLD,
)

from helpers import keypair, linear_bundle, make_report, make_setup


def make_policy(setup, **overrides) -> Policy:
    doc = {"mode": MODE_DEFAULT_DENY, "anchors": [setup.root_vk.key_id.hex]}
    doc.update(overrides)
    return parse_policy(json.dumps(doc))


class TestParsePolicy:
    def test_minimal_accept_all(self):
        policy = parse_policy('{"mode": "accept-all"}')
        assert policy.mode == MODE_ACCEPT_ALL
        assert len(policy.anchors) == 0

    def test_default_deny_with_anchor(self, setup):
        policy = make_policy(setup)
        assert policy.mode == MODE_DEFAULT_DENY
        assert setup.root_vk.key_id in policy.anchors

    def test_default_deny_requires_anchors(self):
        with pytest.raises(PolicyParseError) as excinfo:
            parse_policy('{"mode": "default-deny", "anchors": []}')
        assert "anchors" in str(excinfo.value)

    def test_missing_mode(self):
        with pytest.raises(PolicyParseError) as excinfo:
            parse_policy("{}")
        assert "mode" in str(excinfo.value)

    def test_unknown_mode(self):
        with pytest.raises(PolicyParseError):
            parse_policy('{"mode": "fail-open"}')

    def test_unknown_field(self):
        with pytest.raises(PolicyParseError) as excinfo:
            parse_policy('{"mode": "accept-all", "audit_log": "/var/log"}')
        assert "audit_log" in str(excinfo.value)

    def test_invalid_json_names_the_line(self):
        with pytest.raises(PolicyParseError) as excinfo:
            parse_policy('{"mode": }')
        assert excinfo.value.line == 1
        assert "line 1" in str(excinfo.value)

    def test_non_object_document(self):
        with pytest.raises(PolicyParseError):
            parse_policy('["accept-all"]')

    def test_anchor_key_file(self, setup, tmp_path):
        write_verifying_key(setup.root_vk, tmp_path / "root.pub")
        doc = {"mode": "default-deny", "anchors": ["root.pub"]}
        policy = parse_policy(json.dumps(doc), base_dir=tmp_path)
        assert setup.root_vk.key_id in policy.anchors

    def test_missing_anchor_key_file(self, tmp_path):
        doc = {"mode": "default-deny", "anchors": ["nope.pub"]}
        with pytest.raises(PolicyParseError) as excinfo:
            parse_policy(json.dumps(doc), base_dir=tmp_path)
        assert "anchors[0]" in str(excinfo.value)

    def test_non_string_anchor(self):
        with pytest.raises(PolicyParseError):
            parse_policy('{"mode": "accept-all", "anchors": [42]}')

    def test_required_tag_needs_tag_map_entry(self, setup):
        with pytest.raises(PolicyParseError) as excinfo:
            make_policy(setup, required_tags=["CODE_SANDBOXING"])
        assert "CODE_SANDBOXING" in str(excinfo.value)

    def test_invalid_tag_name(self, setup):
        with pytest.raises(PolicyParseError):
            make_policy(setup, required_tags=["code-sandboxing"], tag_map={})

    def test_tag_map_rejects_empty_property_set(self, setup):
        with pytest.raises(PolicyParseError):
            make_policy(setup, tag_map={"CODE_SANDBOXING": []})

    def test_tag_map_rejects_invalid_property(self, setup):
        with pytest.raises(PolicyParseError):
            make_policy(setup, tag_map={"CODE_SANDBOXING": ["wasm"]})

    def test_zero_threshold_rejected(self, setup):
        with pytest.raises(PolicyParseError):
            make_policy(setup, default_threshold=0)

    def test_non_integer_threshold_rejected(self, setup):
        with pytest.raises(PolicyParseError):
            make_policy(setup, operation_rules={"compile": {"threshold": "2"}})

    def test_unknown_rule_field_rejected(self, setup):
        with pytest.raises(PolicyParseError) as excinfo:
            make_policy(setup, operation_rules={"compile": {"min_version": "1.0"}})
        assert "operation_rules.compile" in str(excinfo.value)

    def test_duplicate_required_properties_rejected(self, setup):
        with pytest.raises(PolicyParseError):
            make_policy(
                setup, operation_rules={"compile": {"required_properties": ["A", "A"]}}
            )

    def test_rule_threshold_defaults_to_policy_default(self, setup):
        policy = make_policy(
            setup,
            default_threshold=3,
            operation_rules={"compile": {}, "link": {"threshold": 1}},
        )
        assert policy.rule_for("compile").threshold == 3
        assert policy.rule_for("link").threshold == 1
        # Unknown kinds also inherit the default.
        assert policy.rule_for("fetch").threshold == 3
        assert policy.rule_for("fetch").required_properties == ()

    def test_load_policy_id_is_digest_of_bytes(self, setup, tmp_path):
        raw = json.dumps({"mode": "accept-all"}).encode()
        path = tmp_path / "policy.json"
        path.write_bytes(raw)
        policy, policy_id = load_policy(path)
        assert policy.mode == MODE_ACCEPT_ALL
        assert policy_id == hash_bytes(raw)

    def test_reformatting_changes_policy_id(self, tmp_path):
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        a.write_text('{"mode": "accept-all"}')
        b.write_text('{"mode":    "accept-all"}')
        assert load_policy(a)[0] == load_policy(b)[0]
        assert load_policy(a)[1] != load_policy(b)[1]


def certs_from_roots(tool_vk, anchored: int, extra_same_root: int = 0):
    """Certifications for one tool: `anchored` distinct roots, plus
    `extra_same_root` more issued by intermediaries under the first root.
    Returns (root keys, certifications)."""
    tool = ToolDescriptor("wamrc", "1.0.0", tool_vk.key_id, tool_vk)
    properties = PropertySet.of(["REPRODUCIBLE_BUILD"])
    roots = []
    certs = []
    for index in range(anchored):
        root_sk, root_vk = keypair(f"t-root-{index}")
        roots.append((root_sk, root_vk))
        certs.append(certify_tool(root_sk, create_root_authority(root_vk), tool, properties))
    first_sk, first_vk = roots[0]
    for index in range(extra_same_root):
        mid_sk, mid_vk = keypair(f"t-mid-{index}")
        chain = certify_authority(first_sk, create_root_authority(first_vk), mid_vk)
        certs.append(certify_tool(mid_sk, chain, tool, properties))
    return [vk for _, vk in roots], certs


class TestCheckThreshold:
    def test_single_root_meets_one(self, setup, single_bundle):
        bundle, _ = single_bundle
        report = bundle.reports[bundle.final_report_id]
        result = check_threshold(report, 1, setup.anchors)
        assert result.satisfied
        assert result.distinct_roots == 1

    def test_same_root_counts_once(self, setup):
        # Three certification paths, all anchored at one root: that is one
        # independent authority, not three.
        roots, certs = certs_from_roots(setup.tool_vk, anchored=1, extra_same_root=2)
        report = make_report(setup, "fetch", b"out", certs=tuple(certs))
        anchors = TrustAnchorSet.from_keys(roots)
        result = check_threshold(report, 2, anchors)
        assert not result.satisfied
        assert result.distinct_roots == 1

    def test_distinct_roots_accumulate(self, setup):
        roots, certs = certs_from_roots(setup.tool_vk, anchored=3)
        report = make_report(setup, "fetch", b"out", certs=tuple(certs))
        anchors = TrustAnchorSet.from_keys(roots)
        assert check_threshold(report, 3, anchors).satisfied
        assert not check_threshold(report, 4, anchors).satisfied

    def test_unanchored_roots_do_not_count(self, setup):
        roots, certs = certs_from_roots(setup.tool_vk, anchored=3)
        report = make_report(setup, "fetch", b"out", certs=tuple(certs))
        anchors = TrustAnchorSet.from_keys(roots[:1])
        result = check_threshold(report, 2, anchors)
        assert not result.satisfied
        assert result.distinct_roots == 1

    def test_threshold_below_one_rejected(self, setup, single_bundle):
        bundle, _ = single_bundle
        report = bundle.reports[bundle.final_report_id]
        with pytest.raises(ValueError):
            check_threshold(report, 0, setup.anchors)


class TestResolveTags:
    def test_satisfied_with_witness(self, setup, single_bundle):
        bundle, _ = single_bundle
        policy = make_policy(
            setup,
            required_tags=["CODE_SANDBOXING"],
            tag_map={"CODE_SANDBOXING": ["WASM_SANDBOXING", "PROCESS_ISOLATION"]},
        )
        resolutions = resolve_tags(policy, bundle.reports[bundle.final_report_id])
        assert resolutions["CODE_SANDBOXING"].satisfied
        assert resolutions["CODE_SANDBOXING"].witness == ("WASM_SANDBOXING",)

    def test_unsatisfied_when_no_overlap(self, setup, single_bundle):
        bundle, _ = single_bundle
        policy = make_policy(
            setup,
            required_tags=["CODE_SANDBOXING"],
            tag_map={"CODE_SANDBOXING": ["PROCESS_ISOLATION"]},
        )
        resolutions = resolve_tags(policy, bundle.reports[bundle.final_report_id])
        assert not resolutions["CODE_SANDBOXING"].satisfied
        assert resolutions["CODE_SANDBOXING"].witness == ()

    def test_unverified_certifications_contribute_nothing(self, setup, single_bundle):
        bundle, _ = single_bundle
        other = make_setup(root_seed="elsewhere")
        policy = parse_policy(
            json.dumps(
                {
                    "mode": "default-deny",
                    "anchors": [other.root_vk.key_id.hex],
                    "required_tags": ["CODE_SANDBOXING"],
                    "tag_map": {"CODE_SANDBOXING": ["WASM_SANDBOXING"]},
                }
            )
        )
        resolutions = resolve_tags(policy, bundle.reports[bundle.final_report_id])
        assert not resolutions["CODE_SANDBOXING"].satisfied


class TestEvaluate:
    def test_default_deny_admits_valid_bundle(self, setup, diamond):
        policy = make_policy(setup)
        decision = evaluate(policy, diamond.bundle, diamond.artifact_digest)
        assert decision.admitted
        assert decision.verdict == ADMIT
        assert decision.reasons == ()
        assert len(decision.audit_trace) == 5

    def test_accept_all_admits_broken_bundle(self, setup, diamond):
        policy = parse_policy('{"mode": "accept-all"}')
        decision = evaluate(policy, diamond.bundle, hash_bytes(b"wrong"))
        assert decision.admitted
        assert decision.reasons == ()

    def test_accept_all_still_reports_the_trace(self, setup, diamond):
        policy = parse_policy(json.dumps({"mode": "accept-all", "anchors": [setup.root_vk.key_id.hex]}))
        decision = evaluate(policy, diamond.bundle, diamond.artifact_digest)
        assert decision.admitted
        assert len(decision.audit_trace) == 5

    def test_provenance_failure_reason(self, setup, diamond):
        policy = make_policy(setup)
        decision = evaluate(policy, diamond.bundle, hash_bytes(b"wrong"))
        assert not decision.admitted
        assert decision.verdict == DENY
        assert len(decision.reasons) == 1
        reason = decision.reasons[0]
        assert reason.rule == RULE_PROVENANCE
        assert reason.report_id == diamond.final.report_id
        assert "artifact-mismatch" in reason.detail

    def test_untrusted_root_denies(self, setup, single_bundle):
        bundle, digest = single_bundle
        other = make_setup(root_seed="elsewhere")
        policy = parse_policy(
            json.dumps({"mode": "default-deny", "anchors": [other.root_vk.key_id.hex]})
        )
        decision = evaluate(policy, bundle, digest)
        assert not decision.admitted
        assert decision.reasons[0].rule == RULE_PROVENANCE
        assert "untrusted-root" in decision.reasons[0].detail

    def test_threshold_reasons_follow_topological_order(self, setup, diamond):
        policy = make_policy(setup, operation_rules={"compile": {"threshold": 2}})
        decision = evaluate(policy, diamond.bundle, diamond.artifact_digest)
        assert not decision.admitted
        assert [reason.rule for reason in decision.reasons] == [RULE_THRESHOLD, RULE_THRESHOLD]
        expected = sorted(
            (diamond.mid_a.report_id, diamond.mid_b.report_id), key=lambda digest: digest.hex
        )
        assert [reason.report_id for reason in decision.reasons] == expected
        assert "found 1" in decision.reasons[0].detail

    def test_missing_required_property(self, setup, single_bundle):
        bundle, digest = single_bundle
        policy = make_policy(
            setup, operation_rules={"fetch": {"required_properties": ["FORMAL_VERIFICATION"]}}
        )
        decision = evaluate(policy, bundle, digest)
        assert not decision.admitted
        assert decision.reasons[0].rule == RULE_REQUIRED_PROPERTIES
        assert "FORMAL_VERIFICATION" in decision.reasons[0].detail

    def test_satisfied_required_property(self, setup, single_bundle):
        bundle, digest = single_bundle
        policy = make_policy(
            setup, operation_rules={"fetch": {"required_properties": ["WASM_SANDBOXING"]}}
        )
        assert evaluate(policy, bundle, digest).admitted

    def test_tag_reason_names_the_mapping(self, setup, single_bundle):
        bundle, digest = single_bundle
        policy = make_policy(
            setup,
            required_tags=["CODE_SANDBOXING"],
            tag_map={"CODE_SANDBOXING": ["PROCESS_ISOLATION"]},
        )
        decision = evaluate(policy, bundle, digest)
        assert not decision.admitted
        reason = decision.reasons[0]
        assert reason.rule == RULE_TAG
        assert reason.report_id == bundle.final_report_id
        assert reason.detail == "required tag CODE_SANDBOXING needs one of: PROCESS_ISOLATION"

    def test_satisfied_tag_admits(self, setup, single_bundle):
        bundle, digest = single_bundle
        policy = make_policy(
            setup,
            required_tags=["CODE_SANDBOXING"],
            tag_map={"CODE_SANDBOXING": ["WASM_SANDBOXING"]},
        )
        assert evaluate(policy, bundle, digest).admitted

    def test_rule_reasons_precede_tag_reasons(self, setup, diamond):
        policy = make_policy(
            setup,
            operation_rules={"link": {"threshold": 2}},
            required_tags=["MEMORY_SAFETY"],
            tag_map={"MEMORY_SAFETY": ["MEMORY_SAFE"]},
        )
        decision = evaluate(policy, diamond.bundle, diamond.artifact_digest)
        assert [reason.rule for reason in decision.reasons] == [RULE_THRESHOLD, RULE_TAG]

    def test_verdict_matches_reason_emptiness(self, setup, diamond):
        for policy in (
            make_policy(setup),
            make_policy(setup, default_threshold=2),
            make_policy(
                setup,
                required_tags=["CODE_SANDBOXING"],
                tag_map={"CODE_SANDBOXING": ["NOT_HELD"]},
            ),
        ):
            decision = evaluate(policy, diamond.bundle, diamond.artifact_digest)
            assert decision.admitted == (not decision.reasons)

    def test_evaluation_is_deterministic(self, setup, diamond):
        policy = make_policy(setup, default_threshold=2)
        first = evaluate(policy, diamond.bundle, diamond.artifact_digest)
        second = evaluate(policy, diamond.bundle, diamond.artifact_digest)
        assert first == second

    def test_decision_json_shape(self, setup, single_bundle):
        bundle, digest = single_bundle
        decision = evaluate(make_policy(setup), bundle, digest)
        doc = decision.to_json_dict()
        assert set(doc) == {"verdict", "reasons", "audit_trace"}
        assert doc["verdict"] == "admit"
        assert doc["audit_trace"][0]["tool_name"] == "wamrc"

    def test_longer_pipeline_admits(self, setup):
        bundle, digest = linear_bundle(setup, 4)
        assert evaluate(make_policy(setup), bundle, digest).admitted
