//! Scenario fixtures shared by the golden tests and the acceptance suite.

use hitl_core::events::EventLog;
use hitl_core::harness::{Instance, RunParams, Runner};
use hitl_core::kr::KnowledgeItem;
use hitl_core::llm::ScriptedLlm;
use hitl_core::oracle::{ClarificationScript, ScriptedOracleTable, TruthRecord};

use super::*;

/// 2025-04-10 and 2025-05-05 as epoch seconds.
pub const APRIL_10: i64 = 1_744_243_200;
pub const MAY_5: i64 = 1_746_403_200;

pub const EXACT_PINYIN: &str = "Exact pinyin match is required for Chinese names.";
pub const EXACT_PINYIN_SHORT: &str = "Exact pinyin match required for Chinese names.";
pub const RELAXED_PINYIN: &str = "For Chinese names, minor pinyin variations (e.g., 'Zhang' vs 'Zang') are acceptable if other identifiers (like DOB) match closely. Exact match is no longer strictly required.";
pub const CONDITIONAL_PINYIN: &str =
    "Allow minor pinyin variations for common names like 'Zhang/Zang' if DOB is exact.";
pub const CONDITIONAL_EXTRACT: &str =
    "1. [rule:Rule_124] Allow minor pinyin variations for common names like 'Zhang/Zang' if DOB is exact.";

pub const MALAY_FEEDBACK: &str = "1. Yes, this is a True Match. 'Siti' is a common honorific/first name component and 'Aishah binti Hamid' is often shortened to 'Aishah Hamid'. 2. For PEP Level 3, a Month/Year DOB match is sufficient if other identifiers (like name components and nationality) strongly align. The day difference is acceptable in this context. This is policy revision `Pol_Update_DOB_PEP3_v2_20250515`.";

pub fn table(id: &str, label: &str, rule_text: &str) -> ScriptedOracleTable {
    let mut t = ScriptedOracleTable::default();
    t.truth.insert(
        id.into(),
        TruthRecord {
            id: id.into(),
            label: label.into(),
            rule_ids: vec!["r".into()],
        },
    );
    t.rule_texts
        .entry("v1".into())
        .or_default()
        .insert("r".into(), rule_text.into());
    t
}

pub fn run_one(
    params: RunParams,
    llm: ScriptedLlm,
    table: ScriptedOracleTable,
    inst: Instance,
    seed: Vec<KnowledgeItem>,
) -> Runner {
    let mut r = Runner::start(
        "golden",
        params,
        providers(llm, scripted_oracle(table)),
        EventLog::in_memory(),
        vec![inst],
        seed,
        serde_json::Value::Null,
    )
    .expect("run starts");
    r.run_to_end().expect("run completes");
    r
}

pub fn budget(b: u64) -> RunParams {
    RunParams {
        budget: b,
        ..Default::default()
    }
}

pub fn name_case(id: &str, user: &str, hit: &str) -> Instance {
    instance(
        id,
        1,
        MAY_5,
        "Match",
        &[
            ("user_name", user),
            ("hit_name", hit),
            ("user_dob", "1990-02-14"),
            ("hit_dob", "1990-02-14"),
        ],
    )
}

/// Replies shared by the pinyin scenarios: the agent is unsure whether the
/// stored pinyin rule is still current, so it asks for the rule.
pub fn pinyin_script<'a>(extract: &'a str, compare: &'a str) -> Vec<(&'a str, &'a str)> {
    vec![
        (r"\[task:predict\]", "Non-Match\nThe surnames differ in spelling and the stored rule requires exact pinyin."),
        (
            r"(?s)\[task:reflect\].*Question: Assess your familiarity",
            "Familiar with name matching. uncertainty: whether the stored pinyin rule is still current policy",
        ),
        (r"\[task:reflect\]", "The evidence is the name spelling and the matching DOB."),
        (r"\[task:confidence\]", "[B] Moderate"),
        (r"\[task:extract\]", extract),
        (r"\[task:compare\]", compare),
    ]
}

/// The expert states a relaxed pinyin rule that replaces the exact one.
pub fn pinyin_supersession() -> Runner {
    let llm = scripted_llm(&pinyin_script(
        "1. [rule:Rule_123] For Chinese names, minor pinyin variations (e.g., 'Zhang' vs 'Zang') are acceptable if other identifiers (like DOB) match closely. Exact match is no longer strictly required.",
        "[B] supersedes: the new rule replaces the exact-match requirement.",
    ));
    run_one(
        budget(5),
        llm,
        table("pinyin-1", "Match", RELAXED_PINYIN),
        name_case("pinyin-1", "Zhang Wei", "Zang Wei"),
        vec![rule("Rule_045", EXACT_PINYIN, APRIL_10)],
    )
}

/// The expert states a narrower pinyin rule; the model cannot tell whether
/// it replaces the exact rule and the expert answers "conditional only".
pub fn conditional_pinyin() -> Runner {
    let llm = scripted_llm(&pinyin_script(
        CONDITIONAL_EXTRACT,
        "[E] ambiguous: the new rule is conditional on common names and an exact DOB.",
    ));
    let mut t = table("pinyin-2", "Match", CONDITIONAL_PINYIN);
    t.clarifications.push(ClarificationScript {
        old_pattern: Some("(?i)exact pinyin".into()),
        new_pattern: Some("(?i)common names".into()),
        response: "[B] conditional only: Rule_045 still applies outside common names.".into(),
        resolution: None,
    });
    run_one(
        budget(5),
        llm,
        t,
        name_case("pinyin-2", "Zhang Min", "Zang Min"),
        vec![rule("Rule_045", EXACT_PINYIN_SHORT, APRIL_10)],
    )
}

/// Malay name with a DOB day mismatch; the expert confirms the match and
/// cites a revised PEP Level 3 policy.
pub fn malay_name() -> Runner {
    let extract = "1. [exemplar] Case (User: Siti Aishah binti Hamid, DOB 12/05/1985; WL: Aishah Hamid, DOB May 1985, PEP L3) is a True Match.\n\
                   2. [rule:Pol_Update_DOB_PEP3_v2_20250515] Policy Pol_Update_DOB_PEP3_v2_20250515: For PEP Level 3, Month/Year DOB match is sufficient if other strong identifiers align; day difference is acceptable.";
    let llm = scripted_llm(&[
        (r"\[task:predict\]", "Match\nCore name components and DOB month/year agree; nationality matches."),
        (
            r"(?s)\[task:reflect\].*Question: Assess your familiarity",
            "Familiar with patronymics. uncertainty: current policy on DOB day discrepancy for PEP Level 3",
        ),
        (r"\[task:reflect\]", "Core names and DOB month/year match."),
        (r"\[task:confidence\]", "[B] Moderate"),
        (r"\[task:extract\]", extract),
        (
            r"(?s)\[task:compare\].*<new> Policy Pol_Update.*<old> PEP Level 3 requires exact DOB",
            "[B] supersedes",
        ),
        (r"\[task:compare\]", "[D] consistent"),
    ]);
    let inst = instance(
        "malay-1",
        1,
        MAY_5,
        "Match",
        &[
            ("user_name", "Siti Aishah binti Hamid"),
            ("user_dob", "12/05/1985"),
            ("user_nationality", "Malaysian"),
            ("hit_name", "Aishah Hamid"),
            ("hit_alias", "Siti Hamid"),
            ("hit_dob", "May 1985"),
            ("hit_nationality", "Malaysian"),
            ("hit_reason", "Politically Exposed Person (PEP) - Level 3"),
        ],
    );
    let seed = vec![
        rule(
            "Rule_078",
            "Malay patronymics (bin/binti) may be absent in simplified name versions. Core given names and father's name (as surname) are key.",
            APRIL_10 - 150 * DAY,
        ),
        rule("Rule_102", "PEP Level 3 requires exact DOB match.", APRIL_10 - 80 * DAY),
    ];
    run_one(
        budget(5),
        llm,
        table("malay-1", "Match", MALAY_FEEDBACK),
        inst,
        seed,
    )
}
