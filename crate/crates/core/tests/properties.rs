mod support;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use proptest::collection::vec;
use proptest::prelude::*;
use serde_json::{Map, Value};
use support::gen;
use trajsmith::agent::parse::render_step_with;
use trajsmith::agent::{parse_step, EpisodeConfig, ParsedStep};
use trajsmith::calls::extract_tool_calls;
use trajsmith::exec::protocol::{decode, encode, ClientFrame, ExecErrorInfo, ExecRequest, ExecResult, HostFrame};
use trajsmith::gateway::{Gateway, ScriptedProvider};
use trajsmith::model::{validate_datapoint, DataPoint};
use trajsmith::pipeline::{retrieve_images, Outcome};
use trajsmith::store::{export_sft, load_dataset, stats, write_dataset, LabelSpan, SftLayout, SftSample};
use trajsmith::tools::ToolRegistry;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn render_then_parse_is_identity((thought, code) in gen::step_pair(), style in gen::render_style()) {
        let text = render_step_with(&thought, &code, style);
        prop_assert_eq!(parse_step(&text), Ok(ParsedStep { thought, code }));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn datapoint_serde_round_trip(dp in gen::datapoint()) {
        let line = serde_json::to_string(&dp).unwrap();
        let back: DataPoint = serde_json::from_str(&line).unwrap();
        prop_assert_eq!(&back, &dp);
        prop_assert!(validate_datapoint(&dp).is_empty());
        prop_assert_eq!(dp.trajectory.steps.len() as u32, dp.trajectory.steps.last().unwrap().index);
    }

    #[test]
    fn stats_are_unchanged_by_save_and_load(dataset in vec(gen::datapoint(), 0..6)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        write_dataset(&path, &dataset).unwrap();
        let names = ToolRegistry::standard().names();
        let back = load_dataset(&path).unwrap();
        prop_assert_eq!(stats(&back, &names), stats(&dataset, &names));
    }

    #[test]
    fn labels_never_cover_observations_or_answers(dp in gen::datapoint()) {
        let reg = ToolRegistry::standard();
        let cfg = EpisodeConfig::default();
        let samples = export_sft(std::slice::from_ref(&dp), &cfg, &reg, SftLayout::Episode).unwrap();
        prop_assert_eq!(samples.len(), 1);
        prop_assert_eq!(samples[0].label_spans.len(), dp.trajectory.steps.len());
        prop_assert_eq!(gen::mask_violations(&dp, &samples[0]), 0);
        let per_step = export_sft(std::slice::from_ref(&dp), &cfg, &reg, SftLayout::PerStep).unwrap();
        prop_assert_eq!(per_step.len(), dp.trajectory.steps.len());
        for (i, s) in per_step.iter().enumerate() {
            let mut prefix = dp.clone();
            prefix.trajectory.steps.truncate(i + 1);
            prop_assert_eq!(s.label_spans.len(), 1);
            prop_assert_eq!(s.label_spans[0].message, s.messages.len() - 1);
            prop_assert_eq!(gen::mask_violations(&prefix, &label_every_step(s)), 0);
        }
    }
}

/// A per-step sample labels only its last step; label every step so the
/// shared episode checker applies to the prefix.
fn label_every_step(s: &SftSample) -> SftSample {
    let mut out = s.clone();
    let steps = (s.messages.len() - 1) / 2;
    out.label_spans = (0..steps)
        .map(|i| LabelSpan { message: 2 + 2 * i, start: 0, end: s.messages[2 + 2 * i].content.chars().count() })
        .collect();
    out
}

const NAMES: &[&str] = &["image_qa", "final_answer", "ask_search_agent", "objectlocation"];

fn code_fragment() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("image_qa(".to_owned()),
        Just("final_answer(x)".to_owned()),
        Just("obj.image_qa(1)".to_owned()),
        Just("def objectlocation(a):".to_owned()),
        Just("'ask_search_agent(q)'".to_owned()),
        Just("# final_answer(1)".to_owned()),
        Just("\"\"\"image_qa(\"\"\"".to_owned()),
        Just("\"unterminated".to_owned()),
        "[a-z_]{1,8}",
        "[ ()=.,\n'\"#0-9]{1,4}",
    ]
}

fn identifier_multiset(code: &str) -> HashMap<String, usize> {
    let mut m = HashMap::new();
    for tok in code.split(|c: char| !(c == '_' || c.is_alphanumeric())) {
        if tok.chars().next().is_some_and(|c| c == '_' || c.is_alphabetic()) {
            *m.entry(tok.to_owned()).or_default() += 1;
        }
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn tool_calls_are_a_sub_multiset_of_identifiers(parts in vec(code_fragment(), 0..12)) {
        let code = parts.concat();
        let calls = extract_tool_calls(&code, NAMES);
        let idents = identifier_multiset(&code);
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for c in &calls {
            prop_assert!(NAMES.contains(&c.as_str()));
            *counts.entry(c.as_str()).or_default() += 1;
        }
        for (name, n) in counts {
            prop_assert!(idents.get(name).copied().unwrap_or(0) >= n, "{} x{} in {:?}", name, n, code);
        }
    }
}

fn exec_result() -> impl Strategy<Value = ExecResult> {
    (
        "\\PC{0,12}",
        "\\PC{0,60}",
        proptest::option::of(("[A-Za-z]{1,12}", "\\PC{0,30}", "\\PC{0,30}")),
        vec("[a-z./_]{1,16}", 0..3),
        any::<u64>(),
        any::<bool>(),
    )
        .prop_map(|(id, stdout, error, files_created, duration_ms, state_reset)| ExecResult {
            id,
            stdout,
            error: error.map(|(kind, message, trace)| ExecErrorInfo { kind, message, trace }),
            files_created,
            duration_ms,
            state_reset,
        })
}

fn json_leaf() -> impl Strategy<Value = Value> {
    prop_oneof![
        Just(Value::Null),
        any::<bool>().prop_map(Value::Bool),
        any::<i64>().prop_map(Value::from),
        "\\PC{0,20}".prop_map(Value::String),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn framing_round_trip(id in "\\PC{0,12}", code in "\\PC{0,80}", result in exec_result(),
                          args in proptest::collection::btree_map("[a-z_]{1,8}", json_leaf(), 0..4)) {
        let frames = [
            ClientFrame::Execute(ExecRequest { id: id.clone(), code }),
            ClientFrame::tool_err(id.clone(), "no such tool"),
            ClientFrame::Shutdown,
        ];
        for f in frames {
            let line = encode(&f);
            prop_assert!(line.ends_with('\n'));
            prop_assert_eq!(line.matches('\n').count(), 1);
            prop_assert_eq!(decode::<ClientFrame>(&line).unwrap(), f);
        }
        let args: Map<String, Value> = args.into_iter().collect();
        let frames = [
            HostFrame::Result(result),
            HostFrame::ToolCall { id, name: "image_qa".into(), args },
            HostFrame::Ready { protocol: 1, pid: Some(7) },
        ];
        for f in frames {
            let line = encode(&f);
            prop_assert_eq!(line.matches('\n').count(), 1);
            prop_assert_eq!(decode::<HostFrame>(&line).unwrap(), f);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn retrieval_matches_the_exhaustive_scan((vectors, query, k) in gen::retrieval_instance()) {
        let index = gen::index_of(&vectors);
        let q = query.clone();
        let provider = ScriptedProvider::new("embed", |_| unreachable!()).with_embed(move |_| Ok(q.clone()));
        let gateway = Gateway::live(Arc::new(provider));
        let got = retrieve_images(&gateway, "embed", "any caption", k, &index).unwrap();
        let want = gen::brute_force(&vectors, &query, k);
        prop_assert_eq!(got.len(), k.min(vectors.len()));
        prop_assert_eq!(got, want);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pipeline_counts_are_conserved(fates in vec(gen::fate(), 1..10), parallel in 1usize..4) {
        let dir = tempfile::tempdir().unwrap();
        let report = gen::run_fates(&fates, parallel, dir.path());
        prop_assert!(report.conserved());
        let c = &report.counts;
        prop_assert_eq!(c.drafted, fates.len());
        prop_assert_eq!(
            c.admitted + c.rejected_query_file + c.rejected_trajectory + c.exec_failed + c.materialization_failures,
            c.drafted
        );
        let mut got = BTreeMap::new();
        for item in &report.items {
            *got.entry(format!("{:?}", item.outcome)).or_insert(0usize) += 1;
        }
        prop_assert_eq!(got, gen::expected_outcomes(&fates));
        for (item, fate) in report.items.iter().zip(&fates) {
            prop_assert_eq!(item.outcome, fate.outcome());
        }
        let stored = load_dataset(&dir.path().join("dataset.jsonl")).map(|d| d.len()).unwrap_or(0);
        prop_assert_eq!(stored, fates.iter().filter(|f| f.outcome() == Outcome::Admitted).count());
    }
}
