//! Generators and checkers shared by the property tests and the acceptance
//! target.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use proptest::collection::vec;
use proptest::prelude::*;
use serde_json::json;
use trajsmith::agent::parse::{FenceTag, RenderStyle, SentinelStyle};
use trajsmith::agent::prompt::DEFAULT_SYSTEM_PROMPT;
use trajsmith::agent::parse::is_renderable;
use trajsmith::agent::render_step;
use trajsmith::exec::{ImportPolicy, MockFactory};
use trajsmith::gateway::{ChatRequest, Gateway, Role, ScriptedProvider};
use trajsmith::model::{
    DataPoint, DomainTag, FileArtifact, FileKind, Provenance, Step, Task, Termination, Trajectory, Verdict, Verdicts,
};
use trajsmith::pipeline::retrieval::{dot, normalize, Hit, ImageIndex, PoolImage};
use trajsmith::pipeline::prompts::{FILE_CODE, FILE_PLAN, QUERY_GENERATION, VERIFY_QUERY_FILE, VERIFY_TRAJECTORY};
use trajsmith::pipeline::{run_pipeline, Outcome, PipelineConfig, PipelineContext, PipelineReport};
use trajsmith::store::{DatasetStore, SftSample};
use trajsmith::tools::{ToolRegistry, Toolset};

/// Prefix of every generated observation; never produced for thought/code.
pub const OBS_MARK: &str = "\u{27e6}obs\u{27e7}";
/// Prefix of every generated final answer.
pub const ANS_MARK: &str = "\u{27e6}ans\u{27e7}";

fn trimmed(pattern: &'static str) -> impl Strategy<Value = String> {
    pattern.prop_map(|s| {
        let t = s.trim();
        if t.is_empty() { "x".to_owned() } else { t.to_owned() }
    })
}

/// Printable thought/code pairs in the renderer's domain, multi-line code
/// included.
pub fn step_pair() -> impl Strategy<Value = (String, String)> {
    (trimmed("[ -~]{1,60}(\n[ -~]{0,40}){0,2}"), trimmed("[ -~\t]{1,50}(\n[ -~\t]{0,50}){0,5}"))
        .prop_filter("outside the renderer's domain", |(t, c)| is_renderable(t, c))
}

pub fn render_style() -> impl Strategy<Value = RenderStyle> {
    (
        prop_oneof![Just(FenceTag::Py), Just(FenceTag::Python), Just(FenceTag::Bare)],
        prop_oneof![Just(SentinelStyle::Inline), Just(SentinelStyle::OwnLine)],
    )
        .prop_map(|(fence, sentinel)| RenderStyle { fence, sentinel })
}

fn file_artifact() -> impl Strategy<Value = FileArtifact> {
    (0..FileKind::ALL.len(), "[0-9a-f]{64}", proptest::option::of("\\PC{1,20}")).prop_map(|(k, digest, caption)| {
        let kind = FileKind::ALL[k];
        FileArtifact {
            id: format!("f-{}", &digest[..12]),
            kind,
            path: format!("files/{digest}.{}", kind.extension()),
            content_digest: digest,
            caption_or_summary: caption,
        }
    })
}

fn verdict() -> impl Strategy<Value = Verdict> {
    ("\\PC{0,20}", proptest::collection::btree_map("[a-z_]{1,10}", "\\PC{0,15}", 0..3)).prop_map(
        |(thought, criteria_notes)| Verdict { thought, correct: true, updated_query: None, criteria_notes },
    )
}

/// Admitted datapoints with 1..=8 steps. Observations and final answers carry
/// marker prefixes that thought/code can never contain.
pub fn datapoint() -> impl Strategy<Value = DataPoint> {
    let names = ToolRegistry::standard().names();
    (
        "[a-z0-9-]{1,12}",
        trimmed("\\PC{1,60}"),
        vec(file_artifact(), 0..4),
        proptest::sample::subsequence(names, 0..4),
        proptest::option::of(0..DomainTag::ALL.len()),
        vec((step_pair(), "\\PC{0,40}", any::<bool>(), 0u64..5000), 1..=8),
        "\\PC{0,20}",
        (verdict(), verdict()),
        proptest::collection::btree_map("[a-z_]{1,12}", "[0-9T:-]{1,20}", 0..4),
    )
        .prop_map(|(id, query, files, tools, domain, raw_steps, answer, (qf, tr), timestamps)| {
            let n = raw_steps.len();
            let steps = raw_steps
                .into_iter()
                .enumerate()
                .map(|(i, ((thought, code), obs, ok, ms))| Step {
                    index: i as u32 + 1,
                    thought,
                    code,
                    observation: format!("{OBS_MARK}{obs}"),
                    // the last step of an admitted episode ran cleanly
                    exec_ok: ok || i + 1 == n,
                    duration_ms: ms,
                })
                .collect();
            let answer = format!("{ANS_MARK}{answer}");
            let mut task = Task::new(id, query);
            task.files = files;
            task.suggested_tools = tools;
            task.domain_tag = domain.map(|d| DomainTag::ALL[d]);
            DataPoint {
                task,
                trajectory: Trajectory {
                    steps,
                    final_answer: Some(answer.clone()),
                    terminated_by: Termination::FinalAnswer,
                },
                answer: Some(answer),
                verdicts: Verdicts { query_file: Some(qf), trajectory: Some(tr) },
                provenance: Provenance { cassette_id: "gen".into(), pipeline_run_id: "gen".into(), timestamps },
            }
        })
}

/// Character ranges `[start, end)` of `needle` occurrences in `hay`.
fn char_ranges(hay: &str, needle: &str) -> Vec<(usize, usize)> {
    if needle.is_empty() {
        return Vec::new();
    }
    hay.match_indices(needle)
        .map(|(b, m)| {
            let start = hay[..b].chars().count();
            (start, start + m.chars().count())
        })
        .collect()
}

/// Number of masking violations in `sample` exported from `dp`: a label span
/// that overlaps observation or final-answer text, lands outside an assistant
/// turn, or does not cover exactly one rendered thought/code step.
pub fn mask_violations(dp: &DataPoint, sample: &SftSample) -> usize {
    let mut bad = 0;
    let answer = dp.trajectory.final_answer.as_deref().unwrap_or_default();
    let mut protected: Vec<&str> = dp.trajectory.steps.iter().map(|s| s.observation.as_str()).collect();
    protected.push(answer);
    let answer_msg = (sample.messages.last().map(|m| m.content.as_str()) == Some(answer)
        && sample.messages.len() > 2 + 2 * dp.trajectory.steps.len())
    .then(|| sample.messages.len() - 1);

    for (i, span) in sample.label_spans.iter().enumerate() {
        let Some(msg) = sample.messages.get(span.message) else {
            bad += 1;
            continue;
        };
        if msg.role != Role::Assistant || Some(span.message) == answer_msg || span.start > span.end {
            bad += 1;
            continue;
        }
        for text in &protected {
            if char_ranges(&msg.content, text).iter().any(|(s, e)| *s < span.end && span.start < *e) {
                bad += 1;
            }
        }
        let covered = sample.span_text(span);
        if covered.contains(OBS_MARK) || covered.contains(ANS_MARK) {
            bad += 1;
        }
        let step = dp.trajectory.steps.get(i).map(|s| render_step(&s.thought, &s.code));
        if step.as_deref() != Some(covered.as_str()) {
            bad += 1;
        }
    }
    bad
}

/// Scripted fate of one draft in a synthetic pipeline run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fate {
    Admitted,
    PlanUnparsable,
    CodegenRaises,
    QueryFileNo,
    QueryFileGarbage,
    NeverFinishes,
    TrajectoryNo,
    TrajectoryGarbage,
}

impl Fate {
    pub const ALL: [Fate; 8] = [
        Fate::Admitted,
        Fate::PlanUnparsable,
        Fate::CodegenRaises,
        Fate::QueryFileNo,
        Fate::QueryFileGarbage,
        Fate::NeverFinishes,
        Fate::TrajectoryNo,
        Fate::TrajectoryGarbage,
    ];

    pub fn outcome(self) -> Outcome {
        match self {
            Fate::Admitted => Outcome::Admitted,
            Fate::PlanUnparsable | Fate::CodegenRaises => Outcome::MaterializationFailed,
            Fate::QueryFileNo | Fate::QueryFileGarbage => Outcome::RejectedQueryFile,
            Fate::NeverFinishes => Outcome::ExecFailed,
            Fate::TrajectoryNo | Fate::TrajectoryGarbage => Outcome::RejectedTrajectory,
        }
    }
}

pub fn fate() -> impl Strategy<Value = Fate> {
    (0..Fate::ALL.len()).prop_map(|i| Fate::ALL[i])
}

fn draft_number(text: &str, marker: &str) -> Option<usize> {
    let rest = &text[text.find(marker)? + marker.len()..];
    rest.chars().take_while(char::is_ascii_digit).collect::<String>().parse().ok()
}

fn fates_provider(fates: Vec<Fate>) -> ScriptedProvider {
    let served = std::sync::atomic::AtomicUsize::new(0);
    ScriptedProvider::new("fates", move |req: &ChatRequest| {
        let system = req.messages[0].content.as_str();
        let user: String = req.messages.iter().filter(|m| m.role == Role::User).map(|m| m.content.as_str()).collect();
        let starts = |p: &str| system.starts_with(&p[..40]);
        let fate = |marker: &str| fates[draft_number(&user, marker).expect("request names its draft")];
        let reply = if starts(QUERY_GENERATION) {
            let count: usize = user.split_whitespace().find_map(|w| w.parse().ok()).unwrap();
            let start = served.fetch_add(count, std::sync::atomic::Ordering::SeqCst);
            let entries: Vec<_> = (start..start + count)
                .map(|i| json!({"query": format!("Draft number {i}: how many items are listed?"), "tools": ["final_answer"]}))
                .collect();
            serde_json::to_string(&entries).unwrap()
        } else if starts(FILE_PLAN) {
            let i = draft_number(&user, "Draft number ").unwrap();
            if fates[i] == Fate::PlanUnparsable {
                "I would need a spreadsheet.".into()
            } else {
                json!({"information": "a list", "file": {"image_numbers": 0, "image_content": {},
                    "other_files": [{"kind": "TXT", "content": format!("item list for draft {i} only")}]}})
                .to_string()
            }
        } else if starts(FILE_CODE) {
            let name = user.split("the file name is ").nth(1).and_then(|r| r.split_whitespace().next()).unwrap();
            match fate("item list for draft ") {
                Fate::CodegenRaises => "## code start\nrows = []\nprint(rows[1])\n## code end".into(),
                _ => format!("## code start\nwith open('.cache/{name}', 'w') as f:\n    f.write('a\\nb\\n')\n## code end"),
            }
        } else if starts(VERIFY_QUERY_FILE) {
            match fate("Draft number ") {
                Fate::QueryFileNo => r#"{"thought": "unanswerable", "correct": "no", "updated_query": "Describe the list."}"#.into(),
                Fate::QueryFileGarbage => "It depends.".into(),
                _ => r#"{"thought": "fine", "correct": "yes", "updated_query": "no revision is needed"}"#.into(),
            }
        } else if starts(VERIFY_TRAJECTORY) {
            match fate("Draft number ") {
                Fate::TrajectoryNo => r#"{"thought": "wrong", "correct": "no"}"#.into(),
                Fate::TrajectoryGarbage => "Hard to say.".into(),
                _ => r#"{"thought": "right", "correct": "yes"}"#.into(),
            }
        } else if starts(DEFAULT_SYSTEM_PROMPT) {
            let i = draft_number(&req.messages[1].content, "Draft number ").unwrap();
            if fates[i] == Fate::NeverFinishes {
                render_step("Keep counting.", "print('still counting')")
            } else {
                render_step("There are two items.", "final_answer('2')")
            }
        } else {
            "food".into()
        };
        Ok(reply)
    })
}

/// Run the pipeline on drafts whose fates are scripted, writing into `root`.
pub fn run_fates(fates: &[Fate], parallel: usize, root: &Path) -> PipelineReport {
    let gateway = Arc::new(Gateway::live(Arc::new(fates_provider(fates.to_vec()))));
    let tools = Toolset::new(ToolRegistry::standard(), gateway.clone());
    let sessions = MockFactory::new(ImportPolicy::default());
    let store = DatasetStore::open(root).unwrap();
    let ctx = PipelineContext { gateway: &gateway, tools: &tools, sessions: &sessions, store: &store, images: None };
    let mut cfg = PipelineConfig { run_id: "fates".into(), n: fates.len(), parallel, ..Default::default() };
    cfg.episode.max_steps = 3;
    run_pipeline(&ctx, &["How many items are on this list?".to_owned()], &cfg).unwrap()
}

/// Tally of scripted outcomes, keyed by outcome name.
pub fn expected_outcomes(fates: &[Fate]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for f in fates {
        *m.entry(format!("{:?}", f.outcome())).or_default() += 1;
    }
    m
}

/// Exhaustive oracle: score every row, sort by score then index, take k.
pub fn brute_force(vectors: &[Vec<f32>], query: &[f32], k: usize) -> Vec<Hit> {
    let q = normalize(query);
    let mut all: Vec<Hit> =
        vectors.iter().enumerate().map(|(index, v)| Hit { index, score: dot(&normalize(v), &q) }).collect();
    all.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.index.cmp(&b.index)));
    all.truncate(k);
    all
}

/// Small integer components so equal scores (and duplicate rows) are common.
pub fn retrieval_instance() -> impl Strategy<Value = (Vec<Vec<f32>>, Vec<f32>, usize)> {
    (1usize..=8, 1usize..=1000).prop_flat_map(|(dim, n)| {
        let row = vec((-2i8..=2).prop_map(f32::from), dim);
        (vec(row.clone(), n), row, 1usize..=n + 3)
    })
}

pub fn index_of(vectors: &[Vec<f32>]) -> ImageIndex {
    let items = (0..vectors.len())
        .map(|i| PoolImage { id: format!("p{i}"), path: format!("p{i}.png"), caption: format!("caption {i}") })
        .collect();
    ImageIndex::from_vectors("pool", items, vectors)
}
