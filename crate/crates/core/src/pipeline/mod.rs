//! Synthesis pipeline: draft queries, build their files, verify the pair,
//! run the agent, verify the trajectory and admit what passes.

pub mod files;
pub mod json;
pub mod prompts;
pub mod queries;
pub mod retrieval;
pub mod verify;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{run_episode, stage_task_files, EpisodeConfig, EpisodeError};
use crate::exec::{ExecError, SessionFactory};
use crate::gateway::{Gateway, GatewayError};
use crate::model::{
    validate_datapoint_with, DataPoint, FileArtifact, FileKind, Provenance, Task, Termination, Trajectory,
    ValidationContext, Verdicts,
};
use crate::store::{DatasetStore, StoreError};
use crate::tools::ToolHost;

pub use files::{materialize_generated_file, parse_file_plan, plan_files, FilePlan, OtherFile};
pub use queries::{generate_queries, QueryDraft, QueryGenConfig, QueryGenTelemetry};
pub use retrieval::{load_pool, retrieve_images, ImageIndex, PoolImage};
pub use verify::{parse_verdict, tag_domain, verify_query_file, verify_trajectory};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("no seed queries were given")]
    NoSeeds,
    #[error("{0}")]
    Stage(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error("executor unavailable: {0}")]
    Executor(#[from] ExecError),
}

/// Why one draft left the pipeline early.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageFailure {
    pub reason: String,
    pub detail: String,
    /// Set when the failure came from the gateway.
    pub gateway: Option<GatewayError>,
}

impl StageFailure {
    pub fn new(reason: impl Into<String>, detail: impl Into<String>) -> Self {
        StageFailure { reason: reason.into(), detail: detail.into(), gateway: None }
    }

    pub fn gateway(err: GatewayError) -> Self {
        StageFailure { reason: "gateway".into(), detail: err.to_string(), gateway: Some(err) }
    }
}

impl std::fmt::Display for StageFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.reason, self.detail)
    }
}

/// Model ids for each pipeline stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageModels {
    pub file_plan: String,
    pub file_code: String,
    pub embed: String,
    pub query_file_verifier: String,
    pub trajectory_verifier: String,
    pub domain_tagger: String,
}

impl Default for StageModels {
    fn default() -> Self {
        StageModels {
            file_plan: "gpt-4o-mini".into(),
            file_code: "gpt-4o-mini".into(),
            embed: "text-embedding-3-small".into(),
            query_file_verifier: "gpt-4o-mini".into(),
            trajectory_verifier: "gpt-4o-mini".into(),
            domain_tagger: "gpt-4o-mini".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub run_id: String,
    /// Number of query drafts to generate.
    pub n: usize,
    pub query_gen: QueryGenConfig,
    pub plan_retries: usize,
    pub codegen_retries: usize,
    pub verifier_retries: usize,
    /// Candidates fetched per image description.
    pub retrieval_k: usize,
    pub models: StageModels,
    pub episode: EpisodeConfig,
    /// Worker threads processing drafts.
    pub parallel: usize,
    pub tag_domains: bool,
    /// Re-verify once with the verifier's rewritten query after a query-file
    /// rejection.
    pub resubmit_updated_query: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            run_id: "run".into(),
            n: 20,
            query_gen: QueryGenConfig::default(),
            plan_retries: 1,
            codegen_retries: 1,
            verifier_retries: 1,
            retrieval_k: 3,
            models: StageModels::default(),
            episode: EpisodeConfig::default(),
            parallel: 1,
            tag_domains: true,
            resubmit_updated_query: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.run_id.trim().is_empty() {
            return Err("run_id must not be empty".into());
        }
        if self.retrieval_k == 0 {
            return Err("retrieval_k must be at least 1".into());
        }
        if self.parallel == 0 {
            return Err("parallel must be at least 1".into());
        }
        self.episode.validate()
    }
}

/// Shared handles the pipeline runs against.
pub struct PipelineContext<'a> {
    pub gateway: &'a Gateway,
    pub tools: &'a dyn ToolHost,
    pub sessions: &'a dyn SessionFactory,
    pub store: &'a DatasetStore,
    pub images: Option<&'a ImageIndex>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCounts {
    pub drafted: usize,
    pub file_planned: usize,
    pub materialized: usize,
    pub trajectories_collected: usize,
    pub materialization_failures: usize,
    pub rejected_query_file: usize,
    pub exec_failed: usize,
    pub rejected_trajectory: usize,
    pub admitted: usize,
}

impl StageCounts {
    /// Every draft ends in exactly one terminal bucket.
    pub fn conserved(&self) -> bool {
        self.drafted
            == self.materialization_failures
                + self.rejected_query_file
                + self.exec_failed
                + self.rejected_trajectory
                + self.admitted
            && self.file_planned <= self.drafted
            && self.materialized <= self.file_planned
            && self.trajectories_collected <= self.materialized
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Admitted,
    MaterializationFailed,
    RejectedQueryFile,
    ExecFailed,
    RejectedTrajectory,
}

/// Where one draft ended up.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemReport {
    pub id: String,
    pub query: String,
    pub outcome: Outcome,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub run_id: String,
    pub cassette_id: String,
    pub counts: StageCounts,
    /// Failure reason to count, across all non-admitted drafts.
    pub reasons: BTreeMap<String, usize>,
    pub query_generation: QueryGenTelemetry,
    pub items: Vec<ItemReport>,
}

impl PipelineReport {
    pub fn conserved(&self) -> bool {
        self.counts.conserved()
            && self.items.len() == self.counts.drafted
            && self.reasons.values().sum::<usize>() == self.counts.drafted - self.counts.admitted
    }
}

/// Read seed queries: one per line, blank lines and `#` comments skipped.
pub fn load_seeds(path: &Path) -> std::io::Result<Vec<String>> {
    Ok(std::fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect())
}

/// Per-draft result before it is folded into the report.
struct Processed {
    outcome: Outcome,
    failure: Option<StageFailure>,
    planned: bool,
    materialized: bool,
    collected: bool,
    datapoint: Option<DataPoint>,
}

impl Processed {
    fn failed(outcome: Outcome, failure: StageFailure) -> Self {
        Processed { outcome, failure: Some(failure), planned: false, materialized: false, collected: false, datapoint: None }
    }
}

fn fetch_image(
    ctx: &PipelineContext<'_>,
    cfg: &PipelineConfig,
    description: &str,
    used: &mut HashSet<usize>,
) -> Result<FileArtifact, StageFailure> {
    let index = ctx.images.ok_or_else(|| StageFailure::new("no_image_pool", "the plan needs images but no pool is loaded"))?;
    let hits = retrieve_images(ctx.gateway, &cfg.models.embed, description, cfg.retrieval_k, index).map_err(|e| match e {
        retrieval::RetrievalError::Gateway(g) => StageFailure::gateway(g),
        other => StageFailure::new("retrieval", other.to_string()),
    })?;
    let hit = hits
        .into_iter()
        .find(|h| !used.contains(&h.index))
        .ok_or_else(|| StageFailure::new("retrieval", format!("no unused image among the top {}", cfg.retrieval_k)))?;
    used.insert(hit.index);
    let item = index.item(hit.index);
    let kind = FileKind::from_path(&item.path)
        .filter(|k| k.is_image())
        .ok_or_else(|| StageFailure::new("retrieval", format!("pool entry {} is not an image", item.id)))?;
    ctx.store
        .files()
        .put_file(&index.path_of(hit.index), kind, Some(item.caption.clone()))
        .map_err(|e| StageFailure::new("store", e.to_string()))
}

fn materialize(ctx: &PipelineContext<'_>, cfg: &PipelineConfig, plan: &FilePlan) -> Result<Vec<FileArtifact>, StageFailure> {
    let mut files = Vec::new();
    let mut used = HashSet::new();
    for description in &plan.image_contents {
        files.push(fetch_image(ctx, cfg, description, &mut used)?);
    }
    if !plan.other_files.is_empty() {
        let mut session = ctx.sessions.open().map_err(|e| StageFailure::new("executor", e.to_string()))?;
        for (i, other) in plan.other_files.iter().enumerate() {
            let name = format!("file_{}.{}", i + 1, other.kind.extension());
            files.push(materialize_generated_file(
                ctx.gateway,
                session.as_mut(),
                ctx.tools,
                ctx.store.files(),
                other.kind,
                &other.content,
                &name,
                &cfg.models.file_code,
                cfg.codegen_retries,
            )?);
        }
    }
    Ok(files)
}

fn collect_trajectory(ctx: &PipelineContext<'_>, cfg: &PipelineConfig, task: &Task) -> Result<Trajectory, StageFailure> {
    let mut session = ctx.sessions.open().map_err(|e| StageFailure::new("executor", e.to_string()))?;
    stage_task_files(session.as_ref(), task, ctx.store.root()).map_err(|e| StageFailure::new("executor", e.to_string()))?;
    run_episode(ctx.gateway, task, ctx.tools, session.as_mut(), &cfg.episode).map_err(|e| match e {
        EpisodeError::Gateway(g) => StageFailure::gateway(g),
        EpisodeError::PromptOverflow(o) => StageFailure::new("prompt_overflow", o.to_string()),
        other => StageFailure::new("executor", other.to_string()),
    })
}

fn process_draft(ctx: &PipelineContext<'_>, cfg: &PipelineConfig, id: &str, draft: &QueryDraft) -> Processed {
    let registry = ctx.tools.registry();
    let mut stamps = BTreeMap::new();
    stamps.insert("drafted".to_owned(), ctx.gateway.now());

    let plan = match plan_files(ctx.gateway, registry, draft, &cfg.models.file_plan, cfg.plan_retries) {
        Ok(p) => p,
        Err(f) => return Processed::failed(Outcome::MaterializationFailed, f),
    };
    let files = match materialize(ctx, cfg, &plan) {
        Ok(f) => f,
        Err(f) => return Processed { planned: true, ..Processed::failed(Outcome::MaterializationFailed, f) },
    };
    stamps.insert("materialized".to_owned(), ctx.gateway.now());
    let mut progress = Processed {
        outcome: Outcome::Admitted,
        failure: None,
        planned: true,
        materialized: true,
        collected: false,
        datapoint: None,
    };
    let fail = |mut p: Processed, outcome, f| {
        p.outcome = outcome;
        p.failure = Some(f);
        p
    };

    let mut task = Task {
        id: id.to_owned(),
        query: draft.query.clone(),
        files,
        suggested_tools: draft.tools.clone(),
        domain_tag: None,
    };
    let root = ctx.store.root();
    let qf_model = &cfg.models.query_file_verifier;
    let mut qf = match verify_query_file(ctx.gateway, registry, &task, root, qf_model, cfg.verifier_retries) {
        Ok(v) => v,
        Err(f) => return fail(progress, Outcome::RejectedQueryFile, f),
    };
    if !qf.correct && cfg.resubmit_updated_query {
        if let Some(rewrite) = qf.updated_query.clone() {
            let mut revised = task.clone();
            revised.query = rewrite;
            match verify_query_file(ctx.gateway, registry, &revised, root, qf_model, cfg.verifier_retries) {
                Ok(v) if v.correct => {
                    task = revised;
                    qf = v;
                }
                Ok(_) => {}
                Err(f) => return fail(progress, Outcome::RejectedQueryFile, f),
            }
        }
    }
    stamps.insert("query_file_verified".to_owned(), ctx.gateway.now());
    if !qf.correct {
        return fail(progress, Outcome::RejectedQueryFile, StageFailure::new("query_file_rejected", qf.thought));
    }

    let traj = match collect_trajectory(ctx, cfg, &task) {
        Ok(t) => t,
        Err(f) => return fail(progress, Outcome::ExecFailed, f),
    };
    stamps.insert("trajectory_collected".to_owned(), ctx.gateway.now());
    progress.collected = true;
    let unfinished = match traj.terminated_by {
        Termination::FinalAnswer => None,
        Termination::ExecFailure => Some(("session_died", "the sandbox session died mid-episode".to_owned())),
        Termination::StepLimit => Some(("step_limit", format!("no final answer after {} steps", traj.len()))),
        Termination::ModelError => Some(("model_error", "the model reply could not be parsed".to_owned())),
    };
    if let Some((reason, detail)) = unfinished {
        return fail(progress, Outcome::ExecFailed, StageFailure::new(reason, detail));
    }
    if traj.steps.last().is_some_and(|s| !s.exec_ok) {
        return fail(progress, Outcome::ExecFailed, StageFailure::new("last_step_failed", "the final step raised"));
    }

    let tv_model = &cfg.models.trajectory_verifier;
    let tv = match verify_trajectory(ctx.gateway, registry, &task, &traj, root, tv_model, cfg.verifier_retries) {
        Ok(v) => v,
        Err(f) => return fail(progress, Outcome::RejectedTrajectory, f),
    };
    stamps.insert("trajectory_verified".to_owned(), ctx.gateway.now());
    if !tv.correct {
        return fail(progress, Outcome::RejectedTrajectory, StageFailure::new("trajectory_rejected", tv.thought));
    }

    if cfg.tag_domains {
        match tag_domain(ctx.gateway, &task.query, &cfg.models.domain_tagger) {
            Ok(tag) => task.domain_tag = tag,
            Err(f) => tracing::warn!(task = %task.id, error = %f, "domain tagging failed; leaving untagged"),
        }
    }
    stamps.insert("admitted".to_owned(), ctx.gateway.now());

    let answer = traj.final_answer.clone();
    let dp = DataPoint {
        task,
        trajectory: traj,
        answer,
        verdicts: Verdicts { query_file: Some(qf), trajectory: Some(tv) },
        provenance: Provenance {
            cassette_id: ctx.gateway.cassette_id(),
            pipeline_run_id: cfg.run_id.clone(),
            timestamps: stamps,
        },
    };
    let names = registry.names();
    let report = validate_datapoint_with(
        &dp,
        &ValidationContext { tool_names: Some(&names), files_root: Some(root), require_admitted: true },
    );
    if !report.is_empty() {
        return fail(progress, Outcome::RejectedTrajectory, StageFailure::new("schema", report.to_string()));
    }
    progress.datapoint = Some(dp);
    progress
}

/// Run every stage for `cfg.n` drafts and append admitted records to the
/// store in draft order. Stage failures are recorded per draft and never
/// stop the batch.
pub fn run_pipeline(
    ctx: &PipelineContext<'_>,
    seeds: &[String],
    cfg: &PipelineConfig,
) -> Result<PipelineReport, PipelineError> {
    cfg.validate().map_err(PipelineError::Config)?;
    let (drafts, telemetry) = generate_queries(ctx.gateway, ctx.tools.registry(), seeds, cfg.n, &cfg.query_gen)?;
    tracing::info!(drafts = drafts.len(), run = %cfg.run_id, "query drafts ready");

    let ids: Vec<String> = (0..drafts.len()).map(|i| format!("{}-{i:04}", cfg.run_id)).collect();
    let slots: Vec<Mutex<Option<Processed>>> = drafts.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..cfg.parallel.min(drafts.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(draft) = drafts.get(i) else { return };
                let processed = process_draft(ctx, cfg, &ids[i], draft);
                tracing::info!(id = %ids[i], outcome = ?processed.outcome, "draft processed");
                *slots[i].lock().unwrap() = Some(processed);
            });
        }
    });
    let mut counts = StageCounts { drafted: drafts.len(), ..Default::default() };
    let mut reasons = BTreeMap::new();
    let mut items = Vec::with_capacity(drafts.len());
    for ((slot, id), draft) in slots.into_iter().zip(&ids).zip(&drafts) {
        let p = slot.into_inner().unwrap().expect("every draft is processed");
        counts.file_planned += usize::from(p.planned);
        counts.materialized += usize::from(p.materialized);
        counts.trajectories_collected += usize::from(p.collected);
        match p.outcome {
            Outcome::Admitted => counts.admitted += 1,
            Outcome::MaterializationFailed => counts.materialization_failures += 1,
            Outcome::RejectedQueryFile => counts.rejected_query_file += 1,
            Outcome::ExecFailed => counts.exec_failed += 1,
            Outcome::RejectedTrajectory => counts.rejected_trajectory += 1,
        }
        if let Some(f) = &p.failure {
            *reasons.entry(f.reason.clone()).or_insert(0) += 1;
        }
        if let Some(dp) = &p.datapoint {
            ctx.store.append(dp)?;
        }
        items.push(ItemReport {
            id: id.clone(),
            query: p.datapoint.as_ref().map_or_else(|| draft.query.clone(), |dp| dp.task.query.clone()),
            outcome: p.outcome,
            reason: p.failure.as_ref().map(|f| f.reason.clone()),
            detail: p.failure.map(|f| f.detail),
        });
    }
    let report = PipelineReport {
        run_id: cfg.run_id.clone(),
        cassette_id: ctx.gateway.cassette_id(),
        counts,
        reasons,
        query_generation: telemetry,
        items,
    };
    debug_assert!(report.conserved());
    Ok(report)
}
