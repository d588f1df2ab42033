//! Re-record the committed test cassettes from the scripted fixture providers.
//!
//! cargo run -p trajsmith --example record_fixture [pipeline] [agent] [eval]
//!
//! With no arguments every cassette is recorded.

#[path = "../tests/support/mod.rs"]
mod support;

use std::sync::Arc;

use trajsmith::agent::run_episode;
use trajsmith::eval::{evaluate, load_tasks, Judge};
use trajsmith::exec::{ImportPolicy, MockSession};
use trajsmith::gateway::Gateway;
use trajsmith::tools::{ToolRegistry, Toolset};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let wanted = |name: &str| args.is_empty() || args.iter().any(|a| a == name);

    if wanted("pipeline") {
        let dir = support::pipeline_cassette();
        let gateway = Arc::new(Gateway::record(Arc::new(support::scripted_provider()), &dir)?);
        let store = tempfile::tempdir()?;
        let report = support::run_fixture_pipeline(gateway, store.path(), 1)?;
        println!("pipeline: {}", serde_json::to_string(&report.counts)?);
    }

    if wanted("agent") {
        let dir = support::agent_cassette();
        let gateway = Arc::new(Gateway::record(Arc::new(support::scripted_provider()), &dir)?);
        let tools = Toolset::new(ToolRegistry::standard(), gateway.clone());
        for task in support::agent_tasks() {
            let mut session = MockSession::open(ImportPolicy::default(), None)?;
            let traj = run_episode(&gateway, &task, &tools, &mut session, &support::agent_config())?;
            println!("{}: {} steps, {:?}", task.id, traj.len(), traj.terminated_by);
        }
    }

    if wanted("eval") {
        let dir = support::eval_cassette();
        let gateway = Arc::new(Gateway::record(Arc::new(support::eval_provider(support::TEN, &[])), &dir)?);
        let tasks = load_tasks(&support::fixtures_dir().join("eval/tasks.jsonl"))?;
        let names = ToolRegistry::standard().names();
        let (metrics, _) = evaluate(&support::eval_agent_on(gateway), &tasks, &Judge::Exact, &names, 1)?;
        println!("eval: {}", serde_json::to_string(&metrics)?);
    }
    Ok(())
}
