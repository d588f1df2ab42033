//! Scripted model behaviour behind the committed cassettes, plus helpers to
//! run the fixtures. `examples/record_fixture.rs` records with this provider;
//! the tests replay the recordings.
#![allow(dead_code)]

pub mod gen;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde_json::json;
use trajsmith::agent::prompt::DEFAULT_SYSTEM_PROMPT;
use trajsmith::agent::{render_step, Agent, EpisodeConfig};
use trajsmith::exec::{ImportPolicy, MockFactory};
use trajsmith::gateway::{ChatRequest, Gateway, Role, ScriptedProvider};
use trajsmith::model::Task;
use trajsmith::pipeline::prompts::{
    DOMAIN_TAG, FILE_CODE, FILE_PLAN, QUERY_GENERATION, VERIFY_QUERY_FILE, VERIFY_TRAJECTORY,
};
use trajsmith::pipeline::{
    load_pool, load_seeds, run_pipeline, ImageIndex, PipelineConfig, PipelineContext, PipelineError, PipelineReport,
};
use trajsmith::store::DatasetStore;
use trajsmith::tools::{ToolRegistry, Toolset};

pub struct Scenario {
    pub query: &'static str,
    pub tools: &'static [&'static str],
    /// Image descriptions in the file plan.
    pub images: &'static [&'static str],
    /// (kind, brief, file body) for generated files.
    pub others: &'static [(&'static str, &'static str, &'static str)],
    pub query_file_ok: bool,
    /// Agent replies in order; `{F1}`, `{F2}` stand for the attached file paths.
    pub steps: &'static [(&'static str, &'static str)],
    /// (question, answer) pairs for model-backed tools.
    pub tool_answers: &'static [(&'static str, &'static str)],
    pub trajectory_ok: bool,
    pub domain: &'static str,
}

const NO_STEPS: &[(&str, &str)] = &[];
const NO_ANSWERS: &[(&str, &str)] = &[];
const NO_OTHERS: &[(&str, &str, &str)] = &[];

/// The 20 drafts of the pipeline fixture: 14 admitted, 3 rejected at the
/// query-file check, 2 rejected at the trajectory check and 1 that never
/// reaches a final answer.
pub const SCENARIOS: &[Scenario] = &[
    Scenario {
        query: "Compare the quarterly sales in these two bar charts and tell me which year had higher Q4 sales.",
        tools: &["image_qa", "final_answer"],
        images: &["a bar chart of quarterly sales for 2022", "a bar chart of quarterly sales for 2023"],
        others: NO_OTHERS,
        query_file_ok: true,
        steps: &[
            (
                "I will read the Q4 value from each chart with image_qa.",
                "q1 = image_qa(image=\"{F1}\", question=\"What are the Q4 sales in the 2022 chart?\")\nq2 = image_qa(image=\"{F2}\", question=\"What are the Q4 sales in the 2023 chart?\")\nprint(q1)\nprint(q2)",
            ),
            ("2023 is higher, so I can answer.", "final_answer(\"2023 had higher Q4 sales: 150k versus 120k.\")"),
        ],
        tool_answers: &[
            ("What are the Q4 sales in the 2022 chart?", "Q4 sales were 120k dollars."),
            ("What are the Q4 sales in the 2023 chart?", "Q4 sales were 150k dollars."),
        ],
        trajectory_ok: true,
        domain: "finance",
    },
    Scenario {
        query: "How many pieces of sushi are on this plate, and roughly how many calories is that?",
        tools: &["image_qa"],
        images: &["a plate of sushi on a wooden table"],
        others: NO_OTHERS,
        query_file_ok: true,
        steps: &[
            (
                "Count the sushi pieces first.",
                "count = image_qa(image=\"{F1}\", question=\"How many pieces of sushi are on the plate?\")\nprint(count)",
            ),
            ("There are 8 pieces; a piece is about 45 kcal.", "calories = 8 * 45\nprint(calories)"),
            ("I have the total.", "final_answer(f\"8 pieces, about {calories} calories.\")"),
        ],
        tool_answers: &[("How many pieces of sushi are on the plate?", "There are 8 pieces of sushi.")],
        trajectory_ok: true,
        domain: "food",
    },
    Scenario {
        query: "What is the total on this grocery receipt if I buy one more carton of milk?",
        tools: &["image_qa"],
        images: &["a grocery receipt listing apples and milk"],
        others: NO_OTHERS,
        query_file_ok: true,
        steps: &[
            (
                "Read the receipt lines.",
                "items = image_qa(image=\"{F1}\", question=\"Which items and prices are on the receipt?\")\nprint(items)",
            ),
            ("Add another milk to the total.", "print(total + 2.25)"),
            ("total was not defined; define it from the receipt.", "total = 5.75 + 2.25\nprint(total)"),
            ("The new total is 8.0.", "final_answer(\"$8.00\")"),
        ],
        tool_answers: &[("Which items and prices are on the receipt?", "Apples $3.50, milk $2.25, total $5.75.")],
        trajectory_ok: true,
        domain: "shopping",
    },
    Scenario {
        query: "Read the attached rent table and tell me the average monthly rent.",
        tools: &["inspect_file_as_text"],
        images: &[],
        others: &[("CSV", "monthly rent for three apartments", "apartment,rent\nA,1200\nB,1500\nC,1800\n")],
        query_file_ok: true,
        steps: &[
            (
                "Ask the file inspector for the average.",
                "answer = inspect_file_as_text(file_path=\"{F1}\", question=\"What is the average monthly rent?\")\nprint(answer)",
            ),
            ("The average is 1500.", "final_answer(\"1500\")"),
        ],
        tool_answers: &[("What is the average monthly rent?", "The rents are 1200, 1500 and 1800, so the average is 1500.")],
        trajectory_ok: true,
        domain: "finance",
    },
    Scenario {
        query: "What breed is the dog in this photo and what is its typical lifespan?",
        tools: &["image_qa", "ask_search_agent"],
        images: &["a golden retriever playing in a park"],
        others: NO_OTHERS,
        query_file_ok: true,
        steps: &[
            ("Identify the breed.", "breed = image_qa(image=\"{F1}\", question=\"What breed is this dog?\")\nprint(breed)"),
            ("Golden retrievers live 10 to 12 years.", "final_answer(\"A golden retriever; they usually live 10 to 12 years.\")"),
        ],
        tool_answers: &[("What breed is this dog?", "It is a golden retriever.")],
        trajectory_ok: true,
        domain: "daily_life",
    },
    Scenario {
        query: "Which landmark is shown in this picture and in which city is it?",
        tools: &["image_qa"],
        images: &["the eiffel tower at sunset"],
        others: NO_OTHERS,
        query_file_ok: true,
        steps: &[
            ("Ask what the landmark is.", "name = image_qa(image=\"{F1}\", question=\"Which landmark is this?\")\nprint(name)"),
            ("It is the Eiffel Tower in Paris.", "final_answer(\"The Eiffel Tower, in Paris.\")"),
        ],
        tool_answers: &[("Which landmark is this?", "This is the Eiffel Tower.")],
        trajectory_ok: true,
        domain: "travel",
    },
    Scenario {
        query: "Locate the bus in this street photo and tell me its color.",
        tools: &["objectlocation", "image_qa"],
        images: &["a red double decker bus on a city street"],
        others: NO_OTHERS,
        query_file_ok: true,
        steps: &[
            ("Find the bus first.", "boxes = objectlocation(image=\"{F1}\", query=\"bus\")\nprint(boxes)"),
            ("Now ask for its color.", "color = image_qa(image=\"{F1}\", question=\"What color is the bus?\")\nprint(color)"),
            ("The bus is red.", "final_answer(\"The bus is red.\")"),
        ],
        tool_answers: &[("What color is the bus?", "The bus is red.")],
        trajectory_ok: true,
        domain: "transportation",
    },
    Scenario {
        query: "Using the nutrition notes and the photo, how much sugar is in two bottles of this juice?",
        tools: &["inspect_file_as_text", "image_qa"],
        images: &["a bottle of orange juice with a nutrition label"],
        others: &[("TXT", "nutrition notes for a bottle of orange juice", "Orange juice, 250 ml bottle: 22 g sugar, 110 kcal.\n")],
        query_file_ok: true,
        steps: &[
            (
                "Read the sugar per bottle from the notes.",
                "notes = inspect_file_as_text(file_path=\"{F2}\", question=\"How much sugar is in one bottle?\")\nprint(notes)",
            ),
            ("Double it.", "sugar = 22 * 2\nprint(sugar)"),
            ("Two bottles hold 44 g.", "final_answer(f\"{sugar} g of sugar\")"),
        ],
        tool_answers: &[("How much sugar is in one bottle?", "One 250 ml bottle has 22 g of sugar.")],
        trajectory_ok: true,
        domain: "health",
    },
    Scenario {
        query: "How many players are visible in this soccer photo?",
        tools: &["image_qa"],
        images: &["a group of people playing soccer on a field"],
        others: NO_OTHERS,
        query_file_ok: true,
        steps: &[
            ("Count the players.", "n = image_qa(image=\"{F1}\", question=\"How many players are visible?\")\nprint(n)"),
            ("Six players.", "final_answer(\"6\")"),
        ],
        tool_answers: &[("How many players are visible?", "There are 6 players visible.")],
        trajectory_ok: true,
        domain: "sports",
    },
    Scenario {
        query: "Does the reading on this thermometer indicate a fever?",
        tools: &["image_qa"],
        images: &["a thermometer showing a fever temperature"],
        others: NO_OTHERS,
        query_file_ok: true,
        steps: &[
            ("Read the temperature.", "t = image_qa(image=\"{F1}\", question=\"What temperature does the thermometer show?\")\nprint(t)"),
            ("Compare with 37.5 C.", "print(38.5 > 37.5)"),
            ("It is above the threshold.", "final_answer(\"Yes, 38.5 C is a fever.\")"),
        ],
        tool_answers: &[("What temperature does the thermometer show?", "It shows 38.5 C.")],
        trajectory_ok: true,
        domain: "health",
    },
    Scenario {
        query: "Based on the attached price history, what was the percentage change in the stock price over the week?",
        tools: &["inspect_file_as_text"],
        images: &[],
        others: &[("JSON", "daily closing prices of a stock over one week", "{\"ticker\": \"ACME\", \"close\": [100, 102, 101, 105, 110]}\n")],
        query_file_ok: true,
        steps: &[
            (
                "Get the first and last close.",
                "info = inspect_file_as_text(file_path=\"{F1}\", question=\"What are the first and last closing prices?\")\nprint(info)",
            ),
            ("Compute the change.", "change = (110 - 100) / 100 * 100\nprint(change)"),
            ("A 10 percent rise.", "final_answer(f\"{change}%\")"),
        ],
        tool_answers: &[("What are the first and last closing prices?", "The first close is 100 and the last is 110.")],
        trajectory_ok: true,
        domain: "finance",
    },
    Scenario {
        query: "Edit this castle picture so that it looks like winter.",
        tools: &["image_edit"],
        images: &["a historic castle on a hill"],
        others: NO_OTHERS,
        query_file_ok: true,
        steps: &[
            ("Use image_edit with a snow prompt.", "out = image_edit(prompt=\"the castle covered in snow\", image=\"{F1}\")\nprint(out)"),
            ("Return the edited image path.", "final_answer(out)"),
        ],
        tool_answers: NO_ANSWERS,
        trajectory_ok: true,
        domain: "art",
    },
    Scenario {
        query: "How many faces can be detected in this family portrait?",
        tools: &["facedetection"],
        images: &["a family portrait of four people smiling"],
        others: NO_OTHERS,
        query_file_ok: true,
        steps: &[
            ("Run face detection.", "faces = facedetection(image=\"{F1}\")\nprint(len(faces))"),
            ("Report the count.", "final_answer(str(len(faces)))"),
        ],
        tool_answers: NO_ANSWERS,
        trajectory_ok: true,
        domain: "culture",
    },
    Scenario {
        query: "What would these running shoes cost after a 20% discount?",
        tools: &["image_qa"],
        images: &["a price tag on a pair of running shoes"],
        others: NO_OTHERS,
        query_file_ok: true,
        steps: &[
            ("Read the price tag.", "tag = image_qa(image=\"{F1}\", question=\"What price is on the tag?\")\nprint(tag)"),
            ("Apply the discount.", "price = 80 * 0.8\nprint(price)"),
            ("The discounted price is 64.", "final_answer(f\"${price}\")"),
        ],
        tool_answers: &[("What price is on the tag?", "The tag shows $80.")],
        trajectory_ok: true,
        domain: "shopping",
    },
    Scenario {
        query: "What is the name of the chef who prepared this meal?",
        tools: &["image_qa"],
        images: &["a plate of sushi on a wooden table"],
        others: NO_OTHERS,
        query_file_ok: false,
        steps: NO_STEPS,
        tool_answers: NO_ANSWERS,
        trajectory_ok: false,
        domain: "food",
    },
    Scenario {
        query: "What is the license plate number of the bicycle in this picture?",
        tools: &["image_qa"],
        images: &["a bicycle parked next to a train station"],
        others: NO_OTHERS,
        query_file_ok: false,
        steps: NO_STEPS,
        tool_answers: NO_ANSWERS,
        trajectory_ok: false,
        domain: "transportation",
    },
    Scenario {
        query: "Which of the books on this shelf was printed first?",
        tools: &["image_qa"],
        images: &["a bookshelf with science textbooks"],
        others: NO_OTHERS,
        query_file_ok: false,
        steps: NO_STEPS,
        tool_answers: NO_ANSWERS,
        trajectory_ok: false,
        domain: "education",
    },
    Scenario {
        query: "What is the elevation of the lake in this photo?",
        tools: &["image_qa", "ask_search_agent"],
        images: &["a mountain lake surrounded by pine trees"],
        others: NO_OTHERS,
        query_file_ok: true,
        steps: &[
            ("Describe the lake.", "d = image_qa(image=\"{F1}\", question=\"What does the lake look like?\")\nprint(d)"),
            ("I will estimate the elevation.", "final_answer(\"About 1000 meters.\")"),
        ],
        tool_answers: &[("What does the lake look like?", "A mountain lake surrounded by pine trees.")],
        trajectory_ok: false,
        domain: "environment",
    },
    Scenario {
        query: "Who painted the artwork in this image?",
        tools: &["image_qa"],
        images: &["a painting of sunflowers in a vase"],
        others: NO_OTHERS,
        query_file_ok: true,
        steps: &[
            ("Ask about the painting.", "d = image_qa(image=\"{F1}\", question=\"What does the painting show?\")\nprint(d)"),
            ("Guess the painter.", "final_answer(\"Claude Monet\")"),
        ],
        tool_answers: &[("What does the painting show?", "Sunflowers in a vase.")],
        trajectory_ok: false,
        domain: "art",
    },
    Scenario {
        query: "What was the warmest day in the attached weather log?",
        tools: &["inspect_file_as_text"],
        images: &[],
        others: &[("CSV", "daily temperatures for three days", "day,temp\nMon,21\nTue,25\nWed,19\n")],
        query_file_ok: true,
        steps: &[("Take the fourth reading.", "temps = [21, 25, 19]\nprint(temps[3])")],
        tool_answers: NO_ANSWERS,
        trajectory_ok: false,
        domain: "environment",
    },
];

/// Two stand-alone agent tasks: a clean three-step solve and one whose first
/// step raises.
pub const AGENT_SCENARIOS: &[Scenario] = &[
    Scenario {
        query: "What do 3 apples at $1.25 each plus a $2 bag cost?",
        tools: &[],
        images: &[],
        others: NO_OTHERS,
        query_file_ok: true,
        steps: &[
            ("Price the apples.", "apples = 3 * 1.25\nprint(apples)"),
            ("Add the bag.", "total = apples + 2\nprint(total)"),
            ("The total is 5.75.", "final_answer(str(total))"),
        ],
        tool_answers: NO_ANSWERS,
        trajectory_ok: true,
        domain: "shopping",
    },
    Scenario {
        query: "How many prices are in the list [2, 3]?",
        tools: &[],
        images: &[],
        others: NO_OTHERS,
        query_file_ok: true,
        steps: &[
            ("Print the list length.", "print(len(price_list))"),
            ("price_list was never defined; define it.", "price_list = [2, 3]\nprint(len(price_list))"),
            ("There are two.", "final_answer(\"2\")"),
        ],
        tool_answers: NO_ANSWERS,
        trajectory_ok: true,
        domain: "daily_life",
    },
];

pub const MALFORMED_DRAFT: &str = "Browse the web for me.";

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn pipeline_cassette() -> PathBuf {
    fixtures_dir().join("pipeline/cassette")
}

pub fn eval_cassette() -> PathBuf {
    fixtures_dir().join("eval/cassette")
}

pub fn agent_cassette() -> PathBuf {
    fixtures_dir().join("agent/cassette")
}

/// Opening words of a system prompt, enough to tell the roles apart.
fn head(s: &str) -> &str {
    &s[..40]
}

fn user_text(req: &ChatRequest) -> String {
    req.messages.iter().filter(|m| m.role == Role::User).map(|m| m.content.as_str()).collect::<Vec<_>>().join("\n")
}

fn find_scenario<'a>(all: &'a [Scenario], text: &str) -> Option<&'a Scenario> {
    all.iter().find(|s| text.contains(s.query))
}

fn all_scenarios() -> impl Iterator<Item = &'static Scenario> {
    SCENARIOS.iter().chain(AGENT_SCENARIOS)
}

/// Attached file paths listed in an agent task message.
fn task_paths(task_message: &str) -> Vec<String> {
    task_message
        .lines()
        .filter_map(|l| l.strip_prefix("- "))
        .filter_map(|l| l.rsplit_once(" (").map(|(path, _)| path.to_owned()))
        .collect()
}

fn agent_reply(req: &ChatRequest) -> String {
    let task_message = &req.messages[1].content;
    let scenario = all_scenarios().find(|s| task_message.contains(s.query)).expect("agent task has a scenario");
    let done = req.messages.iter().filter(|m| m.role == Role::Assistant).count();
    let (thought, code) = scenario.steps[done.min(scenario.steps.len() - 1)];
    let mut code = code.to_owned();
    for (i, path) in task_paths(task_message).iter().enumerate() {
        code = code.replace(&format!("{{F{}}}", i + 1), path);
    }
    render_step(thought, &code)
}

fn query_generation_reply(served: &AtomicUsize, req: &ChatRequest) -> String {
    let count: usize = user_text(req)
        .split_whitespace()
        .find_map(|w| w.parse().ok())
        .expect("query generation asks for a count");
    // The first batch carries one entry naming an unregistered tool, which
    // the generator drops.
    let valid = if served.load(Ordering::SeqCst) == 0 { count - 1 } else { count };
    let start = served.fetch_add(valid, Ordering::SeqCst);
    let mut entries: Vec<_> = SCENARIOS
        .iter()
        .skip(start)
        .take(valid)
        .map(|s| json!({"query": s.query, "tools": s.tools}))
        .collect();
    if valid < count {
        entries.insert(2, json!({"query": MALFORMED_DRAFT, "tools": ["web_browser"]}));
    }
    format!("Here are the queries:\n{}", serde_json::to_string_pretty(&entries).unwrap())
}

fn plan_reply(s: &Scenario) -> String {
    let images: serde_json::Map<String, serde_json::Value> =
        s.images.iter().enumerate().map(|(i, d)| (format!("image_{}", i + 1), json!(d))).collect();
    let others: Vec<_> = s.others.iter().map(|(kind, brief, _)| json!({"kind": kind, "content": brief})).collect();
    let plan = json!({
        "information": format!("What is needed to answer: {}", s.query),
        "information from the Internet": "general background knowledge",
        "information from images": "the visible details",
        "file": {"image_numbers": s.images.len(), "image_content": images, "other_files": others},
    });
    serde_json::to_string_pretty(&plan).unwrap()
}

fn codegen_reply(req: &ChatRequest) -> String {
    let text = user_text(req);
    let (_, brief, body) = SCENARIOS
        .iter()
        .flat_map(|s| s.others.iter())
        .find(|(_, brief, _)| text.contains(brief))
        .expect("codegen brief has a scenario");
    let name = text
        .split("the file name is ")
        .nth(1)
        .and_then(|rest| rest.split_whitespace().next())
        .expect("codegen request names the file");
    format!(
        "## extention start\nExtened content: {brief}\n## extention end\n\n## code start\nwith open('.cache/{name}', 'w') as f:\n    f.write({body:?})\n## code end"
    )
}

fn query_file_reply(s: &Scenario) -> String {
    let v = if s.query_file_ok {
        json!({
            "information_for_query": "the details shown in the files",
            "useful_information_in_image": "the files show what the query asks about",
            "missed_information_in_images": "none",
            "missed_information_web_search": "not needed",
            "missed_information_obtained": "not needed",
            "thought": "The files are relevant and sufficient.",
            "correct": "yes",
            "updated_query": "no revision is needed.",
        })
    } else {
        json!({
            "information_for_query": "facts that are not visible",
            "useful_information_in_image": "only the scene itself",
            "missed_information_in_images": "the requested fact",
            "missed_information_web_search": "cannot be found on the web",
            "missed_information_obtained": "cannot be inferred",
            "thought": "The files cannot answer this query.",
            "correct": "no",
            "updated_query": "Describe what is shown in the image.",
        })
    };
    serde_json::to_string_pretty(&v).unwrap()
}

fn trajectory_reply(s: &Scenario) -> String {
    let (thought, correct) = if s.trajectory_ok {
        ("Tools and answer are consistent with the query.", "yes")
    } else {
        ("The final answer is not supported by the observations.", "no")
    };
    serde_json::to_string_pretty(&json!({"thought": thought, "correct": correct})).unwrap()
}

fn tool_reply(req: &ChatRequest) -> String {
    let text = user_text(req);
    all_scenarios()
        .flat_map(|s| s.tool_answers.iter())
        .find(|(q, _)| text.contains(q))
        .map(|(_, a)| a.to_string())
        .unwrap_or_else(|| "I cannot tell from the input.".into())
}

/// A provider that plays every role in the fixtures.
pub fn scripted_provider() -> ScriptedProvider {
    let served = AtomicUsize::new(0);
    ScriptedProvider::new("scripted-fixture", move |req| {
        let system = req.messages.first().map(|m| m.content.as_str()).unwrap_or_default();
        let user = user_text(req);
        let per_draft = || find_scenario(SCENARIOS, &user).expect("request mentions a fixture query");
        let reply = if system.starts_with(head(QUERY_GENERATION)) {
            query_generation_reply(&served, req)
        } else if system.starts_with(head(FILE_PLAN)) {
            plan_reply(per_draft())
        } else if system.starts_with(head(FILE_CODE)) {
            codegen_reply(req)
        } else if system.starts_with(head(VERIFY_QUERY_FILE)) {
            query_file_reply(per_draft())
        } else if system.starts_with(head(VERIFY_TRAJECTORY)) {
            trajectory_reply(per_draft())
        } else if system.starts_with(head(DOMAIN_TAG)) {
            per_draft().domain.to_owned()
        } else if system.starts_with(head(DEFAULT_SYSTEM_PROMPT)) {
            agent_reply(req)
        } else {
            tool_reply(req)
        };
        Ok(reply)
    })
}

pub fn pipeline_config(parallel: usize) -> PipelineConfig {
    let mut cfg = PipelineConfig { run_id: "fixture".into(), n: SCENARIOS.len(), parallel, ..Default::default() };
    cfg.query_gen.rng_seed = 7;
    cfg.episode.max_steps = 4;
    cfg
}

/// Run the pipeline fixture against `gateway`, writing into `store_root`.
pub fn run_fixture_pipeline(
    gateway: Arc<Gateway>,
    store_root: &Path,
    parallel: usize,
) -> Result<PipelineReport, PipelineError> {
    let cfg = pipeline_config(parallel);
    let tools = Toolset::new(ToolRegistry::standard(), gateway.clone());
    let sessions = MockFactory::new(ImportPolicy::default());
    let store = DatasetStore::open(store_root).map_err(|e| PipelineError::Stage(e.to_string()))?;
    let (root, items) = load_pool(&fixtures_dir().join("pipeline/pool.jsonl")).map_err(|e| PipelineError::Stage(e.to_string()))?;
    let index = ImageIndex::build(&gateway, &cfg.models.embed, root, items)?;
    let seeds = load_seeds(&fixtures_dir().join("pipeline/seeds.txt")).map_err(|e| PipelineError::Stage(e.to_string()))?;
    let ctx = PipelineContext { gateway: &gateway, tools: &tools, sessions: &sessions, store: &store, images: Some(&index) };
    run_pipeline(&ctx, &seeds, &cfg)
}

pub fn agent_tasks() -> Vec<Task> {
    AGENT_SCENARIOS.iter().enumerate().map(|(i, s)| Task::new(format!("agent-{}", i + 1), s.query)).collect()
}

pub fn agent_config() -> EpisodeConfig {
    EpisodeConfig::default()
}

/// Scripted agent model: step 1 binds the prediction, step 2 returns it.
/// Queries listed in `failing` get an extra failing step first.
pub fn eval_provider(predictions: &[(&str, &str)], failing: &[&str]) -> ScriptedProvider {
    let answers: HashMap<String, String> =
        predictions.iter().map(|(q, a)| (q.to_string(), a.to_string())).collect();
    let failing: Vec<String> = failing.iter().map(|s| s.to_string()).collect();
    ScriptedProvider::new("eval-script", move |req: &ChatRequest| {
        let task = &req.messages[1].content;
        let query = task.strip_prefix("Task: ").unwrap_or(task).lines().next().unwrap_or_default();
        let answer = answers.get(query).cloned().unwrap_or_else(|| "unknown".into());
        let done = req.messages.iter().filter(|m| m.role == Role::Assistant).count();
        let mut steps = Vec::new();
        if failing.iter().any(|f| f == query) {
            steps.push(("Try the lookup table.", "print(lookup[0])".to_owned()));
        }
        steps.push(("Bind the answer.", format!("x = {answer:?}\nprint(x)")));
        steps.push(("Return it.", "final_answer(x)".to_owned()));
        let (t, c) = &steps[done.min(steps.len() - 1)];
        Ok(trajsmith::agent::render_step(t, c))
    })
}

pub fn eval_agent(predictions: &[(&str, &str)], failing: &[&str]) -> Agent {
    eval_agent_on(Arc::new(Gateway::live(Arc::new(eval_provider(predictions, failing)))))
}

pub fn eval_agent_on(gateway: Arc<Gateway>) -> Agent {
    Agent {
        gateway: gateway.clone(),
        tools: Arc::new(Toolset::new(ToolRegistry::standard(), gateway)),
        sessions: Arc::new(MockFactory::new(ImportPolicy::default())),
        cfg: EpisodeConfig::default(),
        files_root: None,
    }
}

/// Predictions for `levels.jsonl`: three level-1 tasks, one level-2.
pub const LEVELS: &[(&str, &str)] = &[
    ("What is 2 plus 2?", "4"),
    ("What is 3 plus 3?", "6"),
    ("What is 4 plus 4?", "9"),
    ("What is 5 plus 5?", "11"),
];

pub const TEN: &[(&str, &str)] = &[
    ("What is 6 times 7?", "42.0"),
    ("What is the capital of France?", "paris "),
    ("How many legs does a spider have?", "8"),
    ("What is 1,000 plus 234?", "1234"),
    ("Which planet is known as the red planet?", "Mars."),
    ("What is half of 5?", "2.5"),
    ("What color do you get by mixing blue and yellow?", "Green"),
    ("What is 10 divided by 4?", "2"),
    ("Who wrote Hamlet?", "Charles Dickens"),
    ("What is the boiling point of water in Celsius?", "212"),
];
