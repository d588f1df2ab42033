//! The web search tool is itself a small agent with three sub-operations:
//! `searchinformation` (query -> titles, abstracts, URLs), `visit` (URL ->
//! page text) and `webqa` (question over gathered text). It runs as one
//! nested gateway conversation; the outer agent only sees the final answer.

use serde::Deserialize;

use crate::gateway::{ChatRequest, DecodingParams, Gateway, Message};

use super::ToolError;

pub const SEARCH_AGENT_MAX_TURNS: usize = 4;

/// Source of search results and page text for the search agent.
pub trait WebBackend: Send + Sync {
    fn search(&self, query: &str) -> Result<String, ToolError>;
    fn visit(&self, url: &str) -> Result<String, ToolError>;
}

/// Backend for offline runs; every lookup reports that the web is unavailable.
#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineWeb;

impl WebBackend for OfflineWeb {
    fn search(&self, query: &str) -> Result<String, ToolError> {
        Ok(format!("No search results available offline for: {query}"))
    }

    fn visit(&self, url: &str) -> Result<String, ToolError> {
        Ok(format!("Page {url} is not reachable offline."))
    }
}

const SYSTEM: &str = "You are a web search agent answering a question for another agent.\n\
You can use these sub-tools:\n\
- searchinformation(input: search query): returns title, abstract and URL of several results\n\
- visit(input: URL): returns the textual content of the page\n\
- webqa(input: question): answers the question from the text gathered so far\n\
Reply with exactly one JSON object per turn: {\"tool\": \"searchinformation\" | \"visit\" | \"webqa\" | \"final_answer\", \"input\": \"...\"}.\n\
Use \"final_answer\" when you can answer.";

#[derive(Deserialize)]
struct Action {
    tool: String,
    #[serde(default)]
    input: String,
}

fn parse_action(reply: &str) -> Option<Action> {
    let start = reply.find('{')?;
    let end = reply.rfind('}')?;
    serde_json::from_str(reply.get(start..=end)?).ok()
}

pub(crate) fn run_search_agent(
    gateway: &Gateway,
    model_id: &str,
    web: &dyn WebBackend,
    query: &str,
) -> Result<String, ToolError> {
    let mut messages = vec![Message::system(SYSTEM), Message::user(format!("Question: {query}"))];
    let mut gathered = String::new();
    for _ in 0..SEARCH_AGENT_MAX_TURNS {
        let req = ChatRequest::new(model_id, messages.clone(), DecodingParams::STABLE);
        let reply = gateway.complete(&req)?;
        let Some(action) = parse_action(&reply) else {
            return Ok(reply.trim().to_owned());
        };
        let observation = match action.tool.as_str() {
            "final_answer" => return Ok(action.input),
            "searchinformation" => web.search(&action.input)?,
            "visit" => web.visit(&action.input)?,
            "webqa" => {
                let qa = ChatRequest::new(
                    model_id,
                    vec![
                        Message::system("Answer the question using only the provided text."),
                        Message::user(format!("Text:\n{gathered}\n\nQuestion: {}", action.input)),
                    ],
                    DecodingParams::STABLE,
                );
                gateway.complete(&qa)?
            }
            other => format!("Unknown sub-tool `{other}`."),
        };
        gathered.push_str(&observation);
        gathered.push('\n');
        messages.push(Message::assistant(reply));
        messages.push(Message::user(format!("Observation: {observation}")));
    }
    Ok(format!("Search stopped after {SEARCH_AGENT_MAX_TURNS} turns without an answer."))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::gateway::ScriptedProvider;

    #[test]
    fn plain_reply_is_the_answer() {
        let gw = Gateway::live(Arc::new(ScriptedProvider::new("s", |_| Ok(" Paris \n".into()))));
        assert_eq!(run_search_agent(&gw, "m", &OfflineWeb, "capital?").unwrap(), "Paris");
    }

    #[test]
    fn sub_tools_then_answer() {
        let gw = Gateway::live(Arc::new(ScriptedProvider::new("s", |r: &ChatRequest| {
            let turns = r.messages.len();
            Ok(match turns {
                2 => r#"{"tool": "searchinformation", "input": "capital of France"}"#.into(),
                4 => {
                    assert!(r.messages[3].content.contains("No search results"));
                    r#"{"tool": "final_answer", "input": "Paris"}"#.into()
                }
                _ => unreachable!(),
            })
        })));
        assert_eq!(run_search_agent(&gw, "m", &OfflineWeb, "capital?").unwrap(), "Paris");
    }

    #[test]
    fn bounded_turns() {
        let gw = Gateway::live(Arc::new(ScriptedProvider::new("s", |_| {
            Ok(r#"{"tool": "visit", "input": "http://x"}"#.into())
        })));
        let out = run_search_agent(&gw, "m", &OfflineWeb, "q").unwrap();
        assert!(out.contains("without an answer"));
    }
}
