//! Tool registry, prompt documentation and dispatch.
//!
//! Tools reach the agent as Python functions inside the sandbox; calls come
//! back to [`Toolset::invoke`] by name with keyword arguments. Model-backed
//! tools compose a gateway call, vision tools go to a pluggable
//! [`VisionProvider`], and `final_answer` ends the episode.

mod search;
mod vision;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

pub use search::{OfflineWeb, WebBackend, SEARCH_AGENT_MAX_TURNS};
pub use vision::{BoundingBox, InstanceMask, StubVision, VisionProvider};

use crate::digest::sha256_hex;
use crate::gateway::{ChatRequest, DecodingParams, Gateway, GatewayError, ImageAttachment, Message};
use crate::model::FileKind;

pub const FINAL_ANSWER: &str = "final_answer";

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("unknown tool `{0}`")]
    UnknownTool(String),
    #[error("bad arguments for `{tool}`: {detail}")]
    ArgMismatch { tool: String, detail: String },
    #[error("duplicate tool `{0}`")]
    DuplicateTool(String),
    #[error("tool registry is empty")]
    EmptyRegistry,
    #[error("tool provider error: {0}")]
    Provider(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticType {
    Text,
    ImagePath,
    FilePath,
    BoundingBoxes,
    Masks,
    Any,
}

impl SemanticType {
    fn as_str(self) -> &'static str {
        match self {
            SemanticType::Text => "text",
            SemanticType::ImagePath => "image_path",
            SemanticType::FilePath => "file_path",
            SemanticType::BoundingBoxes => "bounding_boxes",
            SemanticType::Masks => "masks",
            SemanticType::Any => "any",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Route {
    ModelBacked,
    VisionProvider,
    Builtin,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub ty: SemanticType,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub name: String,
    pub description: String,
    pub params: Vec<ParamSpec>,
    pub returns: SemanticType,
    pub route: Route,
}

impl ToolSpec {
    pub fn new(name: &str, description: &str, returns: SemanticType, route: Route) -> Self {
        ToolSpec {
            name: name.into(),
            description: description.into(),
            params: Vec::new(),
            returns,
            route,
        }
    }

    pub fn param(mut self, name: &str, ty: SemanticType) -> Self {
        self.params.push(ParamSpec { name: name.into(), ty, required: true });
        self
    }

    pub fn optional(mut self, name: &str, ty: SemanticType) -> Self {
        self.params.push(ParamSpec { name: name.into(), ty, required: false });
        self
    }

    /// `name(a: text, b: image_path) -> text`
    pub fn signature(&self) -> String {
        let params = self
            .params
            .iter()
            .map(|p| {
                let opt = if p.required { "" } else { "=None" };
                format!("{}: {}{opt}", p.name, p.ty.as_str())
            })
            .collect::<Vec<_>>()
            .join(", ");
        format!("{}({params}) -> {}", self.name, self.returns.as_str())
    }

    pub fn final_answer() -> Self {
        ToolSpec::new(FINAL_ANSWER, "Provides a final answer to the given problem", SemanticType::Any, Route::Builtin)
            .param("answer", SemanticType::Any)
    }
}

/// The tool set used for data synthesis and by the agent: web search, image
/// question answering, file inspection, segmentation, localization, image
/// generation, image editing, face detection, and `final_answer`. Python
/// packages are exposed through the import allowlist rather than as a tool.
pub fn default_tool_specs() -> Vec<ToolSpec> {
    use Route::*;
    use SemanticType::*;
    vec![
        ToolSpec::new("ask_search_agent", "Perform complicated web browsing to answer a question", Text, ModelBacked)
            .param("query", Text),
        ToolSpec::new("image_qa", "Answer questions for queries based on attached images", Text, ModelBacked)
            .param("image", ImagePath)
            .param("question", Text),
        ToolSpec::new("inspect_file_as_text", "Answer questions for queries based on given files", Text, ModelBacked)
            .param("file_path", FilePath)
            .param("question", Text),
        ToolSpec::new("segmentation", "Do instance segmentation on the given image", Masks, VisionProvider)
            .param("image", ImagePath),
        ToolSpec::new(
            "objectlocation",
            "Localize objects in given images and output the bounding boxes",
            BoundingBoxes,
            VisionProvider,
        )
        .param("image", ImagePath)
        .param("query", Text),
        ToolSpec::new("image_generator", "Create an image according to a textual prompt", ImagePath, VisionProvider)
            .param("prompt", Text),
        ToolSpec::new("image_edit", "Edit image based on the textual prompt", ImagePath, VisionProvider)
            .param("prompt", Text)
            .param("image", ImagePath),
        ToolSpec::new(
            "facedetection",
            "Detect human faces in given images and output the bounding boxes",
            BoundingBoxes,
            VisionProvider,
        )
        .param("image", ImagePath),
        ToolSpec::final_answer(),
    ]
}

/// Immutable, ordered set of tool specs with unique names. `final_answer` is
/// always present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolRegistry {
    specs: Vec<ToolSpec>,
}

impl ToolRegistry {
    pub fn new(specs: Vec<ToolSpec>) -> Result<Self, ToolError> {
        if specs.is_empty() {
            return Err(ToolError::EmptyRegistry);
        }
        let mut out: Vec<ToolSpec> = Vec::with_capacity(specs.len() + 1);
        for spec in specs {
            if out.iter().any(|s| s.name == spec.name) {
                return Err(ToolError::DuplicateTool(spec.name));
            }
            out.push(spec);
        }
        if !out.iter().any(|s| s.name == FINAL_ANSWER) {
            out.push(ToolSpec::final_answer());
        }
        Ok(ToolRegistry { specs: out })
    }

    pub fn standard() -> Self {
        ToolRegistry::new(default_tool_specs()).expect("default specs are valid")
    }

    pub fn specs(&self) -> &[ToolSpec] {
        &self.specs
    }

    pub fn names(&self) -> Vec<String> {
        self.specs.iter().map(|s| s.name.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&ToolSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    /// Restrict to the named tools (plus `final_answer`), keeping order.
    pub fn subset<S: AsRef<str>>(&self, names: &[S]) -> Result<Self, ToolError> {
        let specs = self
            .specs
            .iter()
            .filter(|s| names.iter().any(|n| n.as_ref() == s.name))
            .cloned()
            .collect::<Vec<_>>();
        ToolRegistry::new(specs)
    }

    /// Bind positional and keyword arguments to parameter names.
    pub fn bind_args(
        &self,
        name: &str,
        positional: Vec<Value>,
        mut keyword: Map<String, Value>,
    ) -> Result<Map<String, Value>, ToolError> {
        let spec = self.get(name).ok_or_else(|| ToolError::UnknownTool(name.into()))?;
        if positional.len() > spec.params.len() {
            return Err(ToolError::ArgMismatch {
                tool: name.into(),
                detail: format!("takes {} arguments, got {}", spec.params.len(), positional.len()),
            });
        }
        for (param, value) in spec.params.iter().zip(positional) {
            if keyword.insert(param.name.clone(), value).is_some() {
                return Err(ToolError::ArgMismatch {
                    tool: name.into(),
                    detail: format!("multiple values for `{}`", param.name),
                });
            }
        }
        Ok(keyword)
    }

    pub fn check_args(&self, name: &str, args: &Map<String, Value>) -> Result<&ToolSpec, ToolError> {
        let spec = self.get(name).ok_or_else(|| ToolError::UnknownTool(name.into()))?;
        let mismatch = |detail: String| ToolError::ArgMismatch { tool: name.into(), detail };
        for key in args.keys() {
            if !spec.params.iter().any(|p| &p.name == key) {
                return Err(mismatch(format!("unexpected argument `{key}`")));
            }
        }
        for p in &spec.params {
            match args.get(&p.name) {
                None | Some(Value::Null) if p.required => {
                    return Err(mismatch(format!("missing argument `{}`", p.name)))
                }
                Some(v) if !matches!(p.ty, SemanticType::Any) && !v.is_string() && !v.is_null() => {
                    return Err(mismatch(format!("`{}` must be {}", p.name, p.ty.as_str())))
                }
                _ => {}
            }
        }
        Ok(spec)
    }
}

/// Tool documentation for the `TOOL_SET` prompt placeholder, in registration
/// order.
pub fn render_tool_docs(registry: &ToolRegistry) -> String {
    let mut out = String::new();
    for spec in registry.specs() {
        out.push_str(&format!("- {}\n    {}\n", spec.signature(), spec.description));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolOutput {
    Text(String),
    /// Path relative to the session working directory.
    Path(String),
    /// Episode termination carrying the answer.
    FinalAnswer(String),
}

impl ToolOutput {
    /// Value the calling code sees as the function's return.
    pub fn as_return_text(&self) -> &str {
        match self {
            ToolOutput::Text(s) | ToolOutput::Path(s) | ToolOutput::FinalAnswer(s) => s,
        }
    }
}

/// Where a tool call runs: relative paths resolve against `workdir` and
/// generated files go under `workdir/.cache`.
#[derive(Debug, Clone)]
pub struct ToolContext {
    pub workdir: PathBuf,
}

impl ToolContext {
    pub fn new(workdir: impl Into<PathBuf>) -> Self {
        ToolContext { workdir: workdir.into() }
    }

    pub fn resolve(&self, path: &str) -> PathBuf {
        let p = Path::new(path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.workdir.join(p)
        }
    }
}

/// Anything that can service tool calls coming out of executing code.
pub trait ToolHost: Send + Sync {
    fn call(&self, name: &str, args: &Map<String, Value>, ctx: &ToolContext) -> Result<ToolOutput, ToolError>;
    fn registry(&self) -> &ToolRegistry;
}

/// Model ids used by the model-backed tools.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolModels {
    pub image_qa: String,
    pub file_inspector: String,
    pub search_agent: String,
}

impl Default for ToolModels {
    fn default() -> Self {
        ToolModels {
            image_qa: "gpt-4o-mini".into(),
            file_inspector: "gpt-4o-mini".into(),
            search_agent: "gpt-4o-mini".into(),
        }
    }
}

const FILE_INSPECTOR_CHAR_CAP: usize = 20_000;

pub struct Toolset {
    registry: ToolRegistry,
    gateway: Arc<Gateway>,
    vision: Arc<dyn VisionProvider>,
    web: Arc<dyn WebBackend>,
    models: ToolModels,
}

impl Toolset {
    pub fn new(registry: ToolRegistry, gateway: Arc<Gateway>) -> Self {
        Toolset {
            registry,
            gateway,
            vision: Arc::new(StubVision),
            web: Arc::new(OfflineWeb),
            models: ToolModels::default(),
        }
    }

    pub fn with_vision(mut self, vision: Arc<dyn VisionProvider>) -> Self {
        self.vision = vision;
        self
    }

    pub fn with_web(mut self, web: Arc<dyn WebBackend>) -> Self {
        self.web = web;
        self
    }

    pub fn with_models(mut self, models: ToolModels) -> Self {
        self.models = models;
        self
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    pub fn invoke(
        &self,
        name: &str,
        args: &Map<String, Value>,
        ctx: &ToolContext,
    ) -> Result<ToolOutput, ToolError> {
        self.registry.check_args(name, args)?;
        let text = |key: &str| -> String {
            match args.get(key) {
                Some(Value::String(s)) => s.clone(),
                Some(Value::Null) | None => String::new(),
                Some(other) => other.to_string(),
            }
        };
        match name {
            FINAL_ANSWER => Ok(ToolOutput::FinalAnswer(text("answer"))),
            "ask_search_agent" => {
                search::run_search_agent(&self.gateway, &self.models.search_agent, self.web.as_ref(), &text("query"))
                    .map(ToolOutput::Text)
            }
            "image_qa" => self.image_qa(&ctx.resolve(&text("image")), &text("question")),
            "inspect_file_as_text" => self.inspect_file(&ctx.resolve(&text("file_path")), &text("question")),
            "objectlocation" => {
                let boxes = self.vision.locate(&ctx.resolve(&text("image")), &text("query"))?;
                Ok(ToolOutput::Text(vision::format_boxes(&boxes)))
            }
            "facedetection" => {
                let boxes = self.vision.detect_faces(&ctx.resolve(&text("image")))?;
                Ok(ToolOutput::Text(vision::format_boxes(&boxes)))
            }
            "segmentation" => {
                let masks = self.vision.segment(&ctx.resolve(&text("image")))?;
                Ok(ToolOutput::Text(vision::format_masks(&masks)))
            }
            "image_generator" => {
                let rel = format!(".cache/generated_{}.png", &sha256_hex(text("prompt"))[..12]);
                self.vision.generate(&text("prompt"), &ctx.resolve(&rel))?;
                Ok(ToolOutput::Path(rel))
            }
            "image_edit" => {
                let src = ctx.resolve(&text("image"));
                let rel = format!(
                    ".cache/edited_{}.png",
                    &sha256_hex(format!("{}\0{}", text("prompt"), text("image")))[..12]
                );
                self.vision.edit(&text("prompt"), &src, &ctx.resolve(&rel))?;
                Ok(ToolOutput::Path(rel))
            }
            other => Err(ToolError::Provider(format!("no dispatch route for registered tool `{other}`"))),
        }
    }

    fn image_qa(&self, image: &Path, question: &str) -> Result<ToolOutput, ToolError> {
        let attachment = attach(image)?;
        let req = ChatRequest::new(
            &self.models.image_qa,
            vec![
                Message::system("You are a visual assistant. Answer the question about the attached image concisely."),
                Message::user(question).with_images(vec![attachment]),
            ],
            DecodingParams::STABLE,
        );
        Ok(ToolOutput::Text(self.gateway.complete(&req)?))
    }

    fn inspect_file(&self, file: &Path, question: &str) -> Result<ToolOutput, ToolError> {
        let bytes = std::fs::read(file).map_err(|e| ToolError::Provider(format!("{}: {e}", file.display())))?;
        let kind = FileKind::from_path(&file.to_string_lossy());
        let mut images = Vec::new();
        let body = match kind {
            Some(k) if k.is_text() => {
                let text = String::from_utf8_lossy(&bytes);
                crate::model::truncate_observation(&text, FILE_INSPECTOR_CHAR_CAP)
            }
            Some(k) if k.is_image() => {
                images.push(attach(file)?);
                "(the file is the attached image)".to_owned()
            }
            other => format!(
                "(binary {} file, {} bytes, sha256 {})",
                other.map_or("unknown".to_owned(), |k| k.to_string()),
                bytes.len(),
                sha256_hex(&bytes)
            ),
        };
        let name = file.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let req = ChatRequest::new(
            &self.models.file_inspector,
            vec![
                Message::system("You answer questions about a file. Its content is given as markdown text."),
                Message::user(format!("File: {name}\n\n{body}\n\nQuestion: {question}")).with_images(images),
            ],
            DecodingParams::STABLE,
        );
        Ok(ToolOutput::Text(self.gateway.complete(&req)?))
    }
}

fn attach(path: &Path) -> Result<ImageAttachment, ToolError> {
    let bytes = std::fs::read(path).map_err(|e| ToolError::Provider(format!("{}: {e}", path.display())))?;
    Ok(ImageAttachment { path: path.to_string_lossy().into_owned(), digest: sha256_hex(&bytes) })
}

impl ToolHost for Toolset {
    fn call(&self, name: &str, args: &Map<String, Value>, ctx: &ToolContext) -> Result<ToolOutput, ToolError> {
        self.invoke(name, args, ctx)
    }

    fn registry(&self) -> &ToolRegistry {
        &self.registry
    }
}
