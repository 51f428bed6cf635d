//! Prompt templates and prompt assembly.
//!
//! An evaluation prompt is laid out as instruction, then each demo pair
//! followed by the delimiter, then the query. Templates use bracketed
//! placeholders (`[INSTRUCTION]`, `[FULL_DEMOS]`, `[INPUT]`, `[OUTPUT]`,
//! `[COMPLETE]`); `[COMPLETE]` marks where the model continues and renders
//! to nothing.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::task::Demo;

const GENERATE_INSTRUCTIONS: &str = include_str!("../templates/generate_instructions.txt");
const EVALUATION: &str = include_str!("../templates/evaluation.txt");
const DEMO_LISTING: &str = include_str!("../templates/demo_listing.txt");

pub const DEFAULT_DELIMITER: &str = "\n";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("unknown placeholder {0} in template")]
    UnknownPlaceholder(String),
    #[error("placeholder {placeholder} is not allowed in a {kind:?} template")]
    MisplacedPlaceholder {
        placeholder: &'static str,
        kind: TemplateKind,
    },
    #[error("{kind:?} template must contain {placeholder}")]
    MissingPlaceholder {
        placeholder: &'static str,
        kind: TemplateKind,
    },
    #[error("expected a {expected:?} template, got {actual:?}")]
    WrongKind {
        expected: TemplateKind,
        actual: TemplateKind,
    },
    #[error("failed to read template {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateKind {
    GenerateInstructions,
    Evaluation,
    DemoListing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Placeholder {
    Instruction,
    FullDemos,
    Input,
    Output,
    Complete,
}

impl Placeholder {
    pub fn token(self) -> &'static str {
        match self {
            Placeholder::Instruction => "[INSTRUCTION]",
            Placeholder::FullDemos => "[FULL_DEMOS]",
            Placeholder::Input => "[INPUT]",
            Placeholder::Output => "[OUTPUT]",
            Placeholder::Complete => "[COMPLETE]",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "INSTRUCTION" => Placeholder::Instruction,
            "FULL_DEMOS" => Placeholder::FullDemos,
            "INPUT" => Placeholder::Input,
            "OUTPUT" => Placeholder::Output,
            "COMPLETE" => Placeholder::Complete,
            _ => return None,
        })
    }
}

impl TemplateKind {
    fn allowed(self) -> &'static [Placeholder] {
        use Placeholder::*;
        match self {
            TemplateKind::GenerateInstructions => &[FullDemos, Complete],
            TemplateKind::Evaluation => &[Instruction, FullDemos, Input, Complete],
            TemplateKind::DemoListing => &[Input, Output],
        }
    }

    fn required(self) -> &'static [Placeholder] {
        use Placeholder::*;
        match self {
            TemplateKind::GenerateInstructions => &[FullDemos],
            TemplateKind::Evaluation => &[Input],
            TemplateKind::DemoListing => &[Input, Output],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(Placeholder),
}

fn placeholder_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[([A-Z_]+)\]").expect("valid regex"))
}

/// A validated template body, pre-split into literal text and slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    kind: TemplateKind,
    body: String,
    segments: Vec<Segment>,
}

impl PromptTemplate {
    pub fn new(kind: TemplateKind, body: impl Into<String>) -> Result<Self, PromptError> {
        let body = body.into();
        let mut segments = Vec::new();
        let mut present = BTreeSet::new();
        let mut last = 0;
        for caps in placeholder_regex().captures_iter(&body) {
            let whole = caps.get(0).expect("match");
            let placeholder = Placeholder::from_name(&caps[1])
                .ok_or_else(|| PromptError::UnknownPlaceholder(whole.as_str().to_string()))?;
            if !kind.allowed().contains(&placeholder) {
                return Err(PromptError::MisplacedPlaceholder {
                    placeholder: placeholder.token(),
                    kind,
                });
            }
            if whole.start() > last {
                segments.push(Segment::Literal(body[last..whole.start()].to_string()));
            }
            segments.push(Segment::Slot(placeholder));
            present.insert(placeholder);
            last = whole.end();
        }
        if last < body.len() {
            segments.push(Segment::Literal(body[last..].to_string()));
        }
        if let Some(missing) = kind.required().iter().find(|p| !present.contains(p)) {
            return Err(PromptError::MissingPlaceholder {
                placeholder: missing.token(),
                kind,
            });
        }
        Ok(Self {
            kind,
            body,
            segments,
        })
    }

    pub fn kind(&self) -> TemplateKind {
        self.kind
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// Single-pass substitution; substituted values are never rescanned, so
    /// demo text containing bracket tokens passes through untouched.
    pub fn render(&self, values: &[(Placeholder, &str)]) -> String {
        let mut out = String::with_capacity(self.body.len());
        for segment in &self.segments {
            match segment {
                Segment::Literal(text) => out.push_str(text),
                Segment::Slot(Placeholder::Complete) => {}
                Segment::Slot(p) => {
                    if let Some((_, value)) = values.iter().find(|(q, _)| q == p) {
                        out.push_str(value);
                    }
                }
            }
        }
        out
    }

    /// Builds a regex that inverts `render`. `greedy` slots take the longest
    /// match; every other slot takes the shortest.
    fn inverse_pattern(&self, greedy: &[Placeholder]) -> (Regex, Vec<Placeholder>) {
        let mut pattern = String::from("(?s)^");
        let mut order = Vec::new();
        for segment in &self.segments {
            match segment {
                Segment::Literal(text) => pattern.push_str(&regex::escape(text)),
                Segment::Slot(Placeholder::Complete) => {}
                Segment::Slot(p) => {
                    pattern.push_str(if greedy.contains(p) { "(.*)" } else { "(.*?)" });
                    order.push(*p);
                }
            }
        }
        pattern.push('$');
        (Regex::new(&pattern).expect("escaped template is a valid regex"), order)
    }
}

/// A prompt decomposed back into its parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedPrompt {
    pub instruction: String,
    pub demos: Vec<(String, String)>,
    pub query: String,
}

/// The three templates (generation, evaluation, demo listing) plus the
/// delimiter appended after each listed demo.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub generation: PromptTemplate,
    pub evaluation: PromptTemplate,
    pub listing: PromptTemplate,
    pub delimiter: String,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::new(
            PromptTemplate::new(TemplateKind::GenerateInstructions, GENERATE_INSTRUCTIONS)
                .expect("bundled template"),
            PromptTemplate::new(TemplateKind::Evaluation, EVALUATION).expect("bundled template"),
            PromptTemplate::new(TemplateKind::DemoListing, DEMO_LISTING)
                .expect("bundled template"),
            DEFAULT_DELIMITER,
        )
        .expect("bundled templates have the right kinds")
    }
}

impl TemplateSet {
    pub fn new(
        generation: PromptTemplate,
        evaluation: PromptTemplate,
        listing: PromptTemplate,
        delimiter: impl Into<String>,
    ) -> Result<Self, PromptError> {
        for (template, expected) in [
            (&generation, TemplateKind::GenerateInstructions),
            (&evaluation, TemplateKind::Evaluation),
            (&listing, TemplateKind::DemoListing),
        ] {
            if template.kind != expected {
                return Err(PromptError::WrongKind {
                    expected,
                    actual: template.kind,
                });
            }
        }
        Ok(Self {
            generation,
            evaluation,
            listing,
            delimiter: delimiter.into(),
        })
    }

    /// Loads `generate_instructions.txt`, `evaluation.txt` and
    /// `demo_listing.txt` from a directory.
    pub fn from_dir(dir: impl AsRef<Path>, delimiter: &str) -> Result<Self, PromptError> {
        let dir = dir.as_ref();
        let read = |name: &str| {
            let path = dir.join(name);
            fs::read_to_string(&path).map_err(|e| PromptError::Io {
                path: path.display().to_string(),
                message: e.to_string(),
            })
        };
        Self::new(
            PromptTemplate::new(
                TemplateKind::GenerateInstructions,
                read("generate_instructions.txt")?,
            )?,
            PromptTemplate::new(TemplateKind::Evaluation, read("evaluation.txt")?)?,
            PromptTemplate::new(TemplateKind::DemoListing, read("demo_listing.txt")?)?,
            delimiter,
        )
    }

    /// Lists demos in order, each followed by the delimiter. Multi-output
    /// demos show their first output.
    pub fn render_demos(&self, demos: &[Demo]) -> String {
        render_demo_block(&self.listing, &self.delimiter, demos)
    }

    pub fn assemble(&self, instruction: &str, demos: &[Demo], query: &str) -> String {
        render_evaluation(
            &self.evaluation,
            &self.listing,
            &self.delimiter,
            instruction,
            demos,
            query,
        )
    }

    pub fn generation_prompt(&self, demos: &[Demo]) -> String {
        let block = self.render_demos(demos);
        self.generation
            .render(&[(Placeholder::FullDemos, block.as_str())])
    }

    /// Recovers the demo block from a generation prompt, or `None` if the
    /// text was not produced by this set's generation template.
    pub fn parse_generation(&self, prompt: &str) -> Option<Vec<(String, String)>> {
        let (re, order) = self.generation.inverse_pattern(&[]);
        let caps = re.captures(prompt)?;
        let block = order
            .iter()
            .position(|p| *p == Placeholder::FullDemos)
            .map(|i| caps.get(i + 1).map_or("", |m| m.as_str()))
            .unwrap_or("");
        self.parse_demo_block(block)
    }

    /// Recovers instruction, demos and query from an evaluation prompt.
    /// Instruction and query are matched shortest-first and the demo block
    /// longest-first, so the query is taken from the final listing.
    pub fn parse_evaluation(&self, prompt: &str) -> Option<ParsedPrompt> {
        let (re, order) = self.evaluation.inverse_pattern(&[Placeholder::FullDemos]);
        let caps = re.captures(prompt)?;
        let slot = |p: Placeholder| {
            order
                .iter()
                .position(|q| *q == p)
                .and_then(|i| caps.get(i + 1))
                .map_or("", |m| m.as_str())
        };
        Some(ParsedPrompt {
            instruction: slot(Placeholder::Instruction).to_string(),
            demos: self.parse_demo_block(slot(Placeholder::FullDemos))?,
            query: slot(Placeholder::Input).to_string(),
        })
    }

    fn parse_demo_block(&self, mut block: &str) -> Option<Vec<(String, String)>> {
        let mut item = self.listing.clone();
        item.segments
            .push(Segment::Literal(self.delimiter.clone()));
        let (re, order) = item.inverse_pattern(&[]);
        let prefix = Regex::new(re.as_str().trim_end_matches('$')).ok()?;
        let input_at = order.iter().position(|p| *p == Placeholder::Input)? + 1;
        let output_at = order.iter().position(|p| *p == Placeholder::Output)? + 1;
        let mut demos = Vec::new();
        while !block.is_empty() {
            let caps = prefix.captures(block)?;
            let end = caps.get(0)?.end();
            if end == 0 {
                return None;
            }
            demos.push((caps[input_at].to_string(), caps[output_at].to_string()));
            block = &block[end..];
        }
        Some(demos)
    }
}

/// Renders an evaluation prompt: instruction, demos in the given order, query.
pub fn assemble_prompt(
    template: &PromptTemplate,
    listing: &PromptTemplate,
    delimiter: &str,
    instruction: &str,
    demos: &[Demo],
    query: &str,
) -> Result<String, PromptError> {
    for (t, expected) in [
        (template, TemplateKind::Evaluation),
        (listing, TemplateKind::DemoListing),
    ] {
        if t.kind != expected {
            return Err(PromptError::WrongKind {
                expected,
                actual: t.kind,
            });
        }
    }
    Ok(render_evaluation(template, listing, delimiter, instruction, demos, query))
}

fn render_demo_block(listing: &PromptTemplate, delimiter: &str, demos: &[Demo]) -> String {
    let mut out = String::new();
    for demo in demos {
        out.push_str(&listing.render(&[
            (Placeholder::Input, &demo.input),
            (Placeholder::Output, demo.primary_output()),
        ]));
        out.push_str(delimiter);
    }
    out
}

fn render_evaluation(
    template: &PromptTemplate,
    listing: &PromptTemplate,
    delimiter: &str,
    instruction: &str,
    demos: &[Demo],
    query: &str,
) -> String {
    let block = render_demo_block(listing, delimiter, demos);
    template.render(&[
        (Placeholder::Instruction, instruction),
        (Placeholder::FullDemos, &block),
        (Placeholder::Input, query),
    ])
}
