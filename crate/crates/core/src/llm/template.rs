//! `{{name}}` placeholders and `{% block name %}...{% end %}` optional
//! sections. A block tag alone on its line consumes that whole line, so
//! disabling a block leaves no blank residue.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use super::Prompt;

pub type Bindings = BTreeMap<String, String>;
/// Block name to enabled flag. Blocks not listed are enabled.
pub type BlockSwitches = BTreeMap<String, bool>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("template `{template}` line {line}: {reason}")]
    Syntax { template: String, line: usize, reason: String },
    #[error("missing binding for placeholder `{0}`")]
    MissingBinding(String),
    #[error("binding `{0}` does not match any placeholder in the template")]
    UnknownPlaceholder(String),
    #[error("unknown block `{0}`")]
    UnknownBlock(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Node {
    Text(String),
    Placeholder(String),
    Block { name: String, body: Vec<Node> },
}

/// A parsed prompt template with a system part and a user part.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: String,
    system: Vec<Node>,
    user: Vec<Node>,
}

fn is_ident(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

struct Parser<'a> {
    template: &'a str,
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn line(&self, at: usize) -> usize {
        self.src[..at].matches('\n').count() + 1
    }

    fn err(&self, at: usize, reason: impl Into<String>) -> TemplateError {
        TemplateError::Syntax {
            template: self.template.to_string(),
            line: self.line(at),
            reason: reason.into(),
        }
    }

    /// Whether the tag spanning `start..end` sits alone on its line; if so,
    /// returns the range of the full line to consume.
    fn standalone(&self, start: usize, end: usize) -> Option<(usize, usize)> {
        let line_start = self.src[..start].rfind('\n').map(|i| i + 1).unwrap_or(0);
        if !self.src[line_start..start].chars().all(|c| c == ' ' || c == '\t') {
            return None;
        }
        let rest = &self.src[end..];
        let line_end = rest.find('\n').map(|i| end + i + 1).unwrap_or(self.src.len());
        if !self.src[end..line_end].trim().is_empty() {
            return None;
        }
        Some((line_start, line_end))
    }

    fn parse(&mut self, in_block: Option<(&str, usize)>) -> Result<Vec<Node>, TemplateError> {
        let mut nodes = Vec::new();
        let mut text = String::new();
        loop {
            let rest = &self.src[self.pos..];
            let next_var = rest.find("{{");
            let next_tag = rest.find("{%");
            let next = match (next_var, next_tag) {
                (None, None) => None,
                (Some(v), None) => Some(v),
                (None, Some(t)) => Some(t),
                (Some(v), Some(t)) => Some(v.min(t)),
            };
            let Some(offset) = next else {
                text.push_str(rest);
                self.pos = self.src.len();
                break;
            };
            let start = self.pos + offset;
            text.push_str(&self.src[self.pos..start]);
            if self.src[start..].starts_with("{{") {
                let close = self.src[start..]
                    .find("}}")
                    .ok_or_else(|| self.err(start, "unclosed `{{`"))?;
                let name = self.src[start + 2..start + close].trim();
                if !is_ident(name) {
                    return Err(self.err(start, format!("invalid placeholder name `{name}`")));
                }
                if !text.is_empty() {
                    nodes.push(Node::Text(std::mem::take(&mut text)));
                }
                nodes.push(Node::Placeholder(name.to_string()));
                self.pos = start + close + 2;
                continue;
            }
            let close = self.src[start..]
                .find("%}")
                .ok_or_else(|| self.err(start, "unclosed `{%`"))?;
            let end = start + close + 2;
            let tag: Vec<&str> = self.src[start + 2..start + close].split_whitespace().collect();
            let resume = match self.standalone(start, end) {
                Some((line_start, line_end)) => {
                    // drop the indentation already copied into `text`
                    let indent = start - line_start;
                    text.truncate(text.len() - indent);
                    line_end
                }
                None => end,
            };
            if !text.is_empty() {
                nodes.push(Node::Text(std::mem::take(&mut text)));
            }
            self.pos = resume;
            match tag.as_slice() {
                ["block", name] if is_ident(name) => {
                    let body = self.parse(Some((name, start)))?;
                    nodes.push(Node::Block {
                        name: name.to_string(),
                        body,
                    });
                }
                ["end"] => {
                    if in_block.is_none() {
                        return Err(self.err(start, "`{% end %}` without an open block"));
                    }
                    return Ok(nodes);
                }
                _ => return Err(self.err(start, format!("unknown tag `{}`", tag.join(" ")))),
            }
        }
        if let Some((name, at)) = in_block {
            return Err(self.err(at, format!("block `{name}` is never closed")));
        }
        if !text.is_empty() {
            nodes.push(Node::Text(text));
        }
        Ok(nodes)
    }
}

fn parse_part(template: &str, src: &str) -> Result<Vec<Node>, TemplateError> {
    Parser { template, src, pos: 0 }.parse(None)
}

fn collect(nodes: &[Node], in_block: bool, all: &mut BTreeSet<String>, required: &mut BTreeSet<String>, blocks: &mut BTreeSet<String>) {
    for node in nodes {
        match node {
            Node::Text(_) => {}
            Node::Placeholder(p) => {
                all.insert(p.clone());
                if !in_block {
                    required.insert(p.clone());
                }
            }
            Node::Block { name, body } => {
                blocks.insert(name.clone());
                collect(body, true, all, required, blocks);
            }
        }
    }
}

const SYSTEM_MARKER: &str = "=== system ===";
const USER_MARKER: &str = "=== user ===";

impl PromptTemplate {
    pub fn from_parts(name: &str, system: &str, user: &str) -> Result<Self, TemplateError> {
        Ok(Self {
            name: name.to_string(),
            system: parse_part(name, system)?,
            user: parse_part(name, user)?,
        })
    }

    /// Parse an asset file: an optional leading `{# ... #}` comment, then an
    /// `=== system ===` section and an `=== user ===` section.
    pub fn parse_asset(name: &str, source: &str) -> Result<Self, TemplateError> {
        let syntax = |reason: &str| TemplateError::Syntax {
            template: name.to_string(),
            line: 1,
            reason: reason.to_string(),
        };
        let mut body = source.trim_start();
        if let Some(rest) = body.strip_prefix("{#") {
            let close = rest.find("#}").ok_or_else(|| syntax("unclosed header comment"))?;
            body = &rest[close + 2..];
        }
        let body = body.trim_start_matches(['\n', '\r', ' ']);
        let rest = body
            .strip_prefix(SYSTEM_MARKER)
            .ok_or_else(|| syntax("expected `=== system ===` section"))?;
        let split = rest
            .find(&format!("\n{USER_MARKER}"))
            .ok_or_else(|| syntax("expected `=== user ===` section"))?;
        let system = rest[..split].strip_prefix('\n').unwrap_or(&rest[..split]);
        let user = &rest[split + 1 + USER_MARKER.len()..];
        let user = user.strip_prefix('\n').unwrap_or(user);
        Self::from_parts(name, system.trim_end_matches('\n'), user.trim_end_matches('\n'))
    }

    fn sets(&self) -> (BTreeSet<String>, BTreeSet<String>, BTreeSet<String>) {
        let (mut all, mut required, mut blocks) = Default::default();
        collect(&self.system, false, &mut all, &mut required, &mut blocks);
        collect(&self.user, false, &mut all, &mut required, &mut blocks);
        (all, required, blocks)
    }

    /// Placeholders outside any optional block.
    pub fn required_placeholders(&self) -> BTreeSet<String> {
        self.sets().1
    }

    pub fn placeholders(&self) -> BTreeSet<String> {
        self.sets().0
    }

    pub fn blocks(&self) -> BTreeSet<String> {
        self.sets().2
    }
}

fn render_nodes(
    nodes: &[Node],
    bindings: &Bindings,
    blocks: &BlockSwitches,
    out: &mut String,
) -> Result<(), TemplateError> {
    for node in nodes {
        match node {
            Node::Text(t) => out.push_str(t),
            Node::Placeholder(p) => {
                let value = bindings.get(p).ok_or_else(|| TemplateError::MissingBinding(p.clone()))?;
                out.push_str(value);
            }
            Node::Block { name, body } => {
                if blocks.get(name).copied().unwrap_or(true) {
                    render_nodes(body, bindings, blocks, out)?;
                }
            }
        }
    }
    Ok(())
}

/// Substitute bindings and drop disabled blocks. Placeholders inside a
/// disabled block need no binding; every binding must name a placeholder
/// of the template.
pub fn render_prompt(
    template: &PromptTemplate,
    bindings: &Bindings,
    blocks_enabled: &BlockSwitches,
) -> Result<Prompt, TemplateError> {
    let (all, _, known_blocks) = template.sets();
    if let Some(unknown) = bindings.keys().find(|k| !all.contains(*k)) {
        return Err(TemplateError::UnknownPlaceholder(unknown.clone()));
    }
    if let Some(unknown) = blocks_enabled.keys().find(|k| !known_blocks.contains(*k)) {
        return Err(TemplateError::UnknownBlock(unknown.clone()));
    }
    let mut system = String::new();
    render_nodes(&template.system, bindings, blocks_enabled, &mut system)?;
    let mut user = String::new();
    render_nodes(&template.user, bindings, blocks_enabled, &mut user)?;
    Ok(Prompt { system, user })
}
