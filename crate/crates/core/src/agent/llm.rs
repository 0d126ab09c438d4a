//! Chat-completion backed policy and detector.
//!
//! Both speak the OpenAI chat-completions shape. The HTTP client is behind
//! [`ChatTransport`] so the core stays free of network code; replies must
//! carry exactly one fenced block, anything else degrades to a no-op.

use serde::{Deserialize, Serialize};

use super::{CandidateLine, Decision, DecisionContext, Policy, PolicyError, Proposal};
use crate::detector::{DetectError, DetectionReport, Detector, Diagnosis, Rule};
use crate::netlist::Netlist;
use crate::simulator::SimTrace;

pub const ENV_URL: &str = "ATGEN_LLM_URL";
pub const ENV_MODEL: &str = "ATGEN_LLM_MODEL";
pub const ENV_API_KEY: &str = "ATGEN_LLM_API_KEY";
pub const DEFAULT_TEMPERATURE: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }
}

/// Request body of `POST /v1/chat/completions`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<ChatChoice>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct ChatChoice {
    pub message: ChatMessage,
}

impl ChatResponse {
    pub fn content(&self) -> Option<&str> {
        self.choices.first().map(|c| c.message.content.as_str())
    }
}

/// Sends one chat request and returns the assistant text.
pub trait ChatTransport: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, String>;
}

/// Contents of the single fenced block in `reply`, or `None` if there are
/// zero or several blocks or the fence is unterminated.
pub fn single_fenced_block(reply: &str) -> Option<String> {
    let mut blocks = Vec::new();
    let mut current: Option<Vec<&str>> = None;
    for line in reply.lines() {
        if line.trim_start().starts_with("```") {
            match current.take() {
                Some(body) => blocks.push(body.join("\n")),
                None => current = Some(Vec::new()),
            }
        } else if let Some(body) = current.as_mut() {
            body.push(line);
        }
    }
    if current.is_some() || blocks.len() != 1 {
        return None;
    }
    blocks.pop()
}

/// Parse a policy reply: one fenced block holding one non-empty line,
/// either a SPICE element line or `REVERT <id>`.
pub fn parse_policy_reply(reply: &str) -> Proposal {
    let Some(block) = single_fenced_block(reply) else {
        return Proposal::Noop("reply must contain exactly one fenced block".into());
    };
    let lines: Vec<&str> = block.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let [line] = lines.as_slice() else {
        return Proposal::Noop(format!("fenced block must hold one line, found {}", lines.len()));
    };
    let mut words = line.split_whitespace();
    if words.next().is_some_and(|w| w.eq_ignore_ascii_case("revert")) {
        return match (words.next(), words.next()) {
            (Some(id), None) => Proposal::Revert(id.to_string()),
            _ => Proposal::Noop("REVERT takes exactly one element id".into()),
        };
    }
    Proposal::Insert(CandidateLine::Raw(line.to_string()))
}

pub const POLICY_SYSTEM_PROMPT: &str = "\
You insert hidden analog components into a SPICE netlist so that a detector does not flag them.
Allowed components: resistor (R<n> n1 n2 value), capacitor (C<n> n1 n2 value),
NMOS or PMOS (M<n> drain gate source model W=<w> L=<l>) using a model card already in the netlist.
Identifiers are the prefix letter followed by a positive integer not already used.
Only use nodes from the provided node list; 0 is ground. Values are SI numbers or SPICE suffixes.
To undo a flagged insertion, reply REVERT <id>.
Reply with exactly one fenced code block containing exactly one line.";

pub struct LlmPolicy {
    transport: Box<dyn ChatTransport>,
    pub model: String,
    pub temperature: f64,
}

impl LlmPolicy {
    pub fn new(transport: Box<dyn ChatTransport>, model: &str) -> Self {
        LlmPolicy {
            transport,
            model: model.to_string(),
            temperature: DEFAULT_TEMPERATURE,
        }
    }

    pub fn request(&self, ctx: &DecisionContext<'_>) -> ChatRequest {
        let state = ctx.state;
        let user = format!(
            "Candidate netlist:\n```\n{}```\n\nDetector feedback:\n{}\nInserted lines so far: {}\nAvailable nodes: {}\n",
            state.candidate.to_spice(),
            ctx.feedback,
            if state.inserted.is_empty() {
                "none".to_string()
            } else {
                state.inserted.join(", ")
            },
            ctx.available_nodes.join(", "),
        );
        ChatRequest {
            model: self.model.clone(),
            messages: vec![ChatMessage::system(POLICY_SYSTEM_PROMPT), ChatMessage::user(user)],
            temperature: self.temperature,
        }
    }
}

impl Policy for LlmPolicy {
    fn name(&self) -> &str {
        "llm"
    }

    fn decide(&mut self, ctx: &mut DecisionContext<'_>) -> Result<Decision, PolicyError> {
        let request = self.request(ctx);
        let reply = self.transport.complete(&request).map_err(PolicyError::Backend)?;
        let thought = reply
            .split("```")
            .next()
            .unwrap_or("")
            .trim()
            .chars()
            .take(400)
            .collect();
        Ok(Decision {
            thought,
            proposal: parse_policy_reply(&reply),
        })
    }
}

pub const DETECTOR_SYSTEM_PROMPT: &str = "\
You audit analog SPICE netlists for hardware Trojans using the netlist and its DC sweep log.
Reply with exactly one fenced code block. Inside it write one line per suspect element,
formatted as `<id>: <reason>`, or the single word NONE if nothing is suspicious.";

pub struct LlmDetector {
    transport: Box<dyn ChatTransport>,
    pub model: String,
    pub temperature: f64,
}

impl LlmDetector {
    pub fn new(transport: Box<dyn ChatTransport>, model: &str) -> Self {
        LlmDetector {
            transport,
            model: model.to_string(),
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

/// Parse a detector reply into `(id, reason)` pairs.
pub fn parse_detector_reply(reply: &str) -> Option<Vec<(String, String)>> {
    let block = single_fenced_block(reply)?;
    let lines: Vec<&str> = block.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if lines.len() == 1 && lines[0].eq_ignore_ascii_case("none") {
        return Some(Vec::new());
    }
    lines
        .iter()
        .map(|l| {
            let (id, reason) = l.split_once(':')?;
            let id = id.trim();
            (!id.is_empty() && !id.contains(char::is_whitespace)).then(|| (id.to_string(), reason.trim().to_string()))
        })
        .collect()
}

impl Detector for LlmDetector {
    fn id(&self) -> &str {
        "llm"
    }

    fn detect(&self, n: &Netlist, trace: &SimTrace, _round: usize) -> Result<DetectionReport, DetectError> {
        crate::detector::check_trace(n, trace)?;
        let user = format!(
            "Netlist:\n```\n{}```\n\nDC sweep of {} (CSV):\n{}",
            n.to_spice(),
            trace.sweep.source_id,
            trace.to_csv_string()
        );
        let request = ChatRequest {
            model: self.model.clone(),
            messages: vec![ChatMessage::system(DETECTOR_SYSTEM_PROMPT), ChatMessage::user(user)],
            temperature: self.temperature,
        };
        let reply = self.transport.complete(&request).map_err(DetectError::Backend)?;
        let verdicts = parse_detector_reply(&reply)
            .ok_or_else(|| DetectError::Backend("reply does not follow the suspect-list grammar".into()))?;
        let mut report = DetectionReport::new(self.id());
        for (id, reason) in verdicts {
            if let Some(e) = n.element(&id) {
                report.add(
                    &id,
                    Diagnosis {
                        rule: Rule::External,
                        nodes: e.nodes.clone(),
                        sweep_points: Vec::new(),
                        explanation: reason,
                    },
                );
            }
        }
        Ok(report)
    }
}
