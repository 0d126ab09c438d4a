//! SPICE text to [`Netlist`].

use std::collections::HashSet;

use thiserror::Error;

use super::{is_ground, Device, Element, ModelCard, Mosfet, Netlist, Polarity, GROUND};
use crate::units::parse_value;

/// Parse failure, tagged with the 1-based physical line where the offending
/// logical line starts.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("line {line}: unknown element prefix in `{token}`")]
    UnknownElementPrefix { line: usize, token: String },
    #[error("line {line}: `{token}` expects {expected} nodes, found {found}")]
    ArityMismatch {
        line: usize,
        token: String,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: malformed value `{token}`")]
    MalformedValue { line: usize, token: String },
    #[error("line {line}: duplicate element id `{token}`")]
    DuplicateId { line: usize, token: String },
    #[error("line {line}: unknown model `{token}`")]
    UnknownModel { line: usize, token: String },
}

impl ParseError {
    pub fn line(&self) -> usize {
        match self {
            ParseError::UnknownElementPrefix { line, .. }
            | ParseError::ArityMismatch { line, .. }
            | ParseError::MalformedValue { line, .. }
            | ParseError::DuplicateId { line, .. }
            | ParseError::UnknownModel { line, .. } => *line,
        }
    }

    fn with_line(mut self, at: usize) -> Self {
        match &mut self {
            ParseError::UnknownElementPrefix { line, .. }
            | ParseError::ArityMismatch { line, .. }
            | ParseError::MalformedValue { line, .. }
            | ParseError::DuplicateId { line, .. }
            | ParseError::UnknownModel { line, .. } => *line = at,
        }
        self
    }
}

/// Join `+` continuations into logical lines, dropping blanks and inline
/// `;` comments. The title line is not included.
fn logical_lines(text: &str) -> Vec<(usize, String)> {
    let mut out: Vec<(usize, String)> = Vec::new();
    for (idx, raw) in text.lines().enumerate().skip(1) {
        let line_no = idx + 1;
        let body = match raw.find(';') {
            Some(pos) => &raw[..pos],
            None => raw,
        };
        let body = body.trim();
        if body.is_empty() {
            continue;
        }
        if let Some(rest) = body.strip_prefix('+') {
            if let Some(last) = out.last_mut() {
                if !last.1.starts_with('*') {
                    last.1.push(' ');
                    last.1.push_str(rest.trim());
                    continue;
                }
            }
            out.push((line_no, rest.trim().to_string()));
            continue;
        }
        out.push((line_no, body.to_string()));
    }
    out
}

fn tokenize(line: &str) -> Vec<String> {
    // `W = 1u` and `W=1u` tokenize identically; parentheses are decoration
    let spaced = line.replace('=', " = ").replace(['(', ')', ','], " ");
    let raw: Vec<&str> = spaced.split_whitespace().collect();
    let mut tokens = Vec::with_capacity(raw.len());
    let mut i = 0;
    while i < raw.len() {
        if i + 2 < raw.len() && raw[i + 1] == "=" {
            tokens.push(format!("{}={}", raw[i], raw[i + 2]));
            i += 3;
        } else {
            tokens.push(raw[i].to_string());
            i += 1;
        }
    }
    tokens
}

fn parse_model(line: usize, text: &str) -> Result<Option<ModelCard>, ParseError> {
    let tokens = tokenize(text);
    if tokens.len() < 3 {
        return Ok(None);
    }
    let polarity = match tokens[2].to_ascii_lowercase().as_str() {
        "nmos" => Polarity::N,
        "pmos" => Polarity::P,
        _ => return Ok(None),
    };
    let mut params = Vec::new();
    for tok in &tokens[3..] {
        let Some((k, v)) = tok.split_once('=') else {
            continue;
        };
        let value = parse_value(v).ok_or_else(|| ParseError::MalformedValue {
            line,
            token: tok.clone(),
        })?;
        params.push((k.to_ascii_lowercase(), value));
    }
    Ok(Some(ModelCard {
        name: tokens[1].clone(),
        polarity,
        params,
    }))
}

fn normalize_node(node: &str) -> String {
    if is_ground(node) {
        GROUND.to_string()
    } else {
        node.to_string()
    }
}

fn arity_error(line: usize, id: &str, expected: usize, found: usize) -> ParseError {
    ParseError::ArityMismatch {
        line,
        token: id.to_string(),
        expected,
        found,
    }
}

fn positive(line: usize, token: &str) -> Result<f64, ParseError> {
    match parse_value(token) {
        Some(v) if v > 0.0 => Ok(v),
        _ => Err(ParseError::MalformedValue {
            line,
            token: token.to_string(),
        }),
    }
}

/// Parse one element line against a set of model cards. Errors report line 1.
pub fn parse_element_line(text: &str, models: &[ModelCard]) -> Result<Element, ParseError> {
    parse_element(1, text, models)
}

fn parse_element(line: usize, text: &str, models: &[ModelCard]) -> Result<Element, ParseError> {
    let tokens = tokenize(text);
    let id = tokens.first().cloned().unwrap_or_default();
    let prefix = id.chars().next().map(|c| c.to_ascii_uppercase());
    match prefix {
        Some('R') | Some('C') => {
            if tokens.len() < 2 {
                return Err(arity_error(line, &id, 2, 0));
            }
            let nodes = &tokens[1..tokens.len() - 1];
            if nodes.len() != 2 {
                return Err(arity_error(line, &id, 2, nodes.len()));
            }
            let value = positive(line, &tokens[tokens.len() - 1])?;
            let device = if prefix == Some('R') {
                Device::Resistor { resistance: value }
            } else {
                Device::Capacitor { capacitance: value }
            };
            Ok(Element {
                id,
                nodes: nodes.iter().map(|n| normalize_node(n)).collect(),
                device,
            })
        }
        Some('V') | Some('I') => {
            if tokens.len() < 2 {
                return Err(arity_error(line, &id, 2, 0));
            }
            let value_tok = &tokens[tokens.len() - 1];
            let mut node_end = tokens.len() - 1;
            if node_end >= 2 && tokens[node_end - 1].eq_ignore_ascii_case("dc") {
                node_end -= 1;
            }
            let nodes = &tokens[1..node_end];
            if nodes.len() != 2 {
                return Err(arity_error(line, &id, 2, nodes.len()));
            }
            let dc = parse_value(value_tok).ok_or_else(|| ParseError::MalformedValue {
                line,
                token: value_tok.clone(),
            })?;
            let device = if prefix == Some('V') {
                Device::VoltageSource { dc }
            } else {
                Device::CurrentSource { dc }
            };
            Ok(Element {
                id,
                nodes: nodes.iter().map(|n| normalize_node(n)).collect(),
                device,
            })
        }
        Some('M') => {
            let positional: Vec<&String> = tokens[1..].iter().filter(|t| !t.contains('=')).collect();
            let Some((model_name, nodes)) = positional.split_last() else {
                return Err(arity_error(line, &id, 3, 0));
            };
            if nodes.len() != 3 {
                return Err(arity_error(line, &id, 3, nodes.len()));
            }
            let model = models
                .iter()
                .find(|m| m.name.eq_ignore_ascii_case(model_name))
                .ok_or_else(|| ParseError::UnknownModel {
                    line,
                    token: (*model_name).clone(),
                })?;
            let mut w = None;
            let mut l = None;
            let mut extra = Vec::new();
            for tok in tokens[1..].iter().filter(|t| t.contains('=')) {
                let (k, v) = tok.split_once('=').unwrap_or((tok, ""));
                match k.to_ascii_lowercase().as_str() {
                    "w" => w = Some(positive(line, v)?),
                    "l" => l = Some(positive(line, v)?),
                    _ => {
                        let value = parse_value(v).ok_or_else(|| ParseError::MalformedValue {
                            line,
                            token: tok.clone(),
                        })?;
                        extra.push((k.to_string(), value));
                    }
                }
            }
            Ok(Element {
                id,
                nodes: nodes.iter().map(|n| normalize_node(n)).collect(),
                device: Device::Mosfet(Mosfet {
                    polarity: model.polarity,
                    model: model.name.clone(),
                    w,
                    l,
                    vto: model.vto(),
                    kp: model.kp(),
                    extra,
                }),
            })
        }
        _ => Err(ParseError::UnknownElementPrefix { line, token: id }),
    }
}

/// Parse SPICE text. The first line is always the title.
///
/// `.model` cards may appear anywhere; they are collected before elements are
/// resolved. Everything after `.end` is ignored.
pub fn parse(text: &str) -> Result<Netlist, ParseError> {
    let title = text.lines().next().unwrap_or("").trim_end().to_string();
    let mut lines = logical_lines(text);
    if let Some(end) = lines
        .iter()
        .position(|(_, l)| l.eq_ignore_ascii_case(".end"))
    {
        lines.truncate(end);
    }

    let mut netlist = Netlist::new(&title);
    for (line, body) in &lines {
        if is_model_card(body) {
            match parse_model(*line, body)? {
                Some(card) => netlist.models.push(card),
                None => netlist.controls.push(body.clone()),
            }
        }
    }

    let mut seen = HashSet::new();
    for (line, body) in &lines {
        if body.starts_with('*') {
            netlist.comments.push(body.clone());
        } else if body.starts_with('.') {
            if is_model_card(body) {
                continue;
            }
            let card = body.split_whitespace().next().unwrap_or("").to_ascii_lowercase();
            if matches!(card.as_str(), ".dc" | ".tran" | ".ac") {
                netlist
                    .meta
                    .warnings
                    .push(format!("line {line}: analysis card `{card}` ignored"));
            }
            netlist.controls.push(body.clone());
        } else {
            let element = parse_element(*line, body, &netlist.models).map_err(|e| e.with_line(*line))?;
            if !seen.insert(element.id.clone()) {
                return Err(ParseError::DuplicateId {
                    line: *line,
                    token: element.id,
                });
            }
            netlist.elements.push(element);
        }
    }
    Ok(netlist)
}

fn is_model_card(body: &str) -> bool {
    body.split_whitespace()
        .next()
        .is_some_and(|t| t.eq_ignore_ascii_case(".model"))
}
