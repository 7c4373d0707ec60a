//! GUI annotations embedded in node code.
//!
//! An annotation is `$[type,param,...]` where `type` is one of `checkbox`,
//! `dropdown`, `slider` or `date`:
//!
//! ```text
//! $[checkbox,Label,true|false]
//! $[dropdown,Label,opt1|opt2|...,default_index]
//! $[slider,Label,min,max,step,default]
//! $[date,Label,YYYY-MM-DD]
//! ```
//!
//! Parameters are separated by `,` and trimmed of surrounding whitespace;
//! they cannot contain `,` or `]`, and dropdown options cannot contain `|`.
//! `$$[` is an escaped literal `$[` and is never a site.
//!
//! Annotated code is the stored source of truth. [`substitute`] produces the
//! executable text by replacing each site with the raw value token (no
//! quoting is added) and unescaping `$$[`.

use std::collections::BTreeMap;
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::format_decimal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidgetKind {
    Checkbox,
    Dropdown,
    Slider,
    Date,
}

impl WidgetKind {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "checkbox" => Some(WidgetKind::Checkbox),
            "dropdown" => Some(WidgetKind::Dropdown),
            "slider" => Some(WidgetKind::Slider),
            "date" => Some(WidgetKind::Date),
            _ => None,
        }
    }

    fn arity(self) -> usize {
        match self {
            WidgetKind::Checkbox | WidgetKind::Date => 2,
            WidgetKind::Dropdown => 3,
            WidgetKind::Slider => 5,
        }
    }
}

/// A widget value. Dropdowns hold the selected option's 0-based index, dates
/// hold ISO-8601 date text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WidgetValue {
    Bool(bool),
    Number(f64),
    Text(String),
}

impl fmt::Display for WidgetValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WidgetValue::Bool(b) => write!(f, "{b}"),
            WidgetValue::Number(x) => f.write_str(&format_decimal(*x)),
            WidgetValue::Text(s) => f.write_str(s),
        }
    }
}

/// Map from site ordinal to chosen value.
pub type WidgetValues = BTreeMap<usize, WidgetValue>;

/// Deserialize [`WidgetValues`] from JSON objects, whose keys are always
/// strings. Needed wherever the map sits inside an internally tagged enum.
pub fn deserialize_values<'de, D: serde::Deserializer<'de>>(d: D) -> Result<WidgetValues, D::Error> {
    let raw = BTreeMap::<String, WidgetValue>::deserialize(d)?;
    raw.into_iter()
        .map(|(k, v)| k.parse().map(|k| (k, v)).map_err(|_| serde::de::Error::custom(format!("bad widget ordinal {k:?}"))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "widget", rename_all = "snake_case")]
pub enum WidgetParams {
    Checkbox { label: String },
    Dropdown { label: String, options: Vec<String> },
    Slider { label: String, min: f64, max: f64, step: f64 },
    Date { label: String },
}

impl WidgetParams {
    pub fn kind(&self) -> WidgetKind {
        match self {
            WidgetParams::Checkbox { .. } => WidgetKind::Checkbox,
            WidgetParams::Dropdown { .. } => WidgetKind::Dropdown,
            WidgetParams::Slider { .. } => WidgetKind::Slider,
            WidgetParams::Date { .. } => WidgetKind::Date,
        }
    }

    pub fn label(&self) -> &str {
        match self {
            WidgetParams::Checkbox { label }
            | WidgetParams::Dropdown { label, .. }
            | WidgetParams::Slider { label, .. }
            | WidgetParams::Date { label } => label,
        }
    }

    /// Whether `value` is an admissible value for this widget.
    pub fn admits(&self, value: &WidgetValue) -> bool {
        match (self, value) {
            (WidgetParams::Checkbox { .. }, WidgetValue::Bool(_)) => true,
            (WidgetParams::Dropdown { options, .. }, WidgetValue::Number(i)) => {
                i.fract() == 0.0 && *i >= 0.0 && (*i as usize) < options.len()
            }
            (WidgetParams::Slider { min, max, step, .. }, WidgetValue::Number(v)) => {
                on_lattice(*v, *min, *max, *step)
            }
            (WidgetParams::Date { .. }, WidgetValue::Text(s)) => parse_date(s).is_some(),
            _ => false,
        }
    }

    /// Text inserted in place of the annotation.
    fn token(&self, value: &WidgetValue) -> String {
        match (self, value) {
            (WidgetParams::Dropdown { options, .. }, WidgetValue::Number(i)) => options[*i as usize].clone(),
            (_, v) => v.to_string(),
        }
    }
}

fn on_lattice(v: f64, min: f64, max: f64, step: f64) -> bool {
    if !(v.is_finite() && v >= min && v <= max) {
        return false;
    }
    let k = (v - min) / step;
    (k - k.round()).abs() <= 1e-9 * k.abs().max(1.0)
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok().filter(|d| d.format("%Y-%m-%d").to_string() == s)
}

/// One parsed annotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSite {
    pub ordinal: usize,
    /// Byte range `[start, end)` of the whole `$[...]` text.
    pub span: (usize, usize),
    pub params: WidgetParams,
    pub default: WidgetValue,
}

impl AnnotationSite {
    pub fn widget(&self) -> WidgetKind {
        self.params.kind()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MalformedReason {
    UnknownType(String),
    BadArity { expected: usize, found: usize },
    BadParam(String),
    DefaultOutOfRange,
    Unterminated,
}

impl fmt::Display for MalformedReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MalformedReason::UnknownType(t) => write!(f, "unknown widget type {t:?}"),
            MalformedReason::BadArity { expected, found } => {
                write!(f, "expected {expected} parameters, found {found}")
            }
            MalformedReason::BadParam(p) => write!(f, "bad parameter: {p}"),
            MalformedReason::DefaultOutOfRange => f.write_str("default out of range"),
            MalformedReason::Unterminated => f.write_str("unterminated annotation"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnnotationError {
    #[error("malformed annotation at {}..{}: {reason}", span.0, span.1)]
    Malformed { span: (usize, usize), reason: MalformedReason },
    #[error("value for widget {0} is outside its constraints")]
    ValueOutOfConstraints(usize),
    #[error("no annotation site with ordinal {0}")]
    UnknownOrdinal(usize),
    #[error("sites do not match the code they are applied to")]
    SitesMismatch,
}

enum Segment {
    Literal(usize, usize),
    Escape,
    Site(AnnotationSite),
}

fn scan(code: &str) -> Result<Vec<Segment>, AnnotationError> {
    let bytes = code.as_bytes();
    let mut segments = Vec::new();
    let mut lit_start = 0;
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i..].starts_with(b"$$[") {
            if lit_start < i {
                segments.push(Segment::Literal(lit_start, i));
            }
            segments.push(Segment::Escape);
            i += 3;
            lit_start = i;
        } else if bytes[i..].starts_with(b"$[") {
            if lit_start < i {
                segments.push(Segment::Literal(lit_start, i));
            }
            let close = bytes[i + 2..].iter().position(|&b| b == b']').map(|p| i + 2 + p);
            let Some(close) = close else {
                return Err(AnnotationError::Malformed {
                    span: (i, bytes.len()),
                    reason: MalformedReason::Unterminated,
                });
            };
            let span = (i, close + 1);
            let ordinal = segments.iter().filter(|s| matches!(s, Segment::Site(_))).count();
            let (params, default) = parse_body(&code[i + 2..close])
                .map_err(|reason| AnnotationError::Malformed { span, reason })?;
            segments.push(Segment::Site(AnnotationSite { ordinal, span, params, default }));
            i = close + 1;
            lit_start = i;
        } else {
            i += 1;
        }
    }
    if lit_start < bytes.len() {
        segments.push(Segment::Literal(lit_start, bytes.len()));
    }
    Ok(segments)
}

fn parse_number(raw: &str, what: &str) -> Result<f64, MalformedReason> {
    raw.parse::<f64>()
        .ok()
        .filter(|x| x.is_finite())
        .ok_or_else(|| MalformedReason::BadParam(format!("{what} {raw:?} is not a number")))
}

fn parse_body(body: &str) -> Result<(WidgetParams, WidgetValue), MalformedReason> {
    let parts: Vec<&str> = body.split(',').map(str::trim).collect();
    let kind = WidgetKind::parse(parts[0]).ok_or_else(|| MalformedReason::UnknownType(parts[0].to_string()))?;
    let args = &parts[1..];
    if args.len() != kind.arity() {
        return Err(MalformedReason::BadArity { expected: kind.arity(), found: args.len() });
    }
    let label = args[0].to_string();
    if label.is_empty() {
        return Err(MalformedReason::BadParam("empty label".into()));
    }
    let (params, default) = match kind {
        WidgetKind::Checkbox => {
            let default = match args[1] {
                "true" => true,
                "false" => false,
                other => return Err(MalformedReason::BadParam(format!("checkbox default {other:?}"))),
            };
            (WidgetParams::Checkbox { label }, WidgetValue::Bool(default))
        }
        WidgetKind::Dropdown => {
            let options: Vec<String> = args[1].split('|').map(|o| o.trim().to_string()).collect();
            if options.iter().any(String::is_empty) {
                return Err(MalformedReason::BadParam("empty dropdown option".into()));
            }
            let index: usize = args[2]
                .parse()
                .map_err(|_| MalformedReason::BadParam(format!("dropdown default {:?}", args[2])))?;
            if index >= options.len() {
                return Err(MalformedReason::DefaultOutOfRange);
            }
            (WidgetParams::Dropdown { label, options }, WidgetValue::Number(index as f64))
        }
        WidgetKind::Slider => {
            let min = parse_number(args[1], "min")?;
            let max = parse_number(args[2], "max")?;
            let step = parse_number(args[3], "step")?;
            let default = parse_number(args[4], "default")?;
            if min > max {
                return Err(MalformedReason::BadParam("min exceeds max".into()));
            }
            if step <= 0.0 {
                return Err(MalformedReason::BadParam("step must be positive".into()));
            }
            if !on_lattice(default, min, max, step) {
                return Err(MalformedReason::DefaultOutOfRange);
            }
            (WidgetParams::Slider { label, min, max, step }, WidgetValue::Number(default))
        }
        WidgetKind::Date => {
            if parse_date(args[1]).is_none() {
                return Err(MalformedReason::BadParam(format!("date default {:?}", args[1])));
            }
            (WidgetParams::Date { label }, WidgetValue::Text(args[1].to_string()))
        }
    };
    Ok((params, default))
}

/// Parse every annotation site in `code`, in document order.
pub fn parse_annotations(code: &str) -> Result<Vec<AnnotationSite>, AnnotationError> {
    Ok(scan(code)?
        .into_iter()
        .filter_map(|s| match s {
            Segment::Site(site) => Some(site),
            _ => None,
        })
        .collect())
}

/// Rendering of one site for the GUI facet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidgetDescriptor {
    pub ordinal: usize,
    pub widget: WidgetKind,
    pub label: String,
    pub constraints: Constraints,
    pub current: WidgetValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Constraints {
    Options { options: Vec<String> },
    Range { min: f64, max: f64, step: f64 },
    None,
}

/// Check that every value names an existing site and fits its constraints.
pub fn check_values(sites: &[AnnotationSite], values: &WidgetValues) -> Result<(), AnnotationError> {
    for (ordinal, value) in values {
        let site = sites.get(*ordinal).ok_or(AnnotationError::UnknownOrdinal(*ordinal))?;
        if !site.params.admits(value) {
            return Err(AnnotationError::ValueOutOfConstraints(*ordinal));
        }
    }
    Ok(())
}

pub fn widget_descriptors(
    sites: &[AnnotationSite],
    values: &WidgetValues,
) -> Result<Vec<WidgetDescriptor>, AnnotationError> {
    check_values(sites, values)?;
    Ok(sites
        .iter()
        .map(|site| WidgetDescriptor {
            ordinal: site.ordinal,
            widget: site.widget(),
            label: site.params.label().to_string(),
            constraints: match &site.params {
                WidgetParams::Dropdown { options, .. } => Constraints::Options { options: options.clone() },
                WidgetParams::Slider { min, max, step, .. } => {
                    Constraints::Range { min: *min, max: *max, step: *step }
                }
                _ => Constraints::None,
            },
            current: values.get(&site.ordinal).cloned().unwrap_or_else(|| site.default.clone()),
        })
        .collect())
}

/// Substituted text plus the byte span of every inserted value token.
#[derive(Debug, Clone, PartialEq)]
pub struct Substitution {
    pub text: String,
    pub token_spans: Vec<(usize, usize)>,
}

/// Replace every site with its value token and unescape `$$[`.
pub fn substitute(
    code: &str,
    sites: &[AnnotationSite],
    values: &WidgetValues,
) -> Result<String, AnnotationError> {
    substitute_with_spans(code, sites, values).map(|s| s.text)
}

pub fn substitute_with_spans(
    code: &str,
    sites: &[AnnotationSite],
    values: &WidgetValues,
) -> Result<Substitution, AnnotationError> {
    check_values(sites, values)?;
    let segments = scan(code)?;
    let mut text = String::with_capacity(code.len());
    let mut token_spans = Vec::with_capacity(sites.len());
    let mut seen = 0;
    for segment in segments {
        match segment {
            Segment::Literal(a, b) => text.push_str(&code[a..b]),
            Segment::Escape => text.push_str("$["),
            Segment::Site(parsed) => {
                if sites.get(seen) != Some(&parsed) {
                    return Err(AnnotationError::SitesMismatch);
                }
                let value = values.get(&parsed.ordinal).unwrap_or(&parsed.default);
                let start = text.len();
                text.push_str(&parsed.params.token(value));
                token_spans.push((start, text.len()));
                seen += 1;
            }
        }
    }
    if seen != sites.len() {
        return Err(AnnotationError::SitesMismatch);
    }
    Ok(Substitution { text, token_spans })
}

/// Parse and substitute in one step.
pub fn render(code: &str, values: &WidgetValues) -> Result<String, AnnotationError> {
    let sites = parse_annotations(code)?;
    substitute(code, &sites, values)
}

/// Keep only the values that still fit the sites of `code`; used when code
/// is edited under existing widget values.
pub fn retain_valid_values(code: &str, values: &WidgetValues) -> WidgetValues {
    match parse_annotations(code) {
        Ok(sites) => values
            .iter()
            .filter(|(o, v)| sites.get(**o).is_some_and(|s| s.params.admits(v)))
            .map(|(o, v)| (*o, v.clone()))
            .collect(),
        Err(_) => WidgetValues::new(),
    }
}
