use serde_json::Value;
use thiserror::Error;

use crate::market::{check_legal, Decision, Institution, PriceBook, PriceGrid, Problem, Treatment};

use super::prompt::SchemaId;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("no JSON object found in the reply")]
    NoJson,
    #[error("reply does not match the expected format: {0}")]
    Schema(String),
    #[error("reply breaks the game rules: {0}")]
    Illegal(String),
}

/// What a reply must contain, with the context needed to check legality.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResponseSchema {
    Comprehension,
    PriceBook { grid: PriceGrid },
    Decision { institution: Institution, problem: Problem, prices: PriceBook },
    ConsumerChoice { labels: Vec<String> },
}

impl ResponseSchema {
    pub fn id(&self) -> SchemaId {
        match self {
            ResponseSchema::Comprehension => SchemaId::Comprehension,
            ResponseSchema::PriceBook { .. } => SchemaId::PriceBook,
            ResponseSchema::Decision { .. } => SchemaId::Decision,
            ResponseSchema::ConsumerChoice { .. } => SchemaId::ConsumerChoice,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Parsed {
    Comprehension(String),
    PriceBook(PriceBook),
    Decision(Decision),
    /// Index into the offered labels; `None` means leave the market.
    ConsumerChoice(Option<usize>),
}

/// All top-level JSON objects embedded in free text, in order.
fn json_objects(text: &str) -> Vec<serde_json::Map<String, Value>> {
    let mut found = Vec::new();
    let mut i = 0;
    while let Some(off) = text[i..].find('{') {
        let start = i + off;
        let mut stream = serde_json::Deserializer::from_str(&text[start..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) => {
                found.push(map);
                i = start + stream.byte_offset();
            }
            _ => i = start + 1,
        }
    }
    found
}

fn int_field(obj: &serde_json::Map<String, Value>, key: &str) -> Result<u32, ParseError> {
    let v = obj.get(key).ok_or_else(|| ParseError::Schema(format!("missing `{key}`")))?;
    let n = match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    }
    .ok_or_else(|| ParseError::Schema(format!("`{key}` is not a number")))?;
    if n.fract() != 0.0 || n < 0.0 || n > u32::MAX as f64 {
        return Err(ParseError::Schema(format!("`{key}` must be a whole number, got {n}")));
    }
    Ok(n as u32)
}

fn str_field<'a>(obj: &'a serde_json::Map<String, Value>, key: &str) -> Result<&'a str, ParseError> {
    obj.get(key)
        .and_then(Value::as_str)
        .map(str::trim)
        .ok_or_else(|| ParseError::Schema(format!("missing string `{key}`")))
}

/// Extracts the answer from a reply. The last JSON object carrying the
/// expected keys wins, so reasoning before the answer is tolerated.
pub fn parse_response(text: &str, schema: &ResponseSchema) -> Result<Parsed, ParseError> {
    if let ResponseSchema::Comprehension = schema {
        let t = text.trim();
        return if t.is_empty() {
            Err(ParseError::Schema("empty answer".into()))
        } else {
            Ok(Parsed::Comprehension(t.to_string()))
        };
    }
    let objects = json_objects(text);
    if objects.is_empty() {
        return Err(ParseError::NoJson);
    }
    let keys: &[&str] = match schema {
        ResponseSchema::PriceBook { .. } => &["p_low", "p_high"],
        ResponseSchema::Decision { .. } => &["treatment", "charge"],
        ResponseSchema::ConsumerChoice { .. } => &["choice"],
        ResponseSchema::Comprehension => unreachable!(),
    };
    let obj = objects
        .iter()
        .rev()
        .find(|o| keys.iter().all(|k| o.contains_key(*k)))
        .ok_or_else(|| ParseError::Schema(format!("expected keys {keys:?}")))?;

    match schema {
        ResponseSchema::PriceBook { grid } => {
            let book = PriceBook { low: int_field(obj, "p_low")?, high: int_field(obj, "p_high")? };
            book.validate(*grid).map_err(|e| ParseError::Illegal(e.to_string()))?;
            Ok(Parsed::PriceBook(book))
        }
        ResponseSchema::Decision { institution, problem, prices } => {
            let treatment = match str_field(obj, "treatment")?.to_ascii_uppercase().as_str() {
                "HCT" => Treatment::Hct,
                "LCT" => Treatment::Lct,
                other => return Err(ParseError::Schema(format!("unknown treatment `{other}`"))),
            };
            let decision = Decision::new(treatment, int_field(obj, "charge")?);
            check_legal(*institution, *problem, decision, *prices).map_err(|e| ParseError::Illegal(e.to_string()))?;
            Ok(Parsed::Decision(decision))
        }
        ResponseSchema::ConsumerChoice { labels } => {
            let choice = str_field(obj, "choice")?;
            if choice.eq_ignore_ascii_case("leave") {
                return Ok(Parsed::ConsumerChoice(None));
            }
            labels
                .iter()
                .position(|l| l.eq_ignore_ascii_case(choice))
                .map(|i| Parsed::ConsumerChoice(Some(i)))
                .ok_or_else(|| ParseError::Illegal(format!("`{choice}` is not one of the offered Player A")))
        }
        ResponseSchema::Comprehension => unreachable!(),
    }
}
