//! Strict parsing of provider output into an [`AgentDecision`].
//!
//! The provider text must be exactly one JSON object with the keys
//! `choose_statement` (boolean) and `reasoning` (non-empty string). Syntax
//! errors win over contract errors; among contract errors the first one in
//! document order is reported, then missing fields.

use std::fmt;

use serde::de::{self, DeserializeSeed, IgnoredAny, MapAccess, Visitor};
use serde::Deserializer;
use thiserror::Error;

use crate::domain::AgentDecision;

pub const CHOOSE_STATEMENT: &str = "choose_statement";
pub const REASONING: &str = "reasoning";

/// Which clause of the response contract the provider violated.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MalformedOutput {
    #[error("output is not a single JSON object: {0}")]
    NotJson(String),
    #[error("missing required field '{0}'")]
    MissingField(String),
    #[error("field '{0}' has the wrong type")]
    WrongType(String),
    #[error("unexpected field '{0}'")]
    ExtraField(String),
    #[error("reasoning is empty")]
    EmptyReasoning,
}

#[derive(Default)]
struct Fields {
    choose_statement: Option<bool>,
    reasoning: Option<String>,
    violation: Option<MalformedOutput>,
}

impl Fields {
    fn flag(&mut self, violation: MalformedOutput) {
        self.violation.get_or_insert(violation);
    }
}

enum BoolOrOther {
    Bool(bool),
    Other,
}

enum StringOrOther {
    Str(String),
    Other,
}

struct BoolSeed;
struct StringSeed;

impl<'de> DeserializeSeed<'de> for BoolSeed {
    type Value = BoolOrOther;

    fn deserialize<D: Deserializer<'de>>(self, d: D) -> Result<Self::Value, D::Error> {
        d.deserialize_any(BoolSeed)
    }
}

impl<'de> DeserializeSeed<'de> for StringSeed {
    type Value = StringOrOther;

    fn deserialize<D: Deserializer<'de>>(self, d: D) -> Result<Self::Value, D::Error> {
        d.deserialize_any(StringSeed)
    }
}

/// Accept a value of any JSON shape, consuming it fully. Non-matching
/// shapes are ignored structurally so the syntax of the remainder is still
/// checked.
macro_rules! other_shapes {
    ($other:expr) => {
        fn visit_i64<E: de::Error>(self, _: i64) -> Result<Self::Value, E> {
            Ok($other)
        }
        fn visit_u64<E: de::Error>(self, _: u64) -> Result<Self::Value, E> {
            Ok($other)
        }
        fn visit_f64<E: de::Error>(self, _: f64) -> Result<Self::Value, E> {
            Ok($other)
        }
        fn visit_unit<E: de::Error>(self) -> Result<Self::Value, E> {
            Ok($other)
        }
        fn visit_seq<A: de::SeqAccess<'de>>(self, mut seq: A) -> Result<Self::Value, A::Error> {
            while seq.next_element::<IgnoredAny>()?.is_some() {}
            Ok($other)
        }
        fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
            while map.next_entry::<IgnoredAny, IgnoredAny>()?.is_some() {}
            Ok($other)
        }
    };
}

impl<'de> Visitor<'de> for BoolSeed {
    type Value = BoolOrOther;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("any JSON value")
    }

    fn visit_bool<E: de::Error>(self, v: bool) -> Result<Self::Value, E> {
        Ok(BoolOrOther::Bool(v))
    }

    fn visit_str<E: de::Error>(self, _: &str) -> Result<Self::Value, E> {
        Ok(BoolOrOther::Other)
    }

    other_shapes!(BoolOrOther::Other);
}

impl<'de> Visitor<'de> for StringSeed {
    type Value = StringOrOther;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("any JSON value")
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<Self::Value, E> {
        Ok(StringOrOther::Str(v.to_string()))
    }

    fn visit_string<E: de::Error>(self, v: String) -> Result<Self::Value, E> {
        Ok(StringOrOther::Str(v))
    }

    fn visit_bool<E: de::Error>(self, _: bool) -> Result<Self::Value, E> {
        Ok(StringOrOther::Other)
    }

    other_shapes!(StringOrOther::Other);
}

struct TopLevel;

impl<'de> Visitor<'de> for TopLevel {
    type Value = Fields;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("a JSON object")
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
        let mut fields = Fields::default();
        while let Some(key) = map.next_key::<String>()? {
            match key.as_str() {
                CHOOSE_STATEMENT if fields.choose_statement.is_none() => {
                    match map.next_value_seed(BoolSeed)? {
                        BoolOrOther::Bool(v) => fields.choose_statement = Some(v),
                        BoolOrOther::Other => {
                            fields.flag(MalformedOutput::WrongType(key));
                            // Mark as seen so a repeat counts as extra.
                            fields.choose_statement = Some(false);
                        }
                    }
                }
                REASONING if fields.reasoning.is_none() => match map.next_value_seed(StringSeed)? {
                    StringOrOther::Str(v) => {
                        if v.trim().is_empty() {
                            fields.flag(MalformedOutput::EmptyReasoning);
                        }
                        fields.reasoning = Some(v);
                    }
                    StringOrOther::Other => {
                        fields.flag(MalformedOutput::WrongType(key));
                        fields.reasoning = Some(String::new());
                    }
                },
                _ => {
                    map.next_value::<IgnoredAny>()?;
                    fields.flag(MalformedOutput::ExtraField(key));
                }
            }
        }
        Ok(fields)
    }
}

/// Parse provider text under the strict decision contract.
pub fn parse_decision(raw: &str) -> Result<AgentDecision, MalformedOutput> {
    let mut de = serde_json::Deserializer::from_str(raw);
    let fields = de
        .deserialize_any(TopLevel)
        .and_then(|fields| de.end().map(|()| fields))
        .map_err(|e| MalformedOutput::NotJson(e.to_string()))?;
    if let Some(violation) = fields.violation {
        return Err(violation);
    }
    let choose_statement = fields
        .choose_statement
        .ok_or_else(|| MalformedOutput::MissingField(CHOOSE_STATEMENT.into()))?;
    let reasoning = fields
        .reasoning
        .ok_or_else(|| MalformedOutput::MissingField(REASONING.into()))?;
    AgentDecision::new(choose_statement, reasoning).map_err(|_| MalformedOutput::EmptyReasoning)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn missing(name: &str) -> MalformedOutput {
        MalformedOutput::MissingField(name.into())
    }

    #[test]
    fn accepts_contract_object() {
        let d = parse_decision(r#"{"choose_statement": true, "reasoning": "Pronoun 'ey' is inclusive."}"#).unwrap();
        assert!(d.choose_statement());
        assert_eq!(d.reasoning(), "Pronoun 'ey' is inclusive.");
        let d = parse_decision("  {\"reasoning\":\"r\",\"choose_statement\":false}\n").unwrap();
        assert!(!d.choose_statement());
    }

    #[test]
    fn missing_fields() {
        assert_eq!(
            parse_decision(r#"{"choose_statement": false}"#),
            Err(missing("reasoning"))
        );
        assert_eq!(
            parse_decision(r#"{"reasoning": "r"}"#),
            Err(missing("choose_statement"))
        );
        assert_eq!(parse_decision("{}"), Err(missing("choose_statement")));
    }

    #[test]
    fn extra_fields() {
        assert_eq!(
            parse_decision(r#"{"choose_statement": true, "reasoning": "ok", "confidence": 0.9}"#),
            Err(MalformedOutput::ExtraField("confidence".into()))
        );
        assert_eq!(
            parse_decision(r#"{"choose_statement": true, "choose_statement": false, "reasoning": "ok"}"#),
            Err(MalformedOutput::ExtraField("choose_statement".into()))
        );
    }

    #[test]
    fn wrong_types() {
        for raw in [
            r#"{"choose_statement": "true", "reasoning": "ok"}"#,
            r#"{"choose_statement": 1, "reasoning": "ok"}"#,
            r#"{"choose_statement": null, "reasoning": "ok"}"#,
            r#"{"choose_statement": [true], "reasoning": "ok"}"#,
        ] {
            assert_eq!(
                parse_decision(raw),
                Err(MalformedOutput::WrongType("choose_statement".into()))
            );
        }
        assert_eq!(
            parse_decision(r#"{"choose_statement": true, "reasoning": {"a": 1}}"#),
            Err(MalformedOutput::WrongType("reasoning".into()))
        );
    }

    #[test]
    fn empty_reasoning() {
        assert_eq!(
            parse_decision(r#"{"choose_statement": true, "reasoning": ""}"#),
            Err(MalformedOutput::EmptyReasoning)
        );
        assert_eq!(
            parse_decision(r#"{"choose_statement": true, "reasoning": "  "}"#),
            Err(MalformedOutput::EmptyReasoning)
        );
    }

    #[test]
    fn not_json() {
        for raw in [
            "",
            "true",
            "[]",
            r#""choose_statement""#,
            r#"{"choose_statement": true, "reasoning": "ok"} {}"#,
            r#"{"choose_statement": true, "reasoning": "ok""#,
            r#"{"choose_statement": true, "reasoning": "ok", "x": [1,}"#,
            "```json\n{\"choose_statement\": true, \"reasoning\": \"ok\"}\n```",
        ] {
            assert!(
                matches!(parse_decision(raw), Err(MalformedOutput::NotJson(_))),
                "{raw:?}"
            );
        }
    }

    proptest! {
        #[test]
        fn round_trip(choice: bool, reasoning in "\\PC{1,60}") {
            prop_assume!(!reasoning.trim().is_empty());
            let d = AgentDecision::new(choice, reasoning).unwrap();
            prop_assert_eq!(parse_decision(&d.to_json()).unwrap(), d);
        }

        #[test]
        fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..128)) {
            let text = String::from_utf8_lossy(&bytes);
            if let Ok(d) = parse_decision(&text) {
                let value: serde_json::Value = serde_json::from_str(&text).unwrap();
                prop_assert_eq!(value.as_object().map(|o| o.len()), Some(2));
                prop_assert_eq!(value["choose_statement"].as_bool(), Some(d.choose_statement()));
            }
        }
    }
}
