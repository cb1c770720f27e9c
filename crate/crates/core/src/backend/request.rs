//! Chat-completion request body with the strict two-field response contract.

use serde::{Deserialize, Serialize};

use super::BackendError;

pub const DEFAULT_MODEL_ID: &str = "gpt-4o-2024-08-06";
pub const SCHEMA_NAME: &str = "identifier";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Property {
    #[serde(rename = "type")]
    kind: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Properties {
    choose_statement: Property,
    reasoning: Property,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct ObjectSchema {
    #[serde(rename = "type")]
    kind: String,
    properties: Properties,
    required: Vec<String>,
    additional_properties: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct JsonSchemaSpec {
    name: String,
    strict: bool,
    schema: ObjectSchema,
}

/// `response_format` payload. Only the decision contract can be built:
/// an object with exactly `choose_statement` (boolean) and `reasoning`
/// (string), both required, nothing else allowed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseContract {
    #[serde(rename = "type")]
    kind: String,
    json_schema: JsonSchemaSpec,
}

impl ResponseContract {
    pub fn decision() -> Self {
        ResponseContract {
            kind: "json_schema".into(),
            json_schema: JsonSchemaSpec {
                name: SCHEMA_NAME.into(),
                strict: true,
                schema: ObjectSchema {
                    kind: "object".into(),
                    properties: Properties {
                        choose_statement: Property { kind: "boolean".into() },
                        reasoning: Property { kind: "string".into() },
                    },
                    required: vec!["choose_statement".into(), "reasoning".into()],
                    additional_properties: false,
                },
            },
        }
    }

    pub fn name(&self) -> &str {
        &self.json_schema.name
    }

    pub fn is_strict(&self) -> bool {
        self.json_schema.strict
    }

    pub fn required_fields(&self) -> &[String] {
        &self.json_schema.schema.required
    }
}

/// Wire body of a chat-completion call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionRequest {
    #[serde(rename = "model")]
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    #[serde(rename = "response_format")]
    pub response_contract: ResponseContract,
}

impl CompletionRequest {
    pub fn to_wire_json(&self) -> String {
        serde_json::to_string(self).expect("request serialization is infallible")
    }

    pub fn prompt(&self) -> &str {
        self.messages.first().map(|m| m.content.as_str()).unwrap_or("")
    }
}

/// A single user message carrying `prompt`, plus the decision contract.
pub fn build_request(prompt: &str, model_id: &str) -> Result<CompletionRequest, BackendError> {
    if prompt.is_empty() {
        return Err(BackendError::EmptyPrompt);
    }
    Ok(CompletionRequest {
        model_id: model_id.to_string(),
        messages: vec![ChatMessage {
            role: "user".into(),
            content: prompt.to_string(),
        }],
        response_contract: ResponseContract::decision(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::{json, Value};

    #[test]
    fn wire_body_matches_contract() {
        let req = build_request("Here is the prompt: x.", DEFAULT_MODEL_ID).unwrap();
        let body: Value = serde_json::from_str(&req.to_wire_json()).unwrap();
        assert_eq!(
            body,
            json!({
                "model": "gpt-4o-2024-08-06",
                "messages": [{"role": "user", "content": "Here is the prompt: x."}],
                "response_format": {
                    "type": "json_schema",
                    "json_schema": {
                        "name": "identifier",
                        "strict": true,
                        "schema": {
                            "type": "object",
                            "properties": {
                                "choose_statement": {"type": "boolean"},
                                "reasoning": {"type": "string"}
                            },
                            "required": ["choose_statement", "reasoning"],
                            "additionalProperties": false
                        }
                    }
                }
            })
        );
    }

    #[test]
    fn contract_names() {
        let req = build_request("p", "m").unwrap();
        assert_eq!(req.response_contract.name(), "identifier");
        assert!(req.response_contract.is_strict());
        assert_eq!(
            req.response_contract.required_fields(),
            ["choose_statement", "reasoning"]
        );
        assert_eq!(req.model_id, "m");
        assert_eq!(req.messages.len(), 1);
    }

    #[test]
    fn empty_prompt_rejected() {
        assert!(matches!(
            build_request("", DEFAULT_MODEL_ID),
            Err(BackendError::EmptyPrompt)
        ));
    }
}
