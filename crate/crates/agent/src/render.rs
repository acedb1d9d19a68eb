//! Turning a scheduled payload into the objects actually applied.

use std::collections::BTreeMap;

use qonnect_core::Domain;
use serde_json::{json, Map, Value};
use uuid::Uuid;

pub const PLACEHOLDER_PREFIX: &str = "{{QONNECT_";
pub const APP_ID_LABEL: &str = "qonnect.io/app-id";
pub const COMPONENT_LABEL: &str = "qonnect.io/component";
pub const MANAGED_LABEL: &str = "qonnect.io/managed";
const WORKLOAD_KINDS: [&str; 2] = ["Deployment", "StatefulSet"];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RenderError {
    #[error("no address known for placeholder {0}")]
    Unresolved(String),
    #[error("object without kind or metadata.name")]
    Malformed,
}

/// Substitutes every `{{QONNECT_<DOMAIN>_IP}}` token in string values.
/// Unknown tokens and domains without an address are errors.
pub fn replace_placeholders(value: &Value, addresses: &BTreeMap<Domain, String>) -> Result<Value, RenderError> {
    Ok(match value {
        Value::String(s) => Value::String(substitute(s, addresses)?),
        Value::Array(items) => Value::Array(items.iter().map(|v| replace_placeholders(v, addresses)).collect::<Result<_, _>>()?),
        Value::Object(map) => {
            let mut out = Map::new();
            for (k, v) in map {
                out.insert(k.clone(), replace_placeholders(v, addresses)?);
            }
            Value::Object(out)
        }
        other => other.clone(),
    })
}

fn substitute(s: &str, addresses: &BTreeMap<Domain, String>) -> Result<String, RenderError> {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(start) = rest.find(PLACEHOLDER_PREFIX) {
        out.push_str(&rest[..start]);
        let tail = &rest[start..];
        let Some(end) = tail.find("}}") else {
            return Err(RenderError::Unresolved(tail.to_string()));
        };
        let token = &tail[..end + 2];
        let domain = Domain::ALL.into_iter().find(|d| d.placeholder() == token);
        match domain.and_then(|d| addresses.get(&d)) {
            Some(ip) => out.push_str(ip),
            None => return Err(RenderError::Unresolved(token.to_string())),
        }
        rest = &tail[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

pub fn contains_placeholder(value: &Value) -> bool {
    match value {
        Value::String(s) => s.contains(PLACEHOLDER_PREFIX),
        Value::Array(items) => items.iter().any(contains_placeholder),
        Value::Object(map) => map.values().any(contains_placeholder),
        _ => false,
    }
}

pub fn object_key(object: &Value) -> Result<String, RenderError> {
    let kind = object.get("kind").and_then(Value::as_str).ok_or(RenderError::Malformed)?;
    let name = object.pointer("/metadata/name").and_then(Value::as_str).ok_or(RenderError::Malformed)?;
    Ok(format!("{kind}/{name}"))
}

pub fn is_workload_key(key: &str) -> Option<&str> {
    let (kind, name) = key.split_once('/')?;
    WORKLOAD_KINDS.contains(&kind).then_some(name)
}

/// Adds application labels (the object's own keys win) and restricts
/// workloads to `nodes` through required node affinity.
pub fn decorate(
    object: &Value,
    app_labels: &BTreeMap<String, String>,
    app_id: Uuid,
    component: &str,
    nodes: &[String],
) -> Value {
    let mut object = object.clone();
    let Some(root) = object.as_object_mut() else { return object };
    let metadata = root.entry("metadata").or_insert_with(|| json!({}));
    if let Some(metadata) = metadata.as_object_mut() {
        let labels = metadata.entry("labels").or_insert_with(|| json!({}));
        if !labels.is_object() {
            *labels = json!({});
        }
        let labels = labels.as_object_mut().expect("object");
        for (k, v) in app_labels {
            labels.entry(k.clone()).or_insert_with(|| Value::String(v.clone()));
        }
        labels.insert(APP_ID_LABEL.into(), Value::String(app_id.to_string()));
        labels.insert(COMPONENT_LABEL.into(), Value::String(component.to_string()));
    }
    let is_workload = root.get("kind").and_then(Value::as_str).is_some_and(|k| WORKLOAD_KINDS.contains(&k));
    if is_workload {
        let affinity = json!({
            "nodeAffinity": {
                "requiredDuringSchedulingIgnoredDuringExecution": {
                    "nodeSelectorTerms": [{
                        "matchExpressions": [{
                            "key": "kubernetes.io/hostname",
                            "operator": "In",
                            "values": nodes,
                        }]
                    }]
                }
            }
        });
        let spec = root.entry("spec").or_insert_with(|| json!({}));
        if let Some(spec) = spec.as_object_mut() {
            let template = spec.entry("template").or_insert_with(|| json!({}));
            if let Some(template) = template.as_object_mut() {
                let pod_spec = template.entry("spec").or_insert_with(|| json!({}));
                if let Some(pod_spec) = pod_spec.as_object_mut() {
                    pod_spec.insert("affinity".into(), affinity);
                }
            }
        }
    }
    object
}
