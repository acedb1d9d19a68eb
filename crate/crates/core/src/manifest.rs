//! Parsing and validation of application bundles.
//!
//! A bundle is a YAML document stream. The first document carries the
//! scheduler metadata:
//!
//! ```yaml
//! application:
//!   name: bookinfo
//!   labels: {team: web}
//!   qos: {energy: 0, pricing: 0, performance: 1}
//! ```
//!
//! and each following document describes one component:
//!
//! ```yaml
//! component: ratings
//! domain: edge
//! objects: [ ...Deployment, Service, Ingress... ]
//! ```
//!
//! Every component needs an Ingress, and every Ingress path must start with
//! `/<application name>`.

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;
use serde_json::Value;

use crate::api::FieldError;
use crate::model::{ApplicationSpec, ComponentSpec, Domain, QosVector};

pub fn parse_bundle(text: &str) -> Result<ApplicationSpec, Vec<FieldError>> {
    let mut documents = Vec::new();
    for (i, doc) in serde_yaml::Deserializer::from_str(text).enumerate() {
        let value = serde_yaml::Value::deserialize(doc)
            .map_err(|e| vec![FieldError::new(format!("documents[{i}]"), e.to_string())])?;
        if value.is_null() {
            continue;
        }
        let json = serde_json::to_value(&value)
            .map_err(|e| vec![FieldError::new(format!("documents[{i}]"), e.to_string())])?;
        documents.push(json);
    }
    validate_documents(&documents)
}

pub fn validate_documents(documents: &[Value]) -> Result<ApplicationSpec, Vec<FieldError>> {
    let mut errors = Vec::new();
    let (apps, components): (Vec<&Value>, Vec<&Value>) =
        documents.iter().partition(|d| d.get("application").is_some());
    if apps.len() != 1 {
        errors.push(FieldError::new("application", format!("expected one application document, found {}", apps.len())));
    }
    let app = apps.first().and_then(|d| d.get("application"));

    let name = app.and_then(|a| a.get("name")).and_then(Value::as_str).unwrap_or_default().to_string();
    if app.is_some() && !is_dns_label(&name) {
        errors.push(FieldError::new("application.name", "must be a lowercase DNS label"));
    }

    let mut labels = BTreeMap::new();
    match app.and_then(|a| a.get("labels")) {
        None | Some(Value::Null) => {}
        Some(Value::Object(map)) => {
            for (k, v) in map {
                match v {
                    Value::String(s) => {
                        labels.insert(k.clone(), s.clone());
                    }
                    _ => errors.push(FieldError::new(format!("application.labels.{k}"), "must be a string")),
                }
            }
        }
        Some(_) => errors.push(FieldError::new("application.labels", "must be a map")),
    }

    let mut qos = QosVector::new(0.0, 0.0, 0.0);
    if let Some(app) = app {
        match app.get("qos") {
            Some(Value::Object(q)) => {
                for (field, slot) in
                    [("energy", &mut qos.energy), ("pricing", &mut qos.pricing), ("performance", &mut qos.performance)]
                {
                    match q.get(field).map(Value::as_f64) {
                        None => {}
                        Some(Some(w)) if w.is_finite() && w >= 0.0 => *slot = w,
                        Some(_) => errors
                            .push(FieldError::new(format!("application.qos.{field}"), "must be a non-negative number")),
                    }
                }
            }
            None => errors.push(FieldError::new("application.qos", "required")),
            Some(_) => errors.push(FieldError::new("application.qos", "must be a map")),
        }
    }

    if components.is_empty() {
        errors.push(FieldError::new("components", "at least one component document is required"));
    }
    let mut seen = BTreeSet::new();
    let mut specs = Vec::new();
    for (i, doc) in components.iter().enumerate() {
        let at = |f: &str| format!("components[{i}].{f}");
        let cname = doc.get("component").and_then(Value::as_str).unwrap_or_default().to_string();
        if !is_dns_label(&cname) {
            errors.push(FieldError::new(at("component"), "must be a lowercase DNS label"));
        } else if !seen.insert(cname.clone()) {
            errors.push(FieldError::new(at("component"), format!("duplicate component `{cname}`")));
        }
        let domain = match doc.get("domain").and_then(Value::as_str) {
            Some(d) => match d.parse::<Domain>() {
                Ok(d) => Some(d),
                Err(e) => {
                    errors.push(FieldError::new(at("domain"), e.to_string()));
                    None
                }
            },
            None => {
                errors.push(FieldError::new(at("domain"), "required"));
                None
            }
        };
        let objects = match doc.get("objects") {
            Some(Value::Array(objects)) if !objects.is_empty() => objects.clone(),
            _ => {
                errors.push(FieldError::new(at("objects"), "must be a non-empty list"));
                Vec::new()
            }
        };
        check_objects(&objects, &name, &at("objects"), &mut errors);
        if let Some(domain) = domain {
            specs.push(ComponentSpec { name: cname, domain, objects });
        }
    }

    if errors.is_empty() {
        Ok(ApplicationSpec { name, labels, qos, components: specs })
    } else {
        Err(errors)
    }
}

fn check_objects(objects: &[Value], app_name: &str, field: &str, errors: &mut Vec<FieldError>) {
    let mut ingresses = 0;
    for (j, object) in objects.iter().enumerate() {
        let at = format!("{field}[{j}]");
        let kind = object.get("kind").and_then(Value::as_str);
        let name = object.pointer("/metadata/name").and_then(Value::as_str);
        if kind.is_none() {
            errors.push(FieldError::new(format!("{at}.kind"), "required"));
        }
        if name.is_none_or(|n| n.is_empty()) {
            errors.push(FieldError::new(format!("{at}.metadata.name"), "required"));
        }
        if kind != Some("Ingress") {
            continue;
        }
        ingresses += 1;
        let mut paths = 0;
        let rules = object.pointer("/spec/rules").and_then(Value::as_array).cloned().unwrap_or_default();
        for (k, rule) in rules.iter().enumerate() {
            let list = rule.pointer("/http/paths").and_then(Value::as_array).cloned().unwrap_or_default();
            for (l, p) in list.iter().enumerate() {
                paths += 1;
                let path = p.get("path").and_then(Value::as_str).unwrap_or_default();
                if first_segment(path) != Some(app_name) {
                    errors.push(FieldError::new(
                        format!("{at}.spec.rules[{k}].http.paths[{l}].path"),
                        format!("first path segment must be `{app_name}`, got `{path}`"),
                    ));
                }
            }
        }
        if paths == 0 {
            errors.push(FieldError::new(format!("{at}.spec.rules"), "Ingress declares no paths"));
        }
    }
    if !objects.is_empty() && ingresses == 0 {
        errors.push(FieldError::new(field, "an Ingress object is required"));
    }
}

fn first_segment(path: &str) -> Option<&str> {
    path.strip_prefix('/')?.split('/').next().filter(|s| !s.is_empty())
}

fn is_dns_label(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 63
        && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
        && !s.starts_with('-')
        && !s.ends_with('-')
}
