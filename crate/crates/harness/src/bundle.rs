//! The Bookinfo stand-in bundle and helpers to derive variants of it.

use qonnect_core::{Domain, QosVector};

use crate::HarnessError;

pub const BOOKINFO: &str = include_str!("../assets/bookinfo.yaml");

pub const BOOKINFO_NAME: &str = "bookinfo";

/// Components of [`BOOKINFO`] with their target domains.
pub const BOOKINFO_COMPONENTS: [(&str, Domain); 4] = [
    ("productpage", Domain::Cloud),
    ("details", Domain::Fog),
    ("reviews", Domain::Fog),
    ("ratings", Domain::Edge),
];

/// The Bookinfo bundle renamed to `name` (ingress paths follow) with the
/// given QoS weights.
pub fn bookinfo(name: &str, qos: QosVector) -> Result<String, HarnessError> {
    let text = BOOKINFO.replace(&format!("/{BOOKINFO_NAME}/"), &format!("/{name}/"));
    let mut out = String::new();
    for (i, doc) in serde_yaml::Deserializer::from_str(&text).enumerate() {
        let mut value = serde::Deserialize::deserialize(doc).map_err(|e: serde_yaml::Error| HarnessError::Bundle(e.to_string()))?;
        if i == 0 {
            set_application(&mut value, name, qos)?;
        }
        if i > 0 {
            out.push_str("---\n");
        }
        out.push_str(&serde_yaml::to_string(&value).map_err(|e| HarnessError::Bundle(e.to_string()))?);
    }
    Ok(out)
}

fn set_application(doc: &mut serde_yaml::Value, name: &str, qos: QosVector) -> Result<(), HarnessError> {
    let app = doc
        .get_mut("application")
        .and_then(serde_yaml::Value::as_mapping_mut)
        .ok_or_else(|| HarnessError::Bundle("first document has no application block".into()))?;
    app.insert("name".into(), name.into());
    let mut weights = serde_yaml::Mapping::new();
    weights.insert("energy".into(), qos.energy.into());
    weights.insert("pricing".into(), qos.pricing.into());
    weights.insert("performance".into(), qos.performance.into());
    app.insert("qos".into(), weights.into());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use qonnect_core::manifest::parse_bundle;

    #[test]
    fn asset_parses_with_four_components() {
        let spec = parse_bundle(BOOKINFO).unwrap();
        assert_eq!(spec.name, "bookinfo");
        assert_eq!(spec.qos, QosVector::new(0.0, 0.0, 1.0));
        let got: Vec<(&str, Domain)> = spec.components.iter().map(|c| (c.name.as_str(), c.domain)).collect();
        assert_eq!(got, BOOKINFO_COMPONENTS);
    }

    #[test]
    fn renamed_variant_validates() {
        let text = bookinfo("shop", QosVector::new(1.0, 0.0, 0.0)).unwrap();
        let spec = parse_bundle(&text).unwrap();
        assert_eq!(spec.name, "shop");
        assert_eq!(spec.qos, QosVector::new(1.0, 0.0, 0.0));
        assert!(!text.contains("/bookinfo/"));
        assert!(text.contains("{{QONNECT_EDGE_IP}}"));
    }
}
