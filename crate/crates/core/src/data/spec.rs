use serde::{Deserialize, Serialize};

use crate::error::{HydraError, Result};

pub const BACKGROUND: &str = "background";

/// What to render: sizes, class names and the seed every record stream
/// is derived from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub classes: Vec<String>,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            n_train: 18000,
            n_test: 6000,
            classes: ["tumour", "lymphocyte", "background"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 {
            return Err(HydraError::Config("n_train must be positive".into()));
        }
        if self.n_test == 0 {
            return Err(HydraError::Config("n_test must be positive".into()));
        }
        validate_classes(&self.classes).map_err(HydraError::Config)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }
}

/// Shared by the spec and the manifest loader, which wrap the message in
/// their own error kind.
pub(crate) fn validate_classes(classes: &[String]) -> std::result::Result<(), String> {
    if classes.len() < 2 {
        return Err(format!(
            "classes needs at least 2 names, got {}",
            classes.len()
        ));
    }
    for (i, name) in classes.iter().enumerate() {
        if name.trim().is_empty() {
            return Err(format!("classes[{i}] is blank"));
        }
        if classes[..i].contains(name) {
            return Err(format!("classes[{i}] duplicates `{name}`"));
        }
    }
    Ok(())
}

/// Index of the class whose patches carry no nucleus, if there is one.
pub fn background_class(classes: &[String]) -> Option<usize> {
    classes.iter().position(|c| c == BACKGROUND)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let s = DatasetSpec::default();
        assert_eq!((s.n_train, s.n_test), (18000, 6000));
        assert_eq!(background_class(&s.classes), Some(2));
        s.validate().unwrap();
    }

    #[test]
    fn empty_class_list_names_the_field() {
        let s = DatasetSpec {
            classes: vec![],
            ..Default::default()
        };
        let msg = s.validate().unwrap_err().to_string();
        assert!(msg.contains("classes"), "{msg}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<DatasetSpec>(r#"{"n_train": 5, "colour": 1}"#);
        assert!(err.is_err());
        let ok: DatasetSpec = serde_json::from_str(r#"{"n_train": 5}"#).unwrap();
        assert_eq!(ok.n_test, 6000);
    }

    #[test]
    fn duplicates_rejected() {
        let s = DatasetSpec {
            classes: vec!["a".into(), "a".into()],
            ..Default::default()
        };
        assert!(s.validate().is_err());
    }
}
