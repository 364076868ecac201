use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EmbeddingSet;
use crate::error::{Error, Result};

/// Identity-folder listing of a dataset: folder label -> ordered image ids.
///
/// Serialized as JSON with folders in lexicographic order, so equal
/// manifests always produce identical bytes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_id: String,
    pub identities: BTreeMap<String, Vec<String>>,
}

impl DatasetManifest {
    pub fn new(dataset_id: impl Into<String>, identities: BTreeMap<String, Vec<String>>) -> Result<Self> {
        let m = Self {
            dataset_id: dataset_id.into(),
            identities,
        };
        m.validate()?;
        Ok(m)
    }

    /// Checks that no folder is empty and every image sits in exactly one folder.
    pub fn validate(&self) -> Result<()> {
        let mut owner: HashMap<&str, &str> = HashMap::new();
        for (folder, images) in &self.identities {
            if folder.is_empty() {
                return Err(Error::Invalid("empty identity folder label".into()));
            }
            if images.is_empty() {
                return Err(Error::Invalid(format!("identity folder {folder} is empty")));
            }
            for image in images {
                if let Some(prev) = owner.insert(image, folder) {
                    return Err(Error::Invalid(format!(
                        "image {image} listed under both {prev} and {folder}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Groups a sidecar's records by identity label, keeping record order.
    pub fn from_embeddings(set: &EmbeddingSet) -> Self {
        let mut identities: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (id, label) in set.image_ids().iter().zip(set.labels()) {
            identities.entry(label.clone()).or_default().push(id.clone());
        }
        Self {
            dataset_id: set.dataset_id().to_string(),
            identities,
        }
    }

    pub fn folder_count(&self) -> usize {
        self.identities.len()
    }

    pub fn image_count(&self) -> usize {
        self.identities.values().map(Vec::len).sum()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)
            .map_err(|e| Error::parse(path, e.line(), e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}

/// Differences between a manifest and an embedding set.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Coverage {
    /// Manifest images without an embedding, in manifest order.
    pub missing_embeddings: Vec<String>,
    /// Embedded images absent from the manifest, in record order.
    pub missing_from_manifest: Vec<String>,
    /// `(image_id, manifest folder, sidecar label)` where the two disagree.
    pub label_mismatches: Vec<(String, String, String)>,
}

impl Coverage {
    pub fn is_complete(&self) -> bool {
        self.missing_embeddings.is_empty()
            && self.missing_from_manifest.is_empty()
            && self.label_mismatches.is_empty()
    }
}

pub fn validate_manifest(manifest: &DatasetManifest, set: &EmbeddingSet) -> Coverage {
    let mut cov = Coverage::default();
    let mut listed = HashSet::new();
    for (folder, images) in &manifest.identities {
        for image in images {
            listed.insert(image.as_str());
            match set.label_of(image) {
                None => cov.missing_embeddings.push(image.clone()),
                Some(label) if label != folder => {
                    cov.label_mismatches
                        .push((image.clone(), folder.clone(), label.to_string()))
                }
                Some(_) => {}
            }
        }
    }
    cov.missing_from_manifest = set
        .image_ids()
        .iter()
        .filter(|id| !listed.contains(id.as_str()))
        .cloned()
        .collect();
    cov
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set() -> EmbeddingSet {
        EmbeddingSet::new(
            "toy",
            1,
            vec!["a".into(), "b".into(), "c".into()],
            vec!["f1".into(), "f1".into(), "f2".into()],
            vec![1.0; 3],
        )
        .unwrap()
    }

    #[test]
    fn same_ids_cover_fully() {
        let m = DatasetManifest::from_embeddings(&set());
        assert!(validate_manifest(&m, &set()).is_complete());
    }

    #[test]
    fn extra_manifest_image() {
        let mut m = DatasetManifest::from_embeddings(&set());
        m.identities.get_mut("f2").unwrap().push("d".into());
        let cov = validate_manifest(&m, &set());
        assert_eq!(cov.missing_embeddings, vec!["d".to_string()]);
        assert!(cov.missing_from_manifest.is_empty());
    }

    #[test]
    fn rejects_empty_folder_and_shared_image() {
        let mut ids = BTreeMap::new();
        ids.insert("f".to_string(), vec![]);
        assert!(DatasetManifest::new("d", ids).is_err());

        let mut ids = BTreeMap::new();
        ids.insert("f".to_string(), vec!["a".to_string()]);
        ids.insert("g".to_string(), vec!["a".to_string()]);
        assert!(DatasetManifest::new("d", ids).is_err());
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let m = DatasetManifest::from_embeddings(&set());
        m.save(&p).unwrap();
        assert_eq!(DatasetManifest::load(&p).unwrap(), m);
    }
}
