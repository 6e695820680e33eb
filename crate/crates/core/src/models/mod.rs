//! Classifiers and the on-disk model bundle.

pub mod gmm;
pub mod serialize;
pub mod tree;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use gmm::{map_adapt, train_em, EmConfig, GmmModel, TrainedGmm};
pub use tree::{DecisionTreeModel, SpeechClass, TreeConfig, TreeNode};

pub const KIB: u64 = 1024;
/// Compiled-code cost of one emotion-sized GMM on the co-processor.
pub const EMOTION_MODEL_CODE_BYTES: u64 = 260 * KIB;
pub const AMBIENT_MODEL_CODE_BYTES: u64 = 87 * KIB;
pub const DSP_CODE_BUDGET_BYTES: u64 = 2048 * KIB;
/// Share of the code budget taken by the system code itself.
pub const SYSTEM_CODE_BYTES: u64 = 600 * KIB;
pub const DEFAULT_MAP_RELEVANCE: f64 = 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gender {
    Male,
    Female,
    Uncertain,
}

impl Gender {
    pub fn name(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
            Gender::Uncertain => "uncertain",
        }
    }

    /// Equal genders, or either side uncertain.
    pub fn compatible(self, other: Gender) -> bool {
        self == other || self == Gender::Uncertain || other == Gender::Uncertain
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Gmm(GmmModel),
    Tree(DecisionTreeModel),
}

impl Model {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        serialize::to_bytes(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        serialize::from_bytes(bytes)
    }

    pub fn size_bytes(&self) -> Result<usize> {
        Ok(self.to_bytes()?.len())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn as_gmm(&self) -> Option<&GmmModel> {
        match self {
            Model::Gmm(g) => Some(g),
            Model::Tree(_) => None,
        }
    }

    pub fn as_tree(&self) -> Option<&DecisionTreeModel> {
        match self {
            Model::Tree(t) => Some(t),
            Model::Gmm(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Dsp,
    Cpu,
}

/// What a model is used for; fixes its code cost on the co-processor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    SpeechFilter,
    Ambient,
    Neutral,
    Emotion,
    Speaker,
    SpeakerBackground,
}

impl ModelRole {
    pub fn name(self) -> &'static str {
        match self {
            ModelRole::SpeechFilter => "speech_filter",
            ModelRole::Ambient => "ambient",
            ModelRole::Neutral => "neutral",
            ModelRole::Emotion => "emotion",
            ModelRole::Speaker => "speaker",
            ModelRole::SpeakerBackground => "speaker_background",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BundleEntry {
    pub role: ModelRole,
    pub placement: Placement,
    pub model: Model,
}

impl BundleEntry {
    /// Co-processor code cost: fixed per-model constants for GMMs, serialized size for trees.
    pub fn code_bytes(&self) -> Result<u64> {
        Ok(match self.role {
            ModelRole::Ambient => AMBIENT_MODEL_CODE_BYTES,
            ModelRole::SpeechFilter => self.model.size_bytes()? as u64,
            _ => EMOTION_MODEL_CODE_BYTES,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    role: ModelRole,
    placement: Placement,
    file: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    entries: BTreeMap<String, BundleEntry>,
    pub code_budget_bytes: u64,
    pub system_code_bytes: u64,
}

impl Default for ModelBundle {
    fn default() -> Self {
        Self {
            entries: BTreeMap::new(),
            code_budget_bytes: DSP_CODE_BUDGET_BYTES,
            system_code_bytes: SYSTEM_CODE_BYTES,
        }
    }
}

pub const MANIFEST_FILE: &str = "bundle.json";

impl ModelBundle {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a model, rejecting it if co-processor code would exceed the budget.
    pub fn insert(
        &mut self,
        name: impl Into<String>,
        role: ModelRole,
        placement: Placement,
        model: Model,
    ) -> Result<()> {
        let name = name.into();
        let entry = BundleEntry {
            role,
            placement,
            model,
        };
        let previous = self.entries.insert(name.clone(), entry);
        if let Err(e) = self.check_budget() {
            match previous {
                Some(p) => self.entries.insert(name, p),
                None => self.entries.remove(&name),
            };
            return Err(e);
        }
        Ok(())
    }

    pub fn dsp_code_bytes(&self) -> Result<u64> {
        let mut total = self.system_code_bytes;
        for e in self.entries.values().filter(|e| e.placement == Placement::Dsp) {
            total += e.code_bytes()?;
        }
        Ok(total)
    }

    pub fn check_budget(&self) -> Result<()> {
        let used = self.dsp_code_bytes()?;
        if used > self.code_budget_bytes {
            return Err(Error::CodeBudgetExceeded {
                used,
                budget: self.code_budget_bytes,
            });
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&BundleEntry> {
        self.entries.get(name)
    }

    pub fn gmm(&self, name: &str) -> Result<&GmmModel> {
        self.entries
            .get(name)
            .and_then(|e| e.model.as_gmm())
            .ok_or_else(|| Error::MissingModel(name.to_string()))
    }

    pub fn tree(&self, name: &str) -> Result<&DecisionTreeModel> {
        self.entries
            .get(name)
            .and_then(|e| e.model.as_tree())
            .ok_or_else(|| Error::MissingModel(name.to_string()))
    }

    /// GMMs with the given role, in name order.
    pub fn gmms_with_role(&self, role: ModelRole) -> Vec<(&str, &GmmModel)> {
        self.entries
            .iter()
            .filter(|(_, e)| e.role == role)
            .filter_map(|(n, e)| e.model.as_gmm().map(|g| (n.as_str(), g)))
            .collect()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &BundleEntry)> {
        self.entries.iter().map(|(n, e)| (n.as_str(), e))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Writes one `.dspm` file per model plus a JSON manifest.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut manifest = Vec::new();
        for (name, e) in &self.entries {
            let file = format!("{}.dspm", name.replace('/', "__"));
            e.model.save(dir.join(&file))?;
            manifest.push(ManifestEntry {
                name: name.clone(),
                role: e.role,
                placement: e.placement,
                file,
            });
        }
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest)?;
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Vec<ManifestEntry> = serde_json::from_str(&text)?;
        let mut bundle = Self::new();
        for m in manifest {
            let model = Model::load(dir.join(&m.file))?;
            bundle.insert(m.name, m.role, m.placement, model)?;
        }
        Ok(bundle)
    }
}
