use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TAXONOMY_V1_JSON: &str = include_str!("../../assets/taxonomy.v1.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnatomyGroup {
    Background,
    Pelvic,
    Organ,
    Vertebra,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnatomyEntry {
    pub id: u16,
    pub name: String,
    pub group: AnatomyGroup,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnatomyTaxonomy {
    entries: Vec<AnatomyEntry>,
}

impl AnatomyTaxonomy {
    /// The bundled taxonomy.
    pub fn v1() -> Self {
        Self::from_json(TAXONOMY_V1_JSON).expect("bundled taxonomy is valid")
    }

    /// Parses and validates: 34 dense ids in order, with the fixed group layout.
    pub fn from_json(text: &str) -> Result<Self> {
        let entries: Vec<AnatomyEntry> = serde_json::from_str(text)?;
        if entries.len() != super::NUM_CLASSES {
            return Err(Error::Data(format!(
                "taxonomy has {} entries, expected {}",
                entries.len(),
                super::NUM_CLASSES
            )));
        }
        for (i, e) in entries.iter().enumerate() {
            if e.id as usize != i {
                return Err(Error::Data(format!("taxonomy entry {i} has id {}", e.id)));
            }
            let expected = match e.id {
                0 => AnatomyGroup::Background,
                1..=3 => AnatomyGroup::Pelvic,
                4..=8 => AnatomyGroup::Organ,
                _ => AnatomyGroup::Vertebra,
            };
            if e.group != expected {
                return Err(Error::Data(format!(
                    "class {} ({}) is in group {:?}, expected {expected:?}",
                    e.id, e.name, e.group
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[AnatomyEntry] {
        &self.entries
    }

    pub fn get(&self, id: u16) -> Option<&AnatomyEntry> {
        self.entries.get(id as usize)
    }

    pub fn by_name(&self, name: &str) -> Option<&AnatomyEntry> {
        self.entries
            .iter()
            .find(|e| e.name.eq_ignore_ascii_case(name))
    }

    pub fn group_ids(&self, group: AnatomyGroup) -> Vec<u16> {
        self.entries
            .iter()
            .filter(|e| e.group == group)
            .map(|e| e.id)
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.entries).expect("taxonomy serialises")
    }
}
