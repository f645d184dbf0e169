//! Translation-direction policies for the online expansion stage.
//!
//! Each policy maps a query language to the set of admissible intermediate
//! languages. Policies are registered behind a common trait and looked up by
//! name so studies can iterate over all of them uniformly.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{LangId, LanguageSet};

pub trait DirectionPolicy: Send + Sync {
    fn name(&self) -> &'static str;
    /// Admissible intermediate languages for a query in `from`; never
    /// contains `from` itself. Empty means the example passes through
    /// unexpanded.
    fn candidates(&self, set: &LanguageSet, from: LangId) -> Vec<LangId>;
}

struct AllToEn;
struct LowToEnHighToHigh;
struct AllToAll;
struct AllToHigh;

impl DirectionPolicy for AllToEn {
    fn name(&self) -> &'static str {
        "all-to-en"
    }

    fn candidates(&self, set: &LanguageSet, from: LangId) -> Vec<LangId> {
        if from == set.pivot_id {
            vec![]
        } else {
            vec![set.pivot_id]
        }
    }
}

impl DirectionPolicy for LowToEnHighToHigh {
    fn name(&self) -> &'static str {
        "low-to-en-high-to-high"
    }

    fn candidates(&self, set: &LanguageSet, from: LangId) -> Vec<LangId> {
        if set.is_high_resource(from) {
            set.ids()
                .filter(|id| set.is_high_resource(*id) && *id != from)
                .collect()
        } else {
            vec![set.pivot_id]
        }
    }
}

impl DirectionPolicy for AllToAll {
    fn name(&self) -> &'static str {
        "all-to-all"
    }

    fn candidates(&self, set: &LanguageSet, from: LangId) -> Vec<LangId> {
        set.ids().filter(|id| *id != from).collect()
    }
}

impl DirectionPolicy for AllToHigh {
    fn name(&self) -> &'static str {
        "all-to-high"
    }

    fn candidates(&self, set: &LanguageSet, from: LangId) -> Vec<LangId> {
        set.ids()
            .filter(|id| set.is_high_resource(*id) && *id != from)
            .collect()
    }
}

pub fn policy_names() -> [&'static str; 4] {
    ["all-to-en", "low-to-en-high-to-high", "all-to-all", "all-to-high"]
}

pub fn policy_by_name(name: &str) -> Option<Box<dyn DirectionPolicy>> {
    match name {
        "all-to-en" => Some(Box::new(AllToEn)),
        "low-to-en-high-to-high" => Some(Box::new(LowToEnHighToHigh)),
        "all-to-all" => Some(Box::new(AllToAll)),
        "all-to-high" => Some(Box::new(AllToHigh)),
        _ => None,
    }
}

/// Config-level tag for the four registered policies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionKind {
    AllToEn,
    LowToEnHighToHigh,
    AllToAll,
    AllToHigh,
}

impl Default for DirectionKind {
    fn default() -> Self {
        DirectionKind::AllToHigh
    }
}

impl DirectionKind {
    pub fn name(self) -> &'static str {
        match self {
            DirectionKind::AllToEn => "all-to-en",
            DirectionKind::LowToEnHighToHigh => "low-to-en-high-to-high",
            DirectionKind::AllToAll => "all-to-all",
            DirectionKind::AllToHigh => "all-to-high",
        }
    }

    pub fn policy(self) -> Box<dyn DirectionPolicy> {
        policy_by_name(self.name()).expect("registered policy")
    }

    pub fn all() -> [DirectionKind; 4] {
        [
            DirectionKind::AllToEn,
            DirectionKind::LowToEnHighToHigh,
            DirectionKind::AllToAll,
            DirectionKind::AllToHigh,
        ]
    }
}

impl FromStr for DirectionKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DirectionKind::all()
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown direction policy {s:?}"))
    }
}
