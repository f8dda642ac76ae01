//! Knowledge integration and speculation indices from category overlap
//! between a project and its members' prior work.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemberHistory {
    pub creator_id: String,
    pub prior_categories: BTreeSet<String>,
}

/// One project: its knowledge modules and each member's previously
/// touched modules. Also the line-delimited input record of the
/// `taxonomy` stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectTaxonomy {
    pub doc_id: String,
    pub categories: BTreeSet<String>,
    pub members: Vec<MemberHistory>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationReport {
    pub integration: f64,
    pub speculation: f64,
}

/// Exact counts behind the two indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndicatorCounts {
    /// `(category, member)` pairs where the member touched the category.
    pub hits: usize,
    /// Categories no member touched.
    pub fresh: usize,
    pub n_categories: usize,
    pub n_members: usize,
}

impl ProjectTaxonomy {
    pub fn indicator_counts(&self) -> Result<IndicatorCounts> {
        if self.categories.is_empty() {
            return Err(Error::EmptyCategories);
        }
        if self.members.is_empty() {
            return Err(Error::TeamTooSmall { needed: 1, got: 0 });
        }
        let mut hits = 0;
        let mut fresh = 0;
        for c in &self.categories {
            let touched = self.members.iter().filter(|m| m.prior_categories.contains(c)).count();
            hits += touched;
            if touched == 0 {
                fresh += 1;
            }
        }
        Ok(IndicatorCounts {
            hits,
            fresh,
            n_categories: self.categories.len(),
            n_members: self.members.len(),
        })
    }
}

/// Share of `(category, member)` pairs where the member had previously
/// worked in the category.
pub fn integration(project: &ProjectTaxonomy) -> Result<f64> {
    let c = project.indicator_counts()?;
    Ok(c.hits as f64 / (c.n_categories * c.n_members) as f64)
}

/// Share of the project's categories that no member had worked in.
pub fn speculation(project: &ProjectTaxonomy) -> Result<f64> {
    let c = project.indicator_counts()?;
    Ok(c.fresh as f64 / c.n_categories as f64)
}

pub fn integration_report(project: &ProjectTaxonomy) -> Result<IntegrationReport> {
    Ok(IntegrationReport {
        integration: integration(project)?,
        speculation: speculation(project)?,
    })
}
