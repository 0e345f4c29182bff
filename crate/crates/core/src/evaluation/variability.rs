//! Agreement between raters (users and the model) on per-image counts.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::mape::mape_of;
use super::EvalError;
use crate::model::{ClassLabel, ImageId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaterKind {
    User,
    Model,
}

/// Per-image counts of one rater, indexed by `ClassLabel::index`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rater {
    pub name: String,
    pub kind: RaterKind,
    pub counts: BTreeMap<ImageId, [u64; 2]>,
}

/// MAPE on total, BVG+ and BVG- counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CountErrors {
    pub total: Option<f64>,
    pub bvg_plus: Option<f64>,
    pub bvg_minus: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairVariability {
    pub reference: String,
    pub other: String,
    pub errors: CountErrors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariabilityReport {
    pub pairs: Vec<PairVariability>,
    /// Mean over user/user pairs.
    pub user_to_user: CountErrors,
    /// Mean over user/model pairs.
    pub users_to_model: CountErrors,
}

fn pair_errors(reference: &Rater, other: &Rater) -> CountErrors {
    let series = |filter: Option<ClassLabel>| {
        let pick = |c: &[u64; 2]| match filter {
            Some(l) => c[l.index()],
            None => c[0] + c[1],
        };
        mape_of(
            reference.counts.iter().map(|(id, r)| (*id, pick(r), pick(&other.counts[id]))),
            false,
        )
        .value
    };
    CountErrors {
        total: series(None),
        bvg_plus: series(Some(ClassLabel::BvgPlus)),
        bvg_minus: series(Some(ClassLabel::BvgMinus)),
    }
}

fn mean_errors<'a>(rows: impl Iterator<Item = &'a CountErrors>) -> CountErrors {
    let rows: Vec<&CountErrors> = rows.collect();
    let mean = |f: fn(&CountErrors) -> Option<f64>| {
        let v: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    CountErrors {
        total: mean(|r| r.total),
        bvg_plus: mean(|r| r.bvg_plus),
        bvg_minus: mean(|r| r.bvg_minus),
    }
}

/// Pairwise MAPE for every unordered pair of raters. The rater listed first
/// is the reference (denominator) of each pair.
pub fn variability_report(raters: &[Rater]) -> Result<VariabilityReport, EvalError> {
    if raters.len() < 2 {
        return Err(EvalError::TooFewRaters(raters.len()));
    }
    let first = &raters[0];
    for r in &raters[1..] {
        if !r.counts.keys().eq(first.counts.keys()) {
            return Err(EvalError::MismatchedImages {
                reference: first.name.clone(),
                other: r.name.clone(),
            });
        }
    }
    let mut pairs = Vec::new();
    let mut uu = Vec::new();
    let mut um = Vec::new();
    for i in 0..raters.len() {
        for j in i + 1..raters.len() {
            let errors = pair_errors(&raters[i], &raters[j]);
            match (raters[i].kind, raters[j].kind) {
                (RaterKind::User, RaterKind::User) => uu.push(errors),
                (RaterKind::Model, RaterKind::Model) => {}
                _ => um.push(errors),
            }
            pairs.push(PairVariability {
                reference: raters[i].name.clone(),
                other: raters[j].name.clone(),
                errors,
            });
        }
    }
    Ok(VariabilityReport {
        pairs,
        user_to_user: mean_errors(uu.iter()),
        users_to_model: mean_errors(um.iter()),
    })
}

impl VariabilityReport {
    /// Two-column text table: user-to-user and users-to-model.
    pub fn render_text(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.0}"));
        let mut out = String::new();
        out.push_str(&format!("{:<20}{:>28}{:>30}\n", "", "User to User variability", "Users to Model variability"));
        type Pick = fn(&CountErrors) -> Option<f64>;
        let rows: [(&str, Pick); 3] = [
            ("MAPE Total count", |e| e.total),
            ("MAPE BVG+ count", |e| e.bvg_plus),
            ("MAPE BVG- count", |e| e.bvg_minus),
        ];
        for (name, f) in rows {
            out.push_str(&format!(
                "{:<20}{:>28}{:>30}\n",
                name,
                cell(f(&self.user_to_user)),
                cell(f(&self.users_to_model))
            ));
        }
        out
    }
}
