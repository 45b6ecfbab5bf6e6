//! Rule mining under a minimum left-support constraint.
//!
//! Antecedents are grown depth-first over a vertical (item → basket ordinals)
//! index. An antecedent whose left support falls below the constraint is
//! never extended, which is exact because support can only shrink as items
//! are added. Confidence is checked only when a rule is emitted.

mod io;
pub mod measures;

use std::borrow::Cow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use self::io::{fmt_real, read_rules, read_rules_csv, write_rules_csv, write_rules_json};
pub use self::measures::{
    build_contingency, chi_squared, rule_measures, ChiSquared, ContingencyTable, RuleMeasures,
};
use crate::{
    basket::{intersect_into, BasketDatabase, ItemId, ItemSet},
    codes::Item,
    error::{Error, Result},
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiningConstraints {
    pub min_left_support: f64,
    pub min_confidence: f64,
    pub max_antecedent: usize,
}

impl Default for MiningConstraints {
    fn default() -> Self {
        MiningConstraints {
            min_left_support: 0.001,
            min_confidence: 0.01,
            max_antecedent: 3,
        }
    }
}

impl MiningConstraints {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v <= 1.0;
        if !unit(self.min_left_support) {
            return Err(Error::config(format!(
                "min_left_support must be in (0, 1], got {}",
                self.min_left_support
            )));
        }
        if !unit(self.min_confidence) {
            return Err(Error::config(format!(
                "min_confidence must be in (0, 1], got {}",
                self.min_confidence
            )));
        }
        if self.max_antecedent == 0 {
            return Err(Error::config("max_antecedent must be at least 1"));
        }
        Ok(())
    }

    /// Whether `count` baskets out of `m` meet the left-support constraint.
    pub fn frequent(&self, count: usize, m: usize) -> bool {
        count as f64 / m as f64 >= self.min_left_support
    }

    pub fn confident(&self, confidence: f64) -> bool {
        confidence >= self.min_confidence
    }
}

/// `antecedent => consequent` with its measures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssociationRule {
    pub antecedent: ItemSet,
    pub consequent: Item,
    pub left_support: f64,
    pub support: f64,
    pub confidence: f64,
    pub lift: f64,
    pub chi_squared: f64,
}

impl AssociationRule {
    fn from_counts(
        antecedent: ItemSet,
        consequent: Item,
        count_xy: usize,
        count_x: usize,
        count_y: usize,
        m: usize,
    ) -> Result<Self> {
        let r = rule_measures(count_xy as u64, count_x as u64, count_y as u64, m as u64)?;
        Ok(AssociationRule {
            antecedent,
            consequent,
            left_support: r.left_support,
            support: r.support,
            confidence: r.confidence,
            lift: r.lift,
            chi_squared: r.chi_squared,
        })
    }

    /// Ordering used for serialization: consequent, then antecedent.
    pub fn sort_key(&self) -> (&Item, &ItemSet) {
        (&self.consequent, &self.antecedent)
    }
}

pub fn sort_rules(rules: &mut [AssociationRule]) {
    rules.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

/// Fraction of baskets containing `itemset`.
pub fn supp(itemset: &ItemSet, db: &BasketDatabase) -> f64 {
    db.supp(itemset)
}

/// An equivalence class member: the last item added and the ordinals of the
/// baskets containing the whole antecedent.
type Member<'a> = (ItemId, Cow<'a, [u32]>);

/// Walks every antecedent meeting the left-support constraint, calling
/// `visit(antecedent_ids, ordinals)` on each.
fn walk_antecedents<'a, T, F>(
    db: &'a BasketDatabase,
    constraints: &MiningConstraints,
    excluded: Option<ItemId>,
    visit: F,
) -> Vec<T>
where
    T: Send,
    F: Fn(&[ItemId], &[u32], &mut Vec<T>) + Sync,
{
    let m = db.len();
    let roots: Vec<Member<'a>> = (0..db.item_count() as ItemId)
        .filter(|&id| Some(id) != excluded)
        .filter(|&id| constraints.frequent(db.tids(id).len(), m))
        .map(|id| (id, Cow::Borrowed(db.tids(id))))
        .collect();

    (0..roots.len())
        .into_par_iter()
        .flat_map_iter(|k| {
            let mut out = Vec::new();
            let mut prefix = Vec::with_capacity(constraints.max_antecedent);
            expand(&roots, k, &mut prefix, constraints, m, &visit, &mut out);
            out
        })
        .collect()
}

fn expand<T, F>(
    class: &[Member<'_>],
    k: usize,
    prefix: &mut Vec<ItemId>,
    constraints: &MiningConstraints,
    m: usize,
    visit: &F,
    out: &mut Vec<T>,
) where
    F: Fn(&[ItemId], &[u32], &mut Vec<T>),
{
    let (item, tids) = &class[k];
    prefix.push(*item);
    visit(prefix, tids, out);
    if prefix.len() < constraints.max_antecedent {
        let mut children: Vec<Member<'_>> = Vec::new();
        let mut scratch = Vec::new();
        for (other, other_tids) in &class[k + 1..] {
            intersect_into(tids, other_tids, &mut scratch);
            if constraints.frequent(scratch.len(), m) {
                children.push((*other, Cow::Owned(std::mem::take(&mut scratch))));
            }
        }
        for j in 0..children.len() {
            expand(&children, j, prefix, constraints, m, visit, out);
        }
    }
    prefix.pop();
}

fn to_itemset(db: &BasketDatabase, ids: &[ItemId]) -> ItemSet {
    ids.iter().map(|&id| db.item(id).clone()).collect()
}

/// Every rule `X => consequent` with `1 <= |X| <= max_antecedent`, left
/// support and confidence at or above the constraints. Sorted by
/// antecedent.
pub fn mine_rules(
    db: &BasketDatabase,
    consequent: &Item,
    constraints: &MiningConstraints,
) -> Result<Vec<AssociationRule>> {
    constraints.validate()?;
    if db.is_empty() {
        return Err(Error::domain("cannot mine an empty basket database"));
    }
    let c = db.item_id(consequent).ok_or_else(|| {
        Error::domain(format!(
            "consequent {consequent} does not occur in any basket"
        ))
    })?;
    let m = db.len();
    let count_y = db.tids(c).len();
    let mut has_consequent = vec![false; m];
    for &t in db.tids(c) {
        has_consequent[t as usize] = true;
    }

    let mut rules = walk_antecedents(db, constraints, Some(c), |ids, tids, out| {
        let count_xy = tids.iter().filter(|&&t| has_consequent[t as usize]).count();
        let confidence = count_xy as f64 / tids.len() as f64;
        if count_xy > 0 && constraints.confident(confidence) {
            out.push(
                AssociationRule::from_counts(
                    to_itemset(db, ids),
                    consequent.clone(),
                    count_xy,
                    tids.len(),
                    count_y,
                    m,
                )
                .expect("counts from the index are consistent"),
            );
        }
    });
    sort_rules(&mut rules);
    Ok(rules)
}

/// Rules for every item as consequent.
pub fn mine_all_rules(
    db: &BasketDatabase,
    constraints: &MiningConstraints,
) -> Result<Vec<AssociationRule>> {
    constraints.validate()?;
    if db.is_empty() {
        return Err(Error::domain("cannot mine an empty basket database"));
    }
    let m = db.len();
    let n = db.item_count();
    let mut rules = walk_antecedents(db, constraints, None, |ids, tids, out| {
        let mut counts = vec![0usize; n];
        for &t in tids {
            for &j in db.basket(t as usize) {
                counts[j as usize] += 1;
            }
        }
        let count_x = tids.len();
        for (j, &count_xy) in counts.iter().enumerate() {
            let j = j as ItemId;
            if count_xy == 0 || ids.contains(&j) {
                continue;
            }
            if constraints.confident(count_xy as f64 / count_x as f64) {
                out.push(
                    AssociationRule::from_counts(
                        to_itemset(db, ids),
                        db.item(j).clone(),
                        count_xy,
                        count_x,
                        db.tids(j).len(),
                        m,
                    )
                    .expect("counts from the index are consistent"),
                );
            }
        }
    });
    sort_rules(&mut rules);
    Ok(rules)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(s: &str) -> Item {
        Item::parse(s).unwrap()
    }

    fn db(baskets: &[&[&str]]) -> BasketDatabase {
        BasketDatabase::from_baskets(
            baskets
                .iter()
                .enumerate()
                .map(|(i, b)| (i.to_string(), b.iter().map(|s| item(s)).collect()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn ubiquitous_antecedent() {
        let d = db(&[
            &["A....", "C...."],
            &["A....", "C...."],
            &["A....", "C....", "B...."],
        ]);
        let rules = mine_rules(&d, &item("C...."), &MiningConstraints::default()).unwrap();
        let a = rules
            .iter()
            .find(|r| r.antecedent == [item("A....")].into())
            .unwrap();
        assert_eq!((a.confidence, a.lift, a.chi_squared), (1.0, 1.0, 0.0));
    }

    #[test]
    fn no_perfect_rule_yields_nothing() {
        let d = db(&[
            &["A....", "C...."],
            &["A...."],
            &["B....", "C...."],
            &["B...."],
        ]);
        let c = MiningConstraints {
            min_confidence: 1.0,
            ..Default::default()
        };
        assert!(mine_rules(&d, &item("C...."), &c).unwrap().is_empty());
    }

    #[test]
    fn unknown_consequent() {
        let d = db(&[&["A...."]]);
        assert!(matches!(
            mine_rules(&d, &item("Z...."), &MiningConstraints::default()),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn two_item_database_by_hand() {
        // A in 2/3 baskets, B in 2/3, together in 1/3.
        let d = db(&[&["A....", "B...."], &["A...."], &["B...."]]);
        let rules = mine_all_rules(&d, &MiningConstraints::default()).unwrap();
        assert_eq!(rules.len(), 2);
        assert_eq!(rules[0].antecedent, [item("B....")].into());
        assert_eq!(rules[0].consequent, item("A...."));
        assert_eq!(rules[1].antecedent, [item("A....")].into());
        for r in &rules {
            assert!((r.support - 1.0 / 3.0).abs() < 1e-15);
            assert!((r.confidence - 0.5).abs() < 1e-15);
            assert!((r.lift - 0.75).abs() < 1e-15);
        }
    }

    #[test]
    fn antecedent_size_bound() {
        let row: &[&str] = &["A....", "B....", "C....", "D...."];
        let d = db(&[row; 4]);
        for max in 1..=3 {
            let c = MiningConstraints {
                max_antecedent: max,
                ..Default::default()
            };
            let rules = mine_rules(&d, &item("D...."), &c).unwrap();
            assert!(rules.iter().all(|r| r.antecedent.len() <= max));
            // all non-empty subsets of {A, B, C} up to size `max`
            let expected = [3, 6, 7][max - 1];
            assert_eq!(rules.len(), expected);
        }
    }

    #[test]
    fn invalid_constraints() {
        let d = db(&[&["A...."]]);
        for c in [
            MiningConstraints {
                min_left_support: 0.0,
                ..Default::default()
            },
            MiningConstraints {
                min_confidence: 1.5,
                ..Default::default()
            },
            MiningConstraints {
                max_antecedent: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(mine_all_rules(&d, &c), Err(Error::Config(_))));
        }
    }
}
