//! Per-patient item baskets and the mining database built from them.

use std::{
    collections::{BTreeMap, BTreeSet},
    io,
};

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::{
    codes::Item,
    error::{Error, Result},
    events::{EventStore, PatientRef},
};

pub type ItemSet = BTreeSet<Item>;

/// Dense item identifier inside one [`BasketDatabase`]. Ids follow the
/// canonical item order.
pub type ItemId = u32;

/// Gender plus every normalized item in the patient's retained history.
pub fn build_basket(patient: &PatientRef<'_>) -> ItemSet {
    let mut basket: ItemSet = patient.events.iter().map(|e| e.item()).collect();
    basket.insert(Item::gender(patient.info.gender));
    basket
}

/// Gender plus items recorded before `cutoff`; same-day events are included
/// only when `include_same_day` is set.
pub fn pre_outcome_basket(
    patient: &PatientRef<'_>,
    cutoff: NaiveDate,
    include_same_day: bool,
) -> ItemSet {
    let mut basket: ItemSet = patient
        .events
        .iter()
        .take_while(|e| e.date < cutoff || (include_same_day && e.date == cutoff))
        .map(|e| e.item())
        .collect();
    basket.insert(Item::gender(patient.info.gender));
    basket
}

/// The mining corpus: one basket per eligible patient, plus a vertical index
/// from each item to the sorted ordinals of the baskets containing it.
#[derive(Clone, Debug)]
pub struct BasketDatabase {
    patient_ids: Vec<String>,
    items: Vec<Item>,
    item_ids: BTreeMap<Item, ItemId>,
    baskets: Vec<Vec<ItemId>>,
    tids: Vec<Vec<u32>>,
}

impl BasketDatabase {
    /// One whole-history basket per patient active for at least
    /// `min_active_months`, in patient id order.
    pub fn build(store: &EventStore, min_active_months: u32) -> Result<Self> {
        let eligible = store.eligible_patients(min_active_months);
        let baskets: Vec<(String, ItemSet)> = eligible
            .par_iter()
            .map(|p| (p.id().to_owned(), build_basket(p)))
            .collect();
        Self::from_baskets(baskets)
    }

    pub fn from_baskets(baskets: Vec<(String, ItemSet)>) -> Result<Self> {
        if baskets.is_empty() {
            return Err(Error::domain(
                "no eligible patients: the basket database is empty",
            ));
        }
        if baskets.len() > u32::MAX as usize {
            return Err(Error::domain("too many baskets"));
        }
        let mut item_ids: BTreeMap<Item, ItemId> = baskets
            .iter()
            .flat_map(|(_, b)| b.iter().cloned())
            .map(|i| (i, 0))
            .collect();
        let mut items = Vec::with_capacity(item_ids.len());
        for (id, (item, slot)) in item_ids.iter_mut().enumerate() {
            *slot = id as ItemId;
            items.push(item.clone());
        }
        let mut tids = vec![Vec::new(); items.len()];
        let mut patient_ids = Vec::with_capacity(baskets.len());
        let mut encoded = Vec::with_capacity(baskets.len());
        for (ordinal, (pid, basket)) in baskets.into_iter().enumerate() {
            // BTreeSet iteration is sorted, and so are the ids.
            let ids: Vec<ItemId> = basket.iter().map(|i| item_ids[i]).collect();
            for &id in &ids {
                tids[id as usize].push(ordinal as u32);
            }
            patient_ids.push(pid);
            encoded.push(ids);
        }
        Ok(BasketDatabase {
            patient_ids,
            items,
            item_ids,
            baskets: encoded,
            tids,
        })
    }

    /// Number of baskets.
    pub fn len(&self) -> usize {
        self.baskets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.baskets.is_empty()
    }

    pub fn item_count(&self) -> usize {
        self.items.len()
    }

    pub fn item(&self, id: ItemId) -> &Item {
        &self.items[id as usize]
    }

    pub fn item_id(&self, item: &Item) -> Option<ItemId> {
        self.item_ids.get(item).copied()
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    /// Sorted ordinals of the baskets containing `id`.
    pub fn tids(&self, id: ItemId) -> &[u32] {
        &self.tids[id as usize]
    }

    pub fn basket(&self, ordinal: usize) -> &[ItemId] {
        &self.baskets[ordinal]
    }

    pub fn patient_id(&self, ordinal: usize) -> &str {
        &self.patient_ids[ordinal]
    }

    /// Number of baskets containing every item of `itemset`; the empty set
    /// is contained in every basket.
    pub fn count(&self, itemset: &ItemSet) -> usize {
        let mut ids = Vec::with_capacity(itemset.len());
        for item in itemset {
            match self.item_id(item) {
                Some(id) => ids.push(id),
                None => return 0,
            }
        }
        self.count_ids(&ids)
    }

    pub fn count_ids(&self, ids: &[ItemId]) -> usize {
        let Some((&first, rest)) = ids.split_first() else {
            return self.len();
        };
        let mut acc = self.tids(first).to_vec();
        let mut scratch = Vec::new();
        for &id in rest {
            intersect_into(&acc, self.tids(id), &mut scratch);
            std::mem::swap(&mut acc, &mut scratch);
            if acc.is_empty() {
                break;
            }
        }
        acc.len()
    }

    /// Fraction of baskets containing `itemset`.
    pub fn supp(&self, itemset: &ItemSet) -> f64 {
        self.count(itemset) as f64 / self.len() as f64
    }

    /// Writes `patient_id,item1|item2|...`, one line per basket.
    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["patient_id", "items"])?;
        for (pid, basket) in self.patient_ids.iter().zip(&self.baskets) {
            let joined = basket
                .iter()
                .map(|&id| self.item(id).as_str())
                .collect::<Vec<_>>()
                .join("|");
            w.write_record([pid.as_str(), &joined])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Merge-intersects two sorted ordinal lists into `out`.
pub fn intersect_into(a: &[u32], b: &[u32], out: &mut Vec<u32>) {
    out.clear();
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
}

/// Size of the intersection of two sorted ordinal lists.
pub fn intersect_count(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{
        codes::{Code, Gender, ReadCode},
        events::{EventRecord, LoadOptions, PatientInfo},
    };
    use proptest::prelude::*;

    fn item(s: &str) -> Item {
        Item::parse(s).unwrap()
    }

    fn set(items: &[&str]) -> ItemSet {
        items.iter().map(|s| item(s)).collect()
    }

    fn db(baskets: &[&[&str]]) -> BasketDatabase {
        BasketDatabase::from_baskets(
            baskets
                .iter()
                .enumerate()
                .map(|(i, b)| (i.to_string(), set(b)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn repeated_codes_collapse() {
        let info = PatientInfo {
            patient_id: "1".into(),
            gender: Gender::M,
            year_of_birth: 1970,
            registration_date: NaiveDate::from_ymd_opt(2000, 1, 1).unwrap(),
        };
        let ev = EventRecord {
            date: NaiveDate::from_ymd_opt(2001, 1, 1).unwrap(),
            code: Code::Read(ReadCode::parse("A11zz").unwrap()),
        };
        let store = EventStore::from_records(
            vec![info],
            std::iter::repeat_n(("1".to_string(), ev), 100),
            &LoadOptions::default(),
        )
        .unwrap();
        let p = store.patient("1").unwrap();
        assert_eq!(build_basket(&p), set(&["GENDER:M", "A11.."]));
        assert_eq!(pre_outcome_basket(&p, ev.date, false), set(&["GENDER:M"]));
        assert_eq!(
            pre_outcome_basket(&p, ev.date, true),
            set(&["GENDER:M", "A11.."])
        );
    }

    #[test]
    fn support_counts() {
        let d = db(&[
            &["A....", "B...."],
            &["A...."],
            &["A....", "C...."],
            &["B...."],
        ]);
        assert_eq!(d.len(), 4);
        assert_eq!(d.supp(&ItemSet::new()), 1.0);
        assert_eq!(d.supp(&set(&["A...."])), 0.75);
        assert_eq!(d.supp(&set(&["A....", "B...."])), 0.25);
        assert_eq!(d.supp(&set(&["Z...."])), 0.0);
    }

    #[test]
    fn empty_database_is_an_error() {
        assert!(matches!(
            BasketDatabase::from_baskets(vec![]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn basket_dump() {
        let d = db(&[&["B....", "A...."], &["GENDER:F"]]);
        let mut out = Vec::new();
        d.write_csv(&mut out).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "patient_id,items\n0,A....|B....\n1,GENDER:F\n"
        );
    }

    proptest! {
        #[test]
        fn index_matches_scan(
            raw in prop::collection::vec(prop::collection::btree_set(0u8..12, 0..8), 1..50),
            query in prop::collection::btree_set(0u8..12, 0..4),
        ) {
            let name = |i: u8| format!("{}....", (b'A' + i) as char);
            let baskets: Vec<(String, ItemSet)> = raw
                .iter()
                .enumerate()
                .map(|(i, b)| (i.to_string(), b.iter().map(|&x| item(&name(x))).collect()))
                .collect();
            let d = BasketDatabase::from_baskets(baskets.clone()).unwrap();
            let q: ItemSet = query.iter().map(|&x| item(&name(x))).collect();
            let scan = baskets.iter().filter(|(_, b)| q.is_subset(b)).count();
            prop_assert_eq!(d.count(&q), scan);
            for id in 0..d.item_count() as ItemId {
                let single: ItemSet = [d.item(id).clone()].into();
                let members = baskets.iter().filter(|(_, b)| single.is_subset(b)).count();
                prop_assert_eq!(d.tids(id).len(), members);
                prop_assert!(members > 0);
            }
        }
    }
}
