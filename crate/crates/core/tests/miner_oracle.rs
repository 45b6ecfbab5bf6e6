mod common;

use common::{brute_force_rules, close, rng, RandomDb};
use rand::Rng;
use rulefine::{
    basket::BasketDatabase,
    mining::{mine_all_rules, mine_rules, MiningConstraints},
};

fn check(seed: u64) {
    let mut rng = rng(seed);
    let db = RandomDb::generate(&mut rng, 120, 10);
    let constraints = MiningConstraints {
        min_left_support: rng.gen_range(0.005..0.3),
        min_confidence: rng.gen_range(0.01..0.6),
        max_antecedent: rng.gen_range(1..=3),
    };
    let oracle = brute_force_rules(
        &db,
        constraints.min_left_support,
        constraints.min_confidence,
        constraints.max_antecedent,
    );
    let basket_db = BasketDatabase::from_baskets(db.baskets()).unwrap();
    let mined = mine_all_rules(&basket_db, &constraints).unwrap();
    assert_eq!(mined.len(), oracle.len(), "seed {seed}");
    for r in &mined {
        let o = oracle
            .get(&(r.antecedent.clone(), r.consequent.clone()))
            .unwrap_or_else(|| panic!("seed {seed}: unexpected rule {r:?}"));
        for (a, b) in [
            (r.left_support, o.left_support),
            (r.support, o.support),
            (r.confidence, o.confidence),
            (r.lift, o.lift),
            (r.chi_squared, o.chi_squared),
        ] {
            assert!(close(a, b, 1e-9), "seed {seed}: {a} vs {b} in {r:?}");
        }
    }

    let target = db.items[rng.gen_range(0..db.items.len())].clone();
    if basket_db.item_id(&target).is_some() {
        let single = mine_rules(&basket_db, &target, &constraints).unwrap();
        let expected: Vec<_> = mined
            .iter()
            .filter(|r| r.consequent == target)
            .cloned()
            .collect();
        assert_eq!(single, expected, "seed {seed}");
    }
}

#[test]
fn matches_exhaustive_enumeration() {
    for seed in 0..40 {
        check(seed);
    }
}

#[test]
fn single_basket_database() {
    let db = RandomDb {
        items: (0..3).map(common::letter_item).collect(),
        masks: vec![0b111],
    };
    let basket_db = BasketDatabase::from_baskets(db.baskets()).unwrap();
    let rules = mine_all_rules(&basket_db, &MiningConstraints::default()).unwrap();
    assert_eq!(rules.len(), brute_force_rules(&db, 0.001, 0.01, 3).len());
    assert!(rules.iter().all(|r| r.lift == 1.0 && r.chi_squared == 0.0));
}
