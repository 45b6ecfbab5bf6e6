//! Interestingness measures of a rule `X => Y` from its 2x2 contingency
//! table. Cells are proportions of the `m` baskets:
//!
//! |        | Y       | not Y   |
//! |--------|---------|---------|
//! | X      | O1 / E1 | O2 / E2 |
//! | not X  | O3 / E3 | O4 / E4 |

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUPPORT_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContingencyTable {
    pub observed: [f64; 4],
    pub expected: [f64; 4],
    pub m: u64,
}

/// Builds the observed and independence-expected tables from the supports
/// of `X ∪ Y`, `X` and `Y`.
pub fn build_contingency(
    supp_xy: f64,
    supp_x: f64,
    supp_y: f64,
    m: u64,
) -> Result<ContingencyTable> {
    let in_unit = |s: f64| (0.0..=1.0).contains(&s);
    if !(in_unit(supp_xy) && in_unit(supp_x) && in_unit(supp_y)) {
        return Err(Error::domain("supports must lie in [0, 1]"));
    }
    if supp_xy > supp_x.min(supp_y) + SUPPORT_TOL {
        return Err(Error::domain(format!(
            "inconsistent supports: supp(X∪Y)={supp_xy} exceeds min(supp(X)={supp_x}, supp(Y)={supp_y})"
        )));
    }
    let neither = 1.0 - supp_x - supp_y + supp_xy;
    if neither < -SUPPORT_TOL {
        return Err(Error::domain(format!(
            "inconsistent supports: supp(X)+supp(Y)-supp(X∪Y) = {} exceeds 1",
            1.0 - neither
        )));
    }
    let observed = [
        supp_xy,
        (supp_x - supp_xy).max(0.0),
        (supp_y - supp_xy).max(0.0),
        neither.max(0.0),
    ];
    let expected = [
        supp_x * supp_y,
        supp_x * (1.0 - supp_y),
        supp_y * (1.0 - supp_x),
        (1.0 - supp_x) * (1.0 - supp_y),
    ];
    Ok(ContingencyTable {
        observed,
        expected,
        m,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquared {
    pub value: f64,
    /// A marginal is 0 or 1, so some expected cell is empty and the
    /// statistic is undefined; `value` is then 0.
    pub degenerate: bool,
}

/// `m * Σ (Oi - Ei)² / Ei`, the count-scale 2x2 statistic.
pub fn chi_squared(t: &ContingencyTable) -> ChiSquared {
    if t.expected.iter().any(|&e| e <= 0.0) {
        return ChiSquared {
            value: 0.0,
            degenerate: true,
        };
    }
    let sum: f64 = t
        .observed
        .iter()
        .zip(&t.expected)
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum();
    ChiSquared {
        value: t.m as f64 * sum,
        degenerate: false,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RuleMeasures {
    pub support: f64,
    pub left_support: f64,
    pub confidence: f64,
    pub lift: f64,
    pub chi_squared: f64,
    pub degenerate: bool,
}

/// All rule measures from exact basket counts.
pub fn rule_measures(count_xy: u64, count_x: u64, count_y: u64, m: u64) -> Result<RuleMeasures> {
    if count_x == 0 || count_y == 0 {
        return Err(Error::domain(
            "confidence and lift are undefined when the antecedent or consequent never occurs",
        ));
    }
    if count_xy > count_x.min(count_y)
        || count_x.max(count_y) > m
        || count_x + count_y - count_xy > m
    {
        return Err(Error::domain(format!(
            "inconsistent counts: xy={count_xy} x={count_x} y={count_y} m={m}"
        )));
    }
    let mf = m as f64;
    let (xy, x, y) = (count_xy as f64, count_x as f64, count_y as f64);
    let joint = u128::from(count_xy) * u128::from(m);
    let indep = u128::from(count_x) * u128::from(count_y);
    let table = build_contingency(xy / mf, x / mf, y / mf, m)?;
    let chi = chi_squared(&table);
    Ok(RuleMeasures {
        support: xy / mf,
        left_support: x / mf,
        confidence: xy / x,
        lift: joint as f64 / indep as f64,
        // observed equals expected exactly; keep the statistic exactly zero
        chi_squared: if joint == indep { 0.0 } else { chi.value },
        degenerate: chi.degenerate,
    })
}
