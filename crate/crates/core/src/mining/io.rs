use std::{fs::File, io, path::Path};

use crate::{
    basket::ItemSet,
    codes::Item,
    error::{Error, Result},
};

use super::AssociationRule;

const HEADER: [&str; 7] = [
    "antecedent",
    "consequent",
    "left_support",
    "support",
    "confidence",
    "lift",
    "chi_squared",
];

/// Renders a real rounded to 12 significant digits, in the shortest form
/// that reads back to the rounded value.
pub fn fmt_real(x: f64) -> String {
    if !x.is_finite() || x == 0.0 {
        return format!("{}", if x == 0.0 { 0.0 } else { x });
    }
    let rounded: f64 = format!("{x:.11e}").parse().expect("formatted float");
    format!("{rounded}")
}

pub fn write_rules_csv<W: io::Write>(out: W, rules: &[AssociationRule]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HEADER)?;
    for r in rules {
        let antecedent = r
            .antecedent
            .iter()
            .map(Item::as_str)
            .collect::<Vec<_>>()
            .join("|");
        w.write_record([
            antecedent,
            r.consequent.to_string(),
            fmt_real(r.left_support),
            fmt_real(r.support),
            fmt_real(r.confidence),
            fmt_real(r.lift),
            fmt_real(r.chi_squared),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_rules_json<W: io::Write>(out: W, rules: &[AssociationRule]) -> serde_json::Result<()> {
    serde_json::to_writer_pretty(out, rules)
}

pub fn read_rules_csv(path: &Path) -> Result<Vec<AssociationRule>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let parse_err = |line: u64, message: String| Error::Parse {
        path: path.into(),
        line,
        message,
    };
    let header = rdr.headers().map_err(|e| parse_err(1, e.to_string()))?;
    if header.iter().ne(HEADER) {
        return Err(parse_err(
            1,
            format!("expected header {:?}", HEADER.join(",")),
        ));
    }
    let mut rules = Vec::new();
    let mut record = csv::StringRecord::new();
    loop {
        let line = rdr.position().line();
        match rdr.read_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(parse_err(line, e.to_string())),
        }
        if record.len() != HEADER.len() {
            return Err(parse_err(line, format!("expected {} fields", HEADER.len())));
        }
        let antecedent = record[0]
            .split('|')
            .map(Item::parse)
            .collect::<Result<ItemSet>>()
            .map_err(|e| parse_err(line, e.to_string()))?;
        let consequent = Item::parse(&record[1]).map_err(|e| parse_err(line, e.to_string()))?;
        let mut reals = [0f64; 5];
        for (slot, (field, name)) in reals
            .iter_mut()
            .zip(record.iter().skip(2).zip(&HEADER[2..]))
        {
            *slot = field
                .parse()
                .map_err(|_| parse_err(line, format!("bad {name} {field:?}")))?;
        }
        let [left_support, support, confidence, lift, chi_squared] = reals;
        rules.push(AssociationRule {
            antecedent,
            consequent,
            left_support,
            support,
            confidence,
            lift,
            chi_squared,
        });
    }
    Ok(rules)
}

/// Reads `rules.json` or (any other extension) `rules.csv`.
pub fn read_rules(path: &Path) -> Result<Vec<AssociationRule>> {
    if path.extension().is_some_and(|e| e == "json") {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(io::BufReader::new(file))?)
    } else {
        read_rules_csv(path)
    }
}
