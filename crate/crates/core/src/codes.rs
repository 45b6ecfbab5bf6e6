//! Read and BNF clinical codes, their hierarchy levels, and the normalized
//! items that make up a patient basket.
//!
//! A Read code is five symbols where trailing dots mark the unused levels:
//! `A11zz` is a level-5 code whose level-3 ancestor is `A11..`. A BNF code is
//! four integers `b1.b2.b3.b4`, with trailing zeros marking unused levels.
//! Mining works on Read codes truncated to level 3 and BNF codes truncated
//! to level 2, plus a gender item.

use std::{fmt, str::FromStr, sync::Arc};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const READ_LEN: usize = 5;
pub const BNF_LEN: usize = 4;

/// Level at which Read codes enter a basket.
pub const READ_ITEM_LEVEL: usize = 3;
/// Level at which BNF codes enter a basket.
pub const BNF_ITEM_LEVEL: usize = 2;

const GENDER_PREFIX: &str = "GENDER:";

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ReadCode([u8; READ_LEN]);

impl ReadCode {
    pub fn parse(s: &str) -> Result<Self> {
        let bad = |reason| Error::InvalidCode {
            kind: "Read",
            code: s.to_owned(),
            reason,
        };
        let bytes = s.as_bytes();
        if bytes.len() != READ_LEN {
            return Err(bad("expected exactly 5 symbols"));
        }
        let mut chars = [b'.'; READ_LEN];
        let mut seen_dot = false;
        for (slot, &b) in chars.iter_mut().zip(bytes) {
            match b {
                b'.' => seen_dot = true,
                b if b.is_ascii_alphanumeric() => {
                    if seen_dot {
                        return Err(bad("dots must form a contiguous suffix"));
                    }
                }
                _ => return Err(bad("symbols must be letters, digits or '.'")),
            }
            *slot = b;
        }
        if chars[0] == b'.' {
            return Err(bad("at least one non-dot symbol is required"));
        }
        Ok(ReadCode(chars))
    }

    /// Position of the last non-dot symbol, 1-based.
    pub fn level(&self) -> usize {
        self.0.iter().take_while(|&&b| b != b'.').count()
    }

    /// The code one level up the hierarchy.
    pub fn parent(&self) -> Result<Self> {
        let level = self.level();
        if level < 2 {
            return Err(Error::domain(format!("Read code {self} has no parent")));
        }
        let mut chars = self.0;
        chars[level - 1] = b'.';
        Ok(ReadCode(chars))
    }

    /// Keeps the first `min(k, level)` symbols and dots the rest.
    pub fn truncate(&self, k: usize) -> Result<Self> {
        if !(1..=READ_LEN).contains(&k) {
            return Err(Error::domain(format!(
                "Read truncation level {k} outside 1..={READ_LEN}"
            )));
        }
        let mut chars = self.0;
        chars[k..].fill(b'.');
        Ok(ReadCode(chars))
    }

    /// True when `self` equals `ancestor` or lies below it in the hierarchy.
    pub fn is_descendant_of(&self, ancestor: &ReadCode) -> bool {
        let k = ancestor.level();
        self.level() >= k && self.0[..k] == ancestor.0[..k]
    }

    pub fn as_str(&self) -> &str {
        // Only ASCII is ever stored.
        std::str::from_utf8(&self.0).expect("ascii")
    }
}

impl fmt::Display for ReadCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for ReadCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ReadCode({})", self.as_str())
    }
}

impl FromStr for ReadCode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ReadCode::parse(s)
    }
}

impl TryFrom<&str> for ReadCode {
    type Error = Error;
    fn try_from(s: &str) -> Result<Self> {
        ReadCode::parse(s)
    }
}

impl Serialize for ReadCode {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ReadCode {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ReadCode::parse(&s).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BnfCode([u32; BNF_LEN]);

impl BnfCode {
    pub fn new(parts: [u32; BNF_LEN]) -> Result<Self> {
        if parts[0] == 0 {
            return Err(Error::InvalidCode {
                kind: "BNF",
                code: render_bnf(&parts),
                reason: "chapter must be positive",
            });
        }
        if parts.windows(2).any(|w| w[0] == 0 && w[1] != 0) {
            return Err(Error::InvalidCode {
                kind: "BNF",
                code: render_bnf(&parts),
                reason: "zeros must form a contiguous suffix",
            });
        }
        Ok(BnfCode(parts))
    }

    pub fn parse(s: &str) -> Result<Self> {
        let bad = |reason| Error::InvalidCode {
            kind: "BNF",
            code: s.to_owned(),
            reason,
        };
        let mut parts = [0u32; BNF_LEN];
        let mut n = 0;
        for field in s.split('.') {
            if n == BNF_LEN {
                return Err(bad("expected four dot-separated integers"));
            }
            if field.is_empty() || !field.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad("expected four dot-separated integers"));
            }
            parts[n] = field.parse().map_err(|_| bad("part out of range"))?;
            n += 1;
        }
        if n != BNF_LEN {
            return Err(bad("expected four dot-separated integers"));
        }
        BnfCode::new(parts).map_err(|_| {
            bad(if parts[0] == 0 {
                "chapter must be positive"
            } else {
                "zeros must form a contiguous suffix"
            })
        })
    }

    pub fn parts(&self) -> [u32; BNF_LEN] {
        self.0
    }

    /// Number of non-zero leading parts.
    pub fn level(&self) -> usize {
        self.0.iter().take_while(|&&p| p != 0).count()
    }

    pub fn truncate(&self, k: usize) -> Result<Self> {
        if !(1..=BNF_LEN).contains(&k) {
            return Err(Error::domain(format!(
                "BNF truncation level {k} outside 1..={BNF_LEN}"
            )));
        }
        let mut parts = self.0;
        parts[k..].fill(0);
        Ok(BnfCode(parts))
    }
}

fn render_bnf(parts: &[u32; BNF_LEN]) -> String {
    format!("{}.{}.{}.{}", parts[0], parts[1], parts[2], parts[3])
}

impl fmt::Display for BnfCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_bnf(&self.0))
    }
}

impl fmt::Debug for BnfCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BnfCode({self})")
    }
}

impl FromStr for BnfCode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        BnfCode::parse(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    M,
    F,
}

impl Gender {
    pub fn as_str(self) -> &'static str {
        match self {
            Gender::M => "M",
            Gender::F => "F",
        }
    }
}

impl FromStr for Gender {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "M" => Ok(Gender::M),
            "F" => Ok(Gender::F),
            other => Err(format!("gender must be M or F, got {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CodeType {
    Read,
    Bnf,
}

impl CodeType {
    pub fn as_str(self) -> &'static str {
        match self {
            CodeType::Read => "READ",
            CodeType::Bnf => "BNF",
        }
    }
}

impl FromStr for CodeType {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "READ" => Ok(CodeType::Read),
            "BNF" => Ok(CodeType::Bnf),
            other => Err(format!("code_type must be READ or BNF, got {other:?}")),
        }
    }
}

/// A parsed event code.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Code {
    Read(ReadCode),
    Bnf(BnfCode),
}

impl Code {
    pub fn parse(code_type: CodeType, raw: &str) -> Result<Self> {
        match code_type {
            CodeType::Read => ReadCode::parse(raw).map(Code::Read),
            CodeType::Bnf => BnfCode::parse(raw).map(Code::Bnf),
        }
    }

    pub fn code_type(&self) -> CodeType {
        match self {
            Code::Read(_) => CodeType::Read,
            Code::Bnf(_) => CodeType::Bnf,
        }
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Code::Read(c) => c.fmt(f),
            Code::Bnf(c) => c.fmt(f),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ItemKind {
    Read,
    Bnf,
    Gender,
}

/// A basket item in canonical form: a level-3 Read code, a level-2 BNF code,
/// or `GENDER:M` / `GENDER:F`.
///
/// Equality, ordering and hashing use the canonical string only.
#[derive(Clone)]
pub struct Item {
    kind: ItemKind,
    repr: Arc<str>,
}

impl Item {
    pub fn read(code: &ReadCode) -> Self {
        let code = code.truncate(READ_ITEM_LEVEL).expect("valid level");
        Item {
            kind: ItemKind::Read,
            repr: code.as_str().into(),
        }
    }

    pub fn bnf(code: &BnfCode) -> Self {
        let code = code.truncate(BNF_ITEM_LEVEL).expect("valid level");
        Item {
            kind: ItemKind::Bnf,
            repr: code.to_string().into(),
        }
    }

    pub fn gender(g: Gender) -> Self {
        Item {
            kind: ItemKind::Gender,
            repr: format!("{GENDER_PREFIX}{}", g.as_str()).into(),
        }
    }

    pub fn from_code(code: &Code) -> Self {
        match code {
            Code::Read(c) => Item::read(c),
            Code::Bnf(c) => Item::bnf(c),
        }
    }

    /// Parses a canonical item string. Codes above the item level are
    /// truncated, so `A11zz` parses to `A11..`.
    pub fn parse(s: &str) -> Result<Self> {
        if let Some(g) = s.strip_prefix(GENDER_PREFIX) {
            let g = g.parse::<Gender>().map_err(|_| Error::InvalidCode {
                kind: "gender",
                code: s.to_owned(),
                reason: "expected GENDER:M or GENDER:F",
            })?;
            return Ok(Item::gender(g));
        }
        if s.len() == READ_LEN {
            if let Ok(code) = ReadCode::parse(s) {
                return Ok(Item::read(&code));
            }
        }
        match BnfCode::parse(s) {
            Ok(code) => Ok(Item::bnf(&code)),
            Err(_) => Err(Error::InvalidCode {
                kind: "item",
                code: s.to_owned(),
                reason: "not a Read code, BNF code or gender item",
            }),
        }
    }

    pub fn kind(&self) -> ItemKind {
        self.kind
    }

    pub fn as_str(&self) -> &str {
        &self.repr
    }
}

impl PartialEq for Item {
    fn eq(&self, other: &Self) -> bool {
        self.repr == other.repr
    }
}

impl Eq for Item {}

impl std::hash::Hash for Item {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.repr.hash(state)
    }
}

impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Item {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.repr.cmp(&other.repr)
    }
}

impl fmt::Display for Item {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.repr)
    }
}

impl fmt::Debug for Item {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Item({})", self.repr)
    }
}

impl Serialize for Item {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.repr)
    }
}

impl<'de> Deserialize<'de> for Item {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Item::parse(&s).map_err(serde::de::Error::custom)
    }
}
