//! Significant-digit agreement between two grid states.
//!
//! Two values agree to `floor(-log10(2|a - b| / (|a| + |b|)))` decimal digits,
//! clamped to `0..=16`. Equal values (including `0` against `-0`) count as 16.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::category::Category;
use crate::driver::GridState;
use crate::error::{Error, Result};

pub const MAX_DIGITS: u8 = 16;

pub fn digit_agreement(a: f64, b: f64) -> Result<u8> {
    for v in [a, b] {
        if !v.is_finite() {
            return Err(Error::NonFinite(v));
        }
    }
    if a == b {
        return Ok(MAX_DIGITS);
    }
    let denom = libm::fabs(a) + libm::fabs(b);
    let rel = 2.0 * libm::fabs(a - b) / denom;
    let digits = libm::floor(-libm::log10(rel));
    Ok(digits.clamp(0.0, f64::from(MAX_DIGITS)) as u8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldDiff {
    pub name: String,
    pub min_digits: u8,
    pub mean_digits: f64,
    pub count_compared: usize,
    pub count_exact: usize,
}

impl FieldDiff {
    pub fn is_exact(&self) -> bool {
        self.count_exact == self.count_compared
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffReport {
    pub fields: Vec<FieldDiff>,
}

impl DiffReport {
    pub fn all_exact(&self) -> bool {
        self.fields.iter().all(FieldDiff::is_exact)
    }

    pub fn field(&self, name: &str) -> Option<&FieldDiff> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn min_digits(&self) -> u8 {
        self.fields.iter().map(|f| f.min_digits).min().unwrap_or(MAX_DIGITS)
    }
}

fn compare_field<'a>(name: &str, pairs: impl Iterator<Item = (&'a f64, &'a f64)>) -> Result<FieldDiff> {
    let mut min = MAX_DIGITS;
    let mut sum = 0u64;
    let mut count = 0usize;
    let mut exact = 0usize;
    for (&a, &b) in pairs {
        let d = digit_agreement(a, b)?;
        min = min.min(d);
        sum += u64::from(d);
        count += 1;
        if d == MAX_DIGITS {
            exact += 1;
        }
    }
    Ok(FieldDiff {
        name: name.into(),
        min_digits: min,
        mean_digits: if count == 0 {
            f64::from(MAX_DIGITS)
        } else {
            sum as f64 / count as f64
        },
        count_compared: count,
        count_exact: exact,
    })
}

/// Compares `T_OLD`, pressure and each category's bins.
pub fn compare_states(s1: &GridState, s2: &GridState) -> Result<DiffReport> {
    if s1.domain().extents() != s2.domain().extents() || s1.nkr() != s2.nkr() {
        return Err(Error::ShapeMismatch(format!(
            "extents {:?} x nkr {} vs {:?} x nkr {}",
            s1.domain().extents(),
            s1.nkr(),
            s2.domain().extents(),
            s2.nkr()
        )));
    }
    let mut fields = Vec::with_capacity(2 + Category::ALL.len());
    fields.push(compare_field("T_OLD", s1.t_old().iter().zip(s2.t_old()))?);
    fields.push(compare_field("pressure", s1.pressure().iter().zip(s2.pressure()))?);
    let nkr = s1.nkr();
    for cat in Category::ALL {
        let a = s1.bins().chunks_exact(s1.point_len());
        let b = s2.bins().chunks_exact(s2.point_len());
        let pairs = a.zip(b).flat_map(|(pa, pb)| {
            let range = cat.index() * nkr..(cat.index() + 1) * nkr;
            pa[range.clone()].iter().zip(&pb[range])
        });
        fields.push(compare_field(cat.name(), pairs)?);
    }
    Ok(DiffReport { fields })
}
