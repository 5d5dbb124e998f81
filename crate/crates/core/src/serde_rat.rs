//! Serde adapters that carry rationals as `"p/q"` strings.

use num_rational::BigRational;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serializer};

use crate::bignum::{parse_rational, rational_to_string};

pub fn serialize<S: Serializer>(r: &BigRational, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&rational_to_string(r))
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BigRational, D::Error> {
    let s = String::deserialize(d)?;
    parse_rational(&s).map_err(D::Error::custom)
}

pub mod matrix2 {
    use super::*;

    pub fn serialize<S: Serializer>(m: &[[BigRational; 2]; 2], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<String>> = m.iter().map(|r| r.iter().map(rational_to_string).collect()).collect();
        serde::Serialize::serialize(&rows, s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[[BigRational; 2]; 2], D::Error> {
        let rows = <[[String; 2]; 2]>::deserialize(d)?;
        let p = |s: &String| parse_rational(s).map_err(D::Error::custom);
        Ok([[p(&rows[0][0])?, p(&rows[0][1])?], [p(&rows[1][0])?, p(&rows[1][1])?]])
    }
}
