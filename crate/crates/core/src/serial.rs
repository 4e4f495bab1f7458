//! JSON encodings shared by every artifact: complex numbers as `[re, im]`,
//! matrices as row-major nested arrays of such pairs, exact rationals as
//! `{"num": int, "den": int}`.

use num_complex::Complex64 as C;
use num_rational::Rational64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::linalg::CMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JsonRational {
    pub num: i64,
    pub den: i64,
}

impl From<Rational64> for JsonRational {
    fn from(r: Rational64) -> Self {
        JsonRational { num: *r.numer(), den: *r.denom() }
    }
}

impl From<JsonRational> for Rational64 {
    fn from(r: JsonRational) -> Self {
        Rational64::new(r.num, r.den)
    }
}

pub fn complex_to_json(z: C) -> [f64; 2] {
    [z.re, z.im]
}

pub fn complex_from_json(v: [f64; 2]) -> C {
    C::new(v[0], v[1])
}

pub fn matrix_to_json(m: &CMatrix) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| complex_to_json(m[(i, j)])).collect())
        .collect()
}

pub fn matrix_from_json(rows: &[Vec<[f64; 2]>]) -> Result<CMatrix, String> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return Err("ragged matrix rows".into());
    }
    Ok(CMatrix::from_fn(nrows, ncols, |i, j| complex_from_json(rows[i][j])))
}

pub mod complex {
    use super::*;

    pub fn serialize<S: Serializer>(z: &C, s: S) -> Result<S::Ok, S::Error> {
        complex_to_json(*z).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<C, D::Error> {
        Ok(complex_from_json(<[f64; 2]>::deserialize(d)?))
    }
}

pub mod complex_vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[C], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|z| complex_to_json(*z)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<C>, D::Error> {
        Ok(Vec::<[f64; 2]>::deserialize(d)?.into_iter().map(complex_from_json).collect())
    }
}

pub mod matrix {
    use super::*;

    pub fn serialize<S: Serializer>(m: &CMatrix, s: S) -> Result<S::Ok, S::Error> {
        matrix_to_json(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<CMatrix, D::Error> {
        let rows = Vec::<Vec<[f64; 2]>>::deserialize(d)?;
        matrix_from_json(&rows).map_err(serde::de::Error::custom)
    }
}

pub mod matrix_vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[CMatrix], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(matrix_to_json).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<CMatrix>, D::Error> {
        let all = Vec::<Vec<Vec<[f64; 2]>>>::deserialize(d)?;
        all.iter()
            .map(|rows| matrix_from_json(rows).map_err(serde::de::Error::custom))
            .collect()
    }
}

pub mod rational {
    use super::*;

    pub fn serialize<S: Serializer>(r: &Rational64, s: S) -> Result<S::Ok, S::Error> {
        JsonRational::from(*r).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational64, D::Error> {
        let r = JsonRational::deserialize(d)?;
        if r.den == 0 {
            return Err(serde::de::Error::custom("zero denominator"));
        }
        Ok(r.into())
    }
}

pub mod rational_vec {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[Rational64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|r| JsonRational::from(*r)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Rational64>, D::Error> {
        let v = Vec::<JsonRational>::deserialize(d)?;
        if v.iter().any(|r| r.den == 0) {
            return Err(serde::de::Error::custom("zero denominator"));
        }
        Ok(v.into_iter().map(Rational64::from).collect())
    }
}
