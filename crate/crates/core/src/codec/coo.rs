//! Coordinate-format storage of sparse position residuals.

use crate::error::{Error, Result};
use crate::Scalar;

/// Non-zero rows of an `N×3` matrix at `f32` precision.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseCoo {
    pub indices: Vec<u32>,
    pub values: Vec<[f32; 3]>,
}

impl SparseCoo {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Checks ordering, zero rows and index bounds against `n` rows.
    pub fn check(&self, n: usize) -> Result<()> {
        if self.indices.len() != self.values.len() {
            return Err(Error::Decode("COO index and value counts differ".into()));
        }
        if self.indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Decode("COO indices are not strictly increasing".into()));
        }
        if let Some(&last) = self.indices.last() {
            if last as usize >= n {
                return Err(Error::Decode(format!("COO index {last} out of range for {n} rows")));
            }
        }
        if self.values.contains(&[0.0; 3]) {
            return Err(Error::Decode("COO stores an all-zero row".into()));
        }
        Ok(())
    }
}

/// Keeps the rows whose `f32` rounding is not exactly zero.
pub fn coo_encode<T: Scalar>(rows: &[[T; 3]]) -> SparseCoo {
    let mut coo = SparseCoo::default();
    for (i, r) in rows.iter().enumerate() {
        let v = r.map(|x| x.to_f32_lossy());
        if v != [0.0; 3] {
            coo.indices.push(i as u32);
            coo.values.push(v);
        }
    }
    coo
}

pub fn coo_decode(coo: &SparseCoo, n: usize) -> Result<Vec<[f32; 3]>> {
    coo.check(n)?;
    let mut dense = vec![[0.0f32; 3]; n];
    for (&i, v) in coo.indices.iter().zip(&coo.values) {
        dense[i as usize] = *v;
    }
    Ok(dense)
}
