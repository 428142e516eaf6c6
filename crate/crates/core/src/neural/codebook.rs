use crate::error::{Error, Result};
use crate::rng::RngStream;

/// One trainable style row per training trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    rows: usize,
    dim: usize,
    table: Vec<f64>,
}

impl Codebook {
    pub fn zeros(rows: usize, dim: usize) -> Self {
        Self {
            rows,
            dim,
            table: vec![0.0; rows * dim],
        }
    }

    /// Entries i.i.d. standard normal.
    pub fn init(rows: usize, dim: usize, rng: &mut RngStream) -> Self {
        let table = (0..rows * dim).map(|_| rng.normal()).collect();
        Self { rows, dim, table }
    }

    pub fn from_table(rows: usize, dim: usize, table: Vec<f64>) -> Result<Self> {
        if table.len() != rows * dim {
            return Err(Error::DimensionMismatch {
                expected: rows * dim,
                got: table.len(),
            });
        }
        Ok(Self { rows, dim, table })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.table[i * self.dim..(i + 1) * self.dim]
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn table_mut(&mut self) -> &mut [f64] {
        &mut self.table
    }
}
