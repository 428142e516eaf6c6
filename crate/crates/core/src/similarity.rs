//! Trajectory dissimilarity `ν` and the weights `W = exp(-β ν)`.
//!
//! Trajectories are compared state-by-state after padding every state
//! sequence to the dataset's longest one by repeating its final state. Each
//! row of the matrix is normalized by its own maximum, so `ν[i][j]` is read
//! with `i` as the reference trajectory and the matrix is not symmetric in
//! general.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::par::Exec;
use crate::types::{Dataset, State, Trajectory};

const MAGIC: &[u8; 6] = b"SWRNU1";

pub fn pad_states(traj: &Trajectory, len: usize) -> Result<Vec<State>> {
    let n = traj.states.len();
    if len < n {
        return Err(Error::PadTooShort { pad: len, len: n });
    }
    let mut out = Vec::with_capacity(len);
    out.extend_from_slice(&traj.states);
    let last = *traj.states.last().ok_or(Error::PadTooShort { pad: len, len: 0 })?;
    out.resize(len, last);
    Ok(out)
}

/// Euclidean norm of the stacked per-timestep differences.
pub fn raw_distance(a: &[State], b: &[State]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(p, q)| {
            let (dx, dy) = (p.x - q.x, p.y - q.y);
            dx * dx + dy * dy
        })
        .sum::<f64>()
        .sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightParams {
    pub beta: f64,
}

pub fn weight(nu: f64, params: WeightParams) -> f64 {
    (-params.beta * nu).exp()
}

#[derive(Clone, Debug, PartialEq)]
pub struct DissimilarityMatrix {
    n: usize,
    pad_length: usize,
    nu: Vec<f64>,
}

impl DissimilarityMatrix {
    /// Builds a matrix from explicit row-major entries.
    pub fn from_rows(n: usize, pad_length: usize, nu: Vec<f64>) -> Result<Self> {
        if nu.len() != n * n {
            return Err(Error::LengthMismatch(nu.len(), n * n));
        }
        Ok(Self { n, pad_length, nu })
    }

    /// `ν(i, j) = 1(i != j)`, the ZBC limit.
    pub fn indicator(n: usize) -> Self {
        let nu = (0..n * n)
            .map(|k| if k / n == k % n { 0.0 } else { 1.0 })
            .collect();
        Self { n, pad_length: 0, nu }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn pad_length(&self) -> usize {
        self.pad_length
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.nu[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.nu[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.nu
    }

    pub fn weight(&self, i: usize, j: usize, beta: f64) -> f64 {
        weight(self.get(i, j), WeightParams { beta })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        w.write_all(&(self.pad_length as u64).to_le_bytes())?;
        for v in &self.nu {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a dissimilarity cache (bad magic)".into()));
        }
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let n = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let pad_length = u64::from_le_bytes(word) as usize;
        let mut nu = Vec::with_capacity(n * n);
        for _ in 0..n * n {
            r.read_exact(&mut word)?;
            nu.push(f64::from_le_bytes(word));
        }
        Self::from_rows(n, pad_length, nu)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        for i in 0..self.n {
            let line: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn dissimilarity_matrix(ds: &Dataset) -> Result<DissimilarityMatrix> {
    dissimilarity_matrix_with(ds, Exec::default())
}

/// Row-parallel fill of the normalized matrix.
pub fn dissimilarity_matrix_with(ds: &Dataset, exec: Exec) -> Result<DissimilarityMatrix> {
    let n = ds.len();
    if n < 2 {
        return Err(Error::InvalidDataset(
            "dissimilarity needs at least two trajectories".into(),
        ));
    }
    let pad = ds.max_states();
    let padded: Vec<Vec<State>> = ds
        .trajectories
        .iter()
        .map(|t| pad_states(t, pad))
        .collect::<Result<_>>()?;
    let rows = exec.try_map_indexed(n, |i| {
        let mut row: Vec<f64> = padded
            .iter()
            .map(|other| raw_distance(&padded[i], other))
            .collect::<Result<_>>()?;
        row[i] = 0.0;
        let max = row.iter().copied().fold(0.0, f64::max);
        if max <= 0.0 {
            return Err(Error::DegenerateDataset(i));
        }
        for (j, v) in row.iter_mut().enumerate() {
            *v = if j == i { 0.0 } else { *v / max };
        }
        Ok(row)
    })?;
    Ok(DissimilarityMatrix {
        n,
        pad_length: pad,
        nu: rows.concat(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Action, DatasetMeta};
    use proptest::prelude::*;

    fn traj(id: usize, pts: &[(f64, f64)]) -> Trajectory {
        Trajectory {
            id,
            states: pts.iter().map(|&(x, y)| State::new(x, y)).collect(),
            actions: vec![Action::default(); pts.len() - 1],
            checkpoints: vec![],
            success: false,
        }
    }

    fn dataset(ts: Vec<Trajectory>) -> Dataset {
        Dataset::new(ts, DatasetMeta::default()).unwrap()
    }

    #[test]
    fn padding() {
        let t = traj(0, &[(0.0, 0.0), (1.0, 0.0)]);
        let p = pad_states(&t, 4).unwrap();
        assert_eq!(p, vec![State::new(0.0, 0.0), State::new(1.0, 0.0), State::new(1.0, 0.0), State::new(1.0, 0.0)]);
        assert_eq!(pad_states(&t, 2).unwrap(), t.states);
        assert_eq!(pad_states(&t, 3).unwrap().len(), 3);
        assert!(matches!(pad_states(&t, 1), Err(Error::PadTooShort { .. })));
    }

    #[test]
    fn raw_distances() {
        let a = [State::new(0.0, 0.0), State::new(1.0, 0.0)];
        let b = [State::new(0.0, 0.0), State::new(0.0, 1.0)];
        let c = [State::new(0.0, 0.0), State::new(2.0, 0.0)];
        assert_eq!(raw_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(raw_distance(&a, &b).unwrap(), 2f64.sqrt());
        assert_eq!(raw_distance(&a, &c).unwrap(), 1.0);
        assert!(raw_distance(&a, &a[..1]).is_err());
    }

    #[test]
    fn hand_example_row() {
        // Row 0 against {itself, b, c}: raw [0, √2, 1] normalized by √2.
        let ds = dataset(vec![
            traj(0, &[(0.0, 0.0), (1.0, 0.0)]),
            traj(1, &[(0.0, 0.0), (0.0, 1.0)]),
            traj(2, &[(0.0, 0.0), (2.0, 0.0)]),
        ]);
        let m = dissimilarity_matrix(&ds).unwrap();
        let expected = [0.0, 1.0, 1.0 / 2f64.sqrt()];
        for (got, want) in m.row(0).iter().zip(expected) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn duplicate_dataset_is_degenerate() {
        let ds = dataset(vec![traj(0, &[(0.0, 0.0), (1.0, 0.0)]), traj(1, &[(0.0, 0.0), (1.0, 0.0)])]);
        assert!(matches!(dissimilarity_matrix(&ds), Err(Error::DegenerateDataset(0))));
    }

    #[test]
    fn weights() {
        for nu in [0.0, 0.3, 1.0] {
            assert_eq!(weight(nu, WeightParams { beta: 0.0 }), 1.0);
        }
        for beta in [0.0, 1.0, 10.0, 100.0] {
            assert_eq!(weight(0.0, WeightParams { beta }), 1.0);
        }
        let w = weight(1.0, WeightParams { beta: 10.0 });
        assert!((w - 4.5399929762484854e-5).abs() < 1e-18);
    }

    #[test]
    fn indicator_limit() {
        let m = DissimilarityMatrix::indicator(5);
        for i in 0..5 {
            for j in 0..5 {
                let w = m.weight(i, j, 100.0);
                if i == j {
                    assert_eq!(w, 1.0);
                } else {
                    assert!(w < 1e-40);
                }
            }
        }
    }

    #[test]
    fn cache_roundtrip() {
        let ds = dataset(vec![
            traj(0, &[(0.0, 0.0), (1.0, 0.0)]),
            traj(1, &[(0.0, 0.0), (0.0, 1.0), (0.5, 0.5)]),
            traj(2, &[(0.0, 0.0), (2.0, 0.0)]),
        ]);
        let m = dissimilarity_matrix(&ds).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..6], b"SWRNU1");
        assert_eq!(buf.len(), 6 + 16 + 9 * 8);
        assert_eq!(DissimilarityMatrix::read_from(buf.as_slice()).unwrap(), m);
        assert!(DissimilarityMatrix::read_from(&b"SWRCK1xxxxxxxxxxxxxxxx"[..]).is_err());
    }

    fn random_dataset() -> impl Strategy<Value = Dataset> {
        prop::collection::vec(
            prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..12),
            2..8,
        )
        .prop_map(|trajs| {
            dataset(trajs.iter().enumerate().map(|(i, pts)| traj(i, pts)).collect())
        })
    }

    proptest! {
        #[test]
        fn matrix_axioms(ds in random_dataset()) {
            let m = dissimilarity_matrix(&ds).unwrap();
            for i in 0..m.len() {
                prop_assert_eq!(m.get(i, i), 0.0);
                let max = m.row(i).iter().copied().fold(f64::MIN, f64::max);
                prop_assert!((max - 1.0).abs() <= 1e-12);
                prop_assert!(m.row(i).iter().all(|v| (0.0..=1.0).contains(v)));
            }
        }

        #[test]
        fn permutation_commutes(ds in random_dataset(), seed in any::<u64>()) {
            let n = ds.len();
            let mut perm: Vec<usize> = (0..n).collect();
            let mut rng = crate::rng::RngStream::new(seed, "perm");
            for i in (1..n).rev() {
                perm.swap(i, rng.below(i + 1));
            }
            let permuted = dataset(
                perm.iter().enumerate().map(|(new, &old)| {
                    let mut t = ds.trajectories[old].clone();
                    t.id = new;
                    t
                }).collect(),
            );
            let m = dissimilarity_matrix(&ds).unwrap();
            let mp = dissimilarity_matrix(&permuted).unwrap();
            for a in 0..n {
                for b in 0..n {
                    prop_assert_eq!(mp.get(a, b), m.get(perm[a], perm[b]));
                }
            }
        }

        #[test]
        fn weight_monotone(nu1 in 0.0f64..1.0, nu2 in 0.0f64..1.0, beta in 0.0f64..50.0) {
            let (lo, hi) = if nu1 <= nu2 { (nu1, nu2) } else { (nu2, nu1) };
            let p = WeightParams { beta };
            prop_assert!(weight(lo, p) >= weight(hi, p));
            prop_assert!(weight(hi, p) > 0.0 && weight(lo, p) <= 1.0);
            let sharper = WeightParams { beta: beta + 1.0 };
            prop_assert!(weight(hi, sharper) <= weight(hi, p));
        }

        #[test]
        fn strategies_agree(ds in random_dataset()) {
            prop_assert_eq!(
                dissimilarity_matrix_with(&ds, Exec::Sequential).unwrap(),
                dissimilarity_matrix_with(&ds, Exec::Parallel).unwrap()
            );
        }
    }
}
