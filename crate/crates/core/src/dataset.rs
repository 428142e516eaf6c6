//! JSON Lines dataset files.
//!
//! Line 1 is a header `{"format":"stylebc-dataset","version":1,"meta":{..}}`;
//! every following line is one trajectory object. Floats are written with
//! shortest round-trip formatting, so a read-back is bit-exact.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Dataset, DatasetMeta, Trajectory};

pub const FORMAT: &str = "stylebc-dataset";
pub const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    meta: DatasetMeta,
}

pub fn write_dataset<W: Write>(ds: &Dataset, mut w: W) -> Result<()> {
    let header = Header {
        format: FORMAT.to_owned(),
        version: VERSION,
        meta: ds.meta.clone(),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for t in &ds.trajectories {
        write_trajectory_line(t, &mut w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory_line<W: Write>(t: &Trajectory, mut w: W) -> Result<()> {
    serde_json::to_writer(&mut w, t)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn read_dataset<R: Read>(r: R) -> Result<Dataset> {
    let reader = BufReader::new(r);
    let mut lines = reader.lines().enumerate();
    let header: Header = loop {
        match lines.next() {
            Some((_, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                break serde_json::from_str(&line)?;
            }
            None => return Err(Error::Format("empty dataset file".into())),
        }
    };
    if header.format != FORMAT || header.version != VERSION {
        return Err(Error::Format(format!(
            "expected {FORMAT} v{VERSION}, found {} v{}",
            header.format, header.version
        )));
    }
    let mut trajectories = Vec::new();
    for (lineno, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Trajectory = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        trajectories.push(t);
    }
    Dataset::new(trajectories, header.meta)
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_dataset(ds, BufWriter::new(File::create(path)?))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    read_dataset(File::open(path)?)
}

/// Appends one trajectory to a dataset file, creating the file (with a
/// header built from `meta`) if it does not exist yet.
pub fn append_trajectory(path: impl AsRef<Path>, meta: &DatasetMeta, t: &Trajectory) -> Result<()> {
    let path = path.as_ref();
    let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
    let mut f = BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?);
    if fresh {
        let header = Header {
            format: FORMAT.to_owned(),
            version: VERSION,
            meta: meta.clone(),
        };
        serde_json::to_writer(&mut f, &header)?;
        f.write_all(b"\n")?;
    }
    write_trajectory_line(t, &mut f)?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Action, State};
    use proptest::prelude::*;

    fn sample(n: usize, jitter: f64) -> Dataset {
        let trajectories = (0..n)
            .map(|id| Trajectory {
                id,
                states: vec![
                    State::new(0.1 * id as f64 + jitter, 1.0 / 3.0),
                    State::new(std::f64::consts::PI, 2.0 + jitter),
                ],
                actions: vec![Action::new(-0.7, 1e-17)],
                checkpoints: vec![3, 0],
                success: true,
            })
            .collect();
        Dataset::new(
            trajectories,
            DatasetMeta {
                maze_name: "medium_maze".into(),
                generator: "test".into(),
                ground_truth_k: Some(1),
                seed: 9,
            },
        )
        .unwrap()
    }

    #[test]
    fn header_shape() {
        let mut buf = Vec::new();
        write_dataset(&sample(1, 0.0), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first = text.lines().next().unwrap();
        let v: serde_json::Value = serde_json::from_str(first).unwrap();
        assert_eq!(v["format"], "stylebc-dataset");
        assert_eq!(v["version"], 1);
        assert_eq!(v["meta"]["ground_truth_K"], 1);
        let second: serde_json::Value = serde_json::from_str(text.lines().nth(1).unwrap()).unwrap();
        assert_eq!(second["states"][1][0], std::f64::consts::PI);
        assert_eq!(second["checkpoints"], serde_json::json!([3, 0]));
    }

    #[test]
    fn rejects_wrong_format() {
        let text = "{\"format\":\"other\",\"version\":1,\"meta\":{\"maze_name\":\"m\",\"generator\":\"g\",\"ground_truth_K\":null,\"seed\":0}}\n";
        assert!(matches!(read_dataset(text.as_bytes()), Err(Error::Format(_))));
    }

    #[test]
    fn append_creates_then_extends() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.jsonl");
        let ds = sample(2, 0.0);
        for t in &ds.trajectories {
            append_trajectory(&path, &ds.meta, t).unwrap();
        }
        assert_eq!(load_dataset(&path).unwrap(), ds);
    }

    proptest! {
        #[test]
        fn roundtrip_is_bit_exact(n in 1usize..6, jitter in -1e3f64..1e3) {
            let ds = sample(n, jitter);
            let mut buf = Vec::new();
            write_dataset(&ds, &mut buf).unwrap();
            let back = read_dataset(buf.as_slice()).unwrap();
            prop_assert_eq!(back, ds);
        }
    }
}
