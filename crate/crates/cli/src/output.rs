//! CSV and JSON files written for external plotting, and their readers.
//!
//! Floats are written in scientific notation with 17 significant digits so
//! that re-reading a file reproduces every value bit-exactly. Missing values
//! are written as explicit markers, never as sentinel numbers.

use std::fs;
use std::io::Write;
use std::path::Path;

use rewardlab_core::{
    OutputRecord, PreferenceDataset, PreferenceExample, Trajectory, ValueEstimate,
};
use serde::Serialize;
use tempfile::NamedTempFile;

use crate::error::{CliError, Result};

/// A hitting time that the horizon ended before.
pub const NOT_REACHED: &str = "not_reached";
/// A run the sweep did not perform.
pub const NOT_RUN: &str = "not_run";
/// A value with no meaning for the row, e.g. a bound whose hypotheses fail.
pub const NOT_APPLICABLE: &str = "na";

pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x == f64::INFINITY {
        "inf".into()
    } else if x == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{x:.16e}")
    }
}

pub fn parse_f64(field: &str) -> Option<f64> {
    match field {
        "nan" => Some(f64::NAN),
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => field.parse().ok(),
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::parse(path, e.to_string()))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

fn csv_bytes(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| CliError::csv(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| CliError::csv(path, e))?;
    }
    w.into_inner()
        .map_err(|e| CliError::parse(path, e.to_string()))
}

pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    write_atomic(path, &csv_bytes(path, header, rows)?)
}

/// `step, time, prob_0 .. prob_{n-1}, v_proxy, v_truth, reward_variance_proxy`.
pub fn trajectory_header(n: usize) -> Vec<String> {
    let mut h = vec!["step".to_string(), "time".to_string()];
    h.extend((0..n).map(|i| format!("prob_{i}")));
    h.extend(["v_proxy", "v_truth", "reward_variance_proxy"].map(String::from));
    h
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let n = traj.probs.first().map_or(0, Vec::len);
    let rows: Vec<Vec<String>> = (0..traj.len())
        .map(|i| {
            let mut row = vec![traj.steps[i].to_string(), fmt_f64(traj.times[i])];
            row.extend(traj.probs[i].iter().map(|p| fmt_f64(*p)));
            row.push(fmt_f64(traj.v_proxy[i]));
            row.push(fmt_f64(traj.v_truth[i]));
            row.push(fmt_f64(traj.reward_variance_proxy[i]));
            row
        })
        .collect();
    write_csv(path, &trajectory_header(n), &rows)
}

fn open_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::Reader::from_path(path).map_err(|e| CliError::csv(path, e))
}

fn header_of(path: &Path, r: &mut csv::Reader<fs::File>) -> Result<Vec<String>> {
    Ok(r.headers()
        .map_err(|e| CliError::csv(path, e))?
        .iter()
        .map(String::from)
        .collect())
}

fn float_at(path: &Path, line: usize, rec: &csv::StringRecord, i: usize) -> Result<f64> {
    let field = rec.get(i).unwrap_or_default();
    parse_f64(field)
        .ok_or_else(|| CliError::parse(path, format!("row {line}: {field:?} is not a number")))
}

/// Reads a file written by [`write_trajectory`]. Parameter snapshots and
/// the monotonicity counter are not part of the file.
pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let mut r = open_reader(path)?;
    let header = header_of(path, &mut r)?;
    let n = header
        .len()
        .checked_sub(5)
        .ok_or_else(|| CliError::parse(path, "too few columns"))?;
    if header != trajectory_header(n) {
        return Err(CliError::parse(
            path,
            format!("unexpected header {header:?}"),
        ));
    }
    let mut traj = Trajectory::default();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::csv(path, e))?;
        let step = rec[0]
            .parse()
            .map_err(|_| CliError::parse(path, format!("row {line}: bad step {:?}", &rec[0])))?;
        traj.steps.push(step);
        traj.times.push(float_at(path, line, &rec, 1)?);
        traj.probs.push(
            (0..n)
                .map(|k| float_at(path, line, &rec, 2 + k))
                .collect::<Result<_>>()?,
        );
        traj.v_proxy.push(float_at(path, line, &rec, 2 + n)?);
        traj.v_truth.push(float_at(path, line, &rec, 3 + n)?);
        traj.reward_variance_proxy
            .push(float_at(path, line, &rec, 4 + n)?);
    }
    Ok(traj)
}

/// Two-column `time, tv` series.
pub fn write_tv(path: &Path, times: &[f64], tv: &[f64]) -> Result<()> {
    let rows: Vec<Vec<String>> = times
        .iter()
        .zip(tv)
        .map(|(t, d)| vec![fmt_f64(*t), fmt_f64(*d)])
        .collect();
    write_csv(path, &["time".to_string(), "tv".to_string()], &rows)
}

pub const DATASET_HEADER: [&str; 6] = [
    "example_id",
    "role",
    "proxy_score",
    "truth_score",
    "length",
    "log_prob",
];

pub const VALUES_HEADER: [&str; 3] = ["example_id", "v_bar", "n_samples"];

fn expect_header(path: &Path, got: &[String], want: &[&str]) -> Result<()> {
    if got.iter().map(String::as_str).ne(want.iter().copied()) {
        return Err(CliError::parse(
            path,
            format!("expected header {}, got {}", want.join(","), got.join(",")),
        ));
    }
    Ok(())
}

/// One row per output; `role` is `preferred` (exactly one per example) or
/// `dispreferred`. Rows of an example need not be adjacent; examples keep
/// the order of their first row.
pub fn read_dataset(path: &Path) -> Result<PreferenceDataset> {
    let mut r = open_reader(path)?;
    expect_header(path, &header_of(path, &mut r)?, &DATASET_HEADER)?;
    let mut order: Vec<String> = Vec::new();
    let mut groups: std::collections::HashMap<String, (Option<OutputRecord>, Vec<OutputRecord>)> =
        Default::default();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::csv(path, e))?;
        let id = rec[0].to_string();
        let length: u32 = rec[4]
            .parse()
            .map_err(|_| CliError::parse(path, format!("row {line}: bad length {:?}", &rec[4])))?;
        if rec[5].is_empty() {
            return Err(CliError::parse(
                path,
                format!("row {line}: log_prob is missing"),
            ));
        }
        let out = OutputRecord::new(
            float_at(path, line, &rec, 2)?,
            float_at(path, line, &rec, 3)?,
            length,
            float_at(path, line, &rec, 5)?,
        )
        .map_err(|e| CliError::parse(path, format!("row {line}: {e}")))?;
        let entry = groups.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            (None, Vec::new())
        });
        match &rec[1] {
            "preferred" => {
                if entry.0.replace(out).is_some() {
                    return Err(CliError::parse(
                        path,
                        format!("example {id}: two preferred outputs"),
                    ));
                }
            }
            "dispreferred" => entry.1.push(out),
            other => {
                return Err(CliError::parse(
                    path,
                    format!("row {line}: role must be preferred or dispreferred, got {other:?}"),
                ))
            }
        }
    }
    let mut examples = Vec::with_capacity(order.len());
    for id in order {
        let (pref, dis) = groups.remove(&id).expect("grouped above");
        let pref = pref
            .ok_or_else(|| CliError::parse(path, format!("example {id}: no preferred output")))?;
        examples.push(
            PreferenceExample::new(id, pref, dis)
                .map_err(|e| CliError::parse(path, e.to_string()))?,
        );
    }
    PreferenceDataset::new(examples).map_err(|e| CliError::parse(path, e.to_string()))
}

pub fn read_values(path: &Path) -> Result<Vec<ValueEstimate>> {
    let mut r = open_reader(path)?;
    expect_header(path, &header_of(path, &mut r)?, &VALUES_HEADER)?;
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::csv(path, e))?;
        let n_samples = rec[2].parse().map_err(|_| {
            CliError::parse(path, format!("row {line}: bad n_samples {:?}", &rec[2]))
        })?;
        out.push(ValueEstimate {
            example_id: rec[0].to_string(),
            v_bar: float_at(path, line, &rec, 1)?,
            n_samples,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_trajectory() -> Trajectory {
        Trajectory {
            steps: vec![0, 10, 20],
            times: vec![0.0, 1.0, 2.0000000000000004],
            probs: vec![
                vec![0.1, 0.9],
                vec![0.30000000000000004, 0.7],
                vec![1e-300, 1.0],
            ],
            v_proxy: vec![0.1, 0.2, 1.0 / 3.0],
            v_truth: vec![-0.5, 0.0, 0.9999999999999999],
            reward_variance_proxy: vec![0.25, 5e-324, 0.0],
            ..Trajectory::default()
        }
    }

    #[test]
    fn trajectory_file_shape_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let traj = small_trajectory();
        write_trajectory(&path, &traj).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(
            lines[0],
            "step,time,prob_0,prob_1,v_proxy,v_truth,reward_variance_proxy"
        );
        let back = read_trajectory(&path).unwrap();
        assert_eq!(back, traj);
        for (a, b) in back.v_proxy.iter().zip(&traj.v_proxy) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn seventeen_significant_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(-2.5), "-2.5000000000000000e0");
        for x in [0.1, 1.0 / 3.0, 5e-324, f64::MAX, -1e-17, f64::INFINITY] {
            assert_eq!(parse_f64(&fmt_f64(x)).unwrap().to_bits(), x.to_bits());
        }
    }

    #[test]
    fn dataset_rows_group_by_example() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        fs::write(
            &path,
            "example_id,role,proxy_score,truth_score,length,log_prob\n\
             a,preferred,1.0,1.0,3,-2.0\n\
             b,dispreferred,0.5,0.0,4,-1.0\n\
             a,dispreferred,0.2,0.0,2,-1.5\n\
             b,preferred,0.4,1.0,2,-0.5\n",
        )
        .unwrap();
        let ds = read_dataset(&path).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.examples()[0].example_id, "a");
        assert!(ds.examples()[0].ranked_correctly());
        assert!(!ds.examples()[1].ranked_correctly());
    }

    #[test]
    fn dataset_errors_name_the_problem() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let write = |body: &str| {
            fs::write(
                &path,
                format!("example_id,role,proxy_score,truth_score,length,log_prob\n{body}"),
            )
            .unwrap()
        };
        write("a,preferred,1.0,1.0,3,\na,dispreferred,0,0,1,-1\n");
        assert!(read_dataset(&path)
            .unwrap_err()
            .to_string()
            .contains("log_prob is missing"));
        write("a,dispreferred,1.0,1.0,3,-1\n");
        assert!(read_dataset(&path)
            .unwrap_err()
            .to_string()
            .contains("no preferred"));
        write("a,best,1.0,1.0,3,-1\n");
        assert!(read_dataset(&path)
            .unwrap_err()
            .to_string()
            .contains("role"));
    }
}
