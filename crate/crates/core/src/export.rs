//! Artifact writers: CSV/JSON serialization of pipeline products with
//! atomic file replacement (write to a sibling temp file, then rename) so
//! aborted runs never leave half-written artifacts behind.

use crate::clustering::ClusterPartition;
use crate::error::{LpvError, Result};
use crate::sim::SimOutput;
use crate::tracking::TrackedModes;
use crate::validation::{FrequencyGapSample, GapSample, PoleRow};
use crate::Vec64;
use serde::Serialize;
use std::path::Path;

fn io_err(path: &Path, source: std::io::Error) -> LpvError {
    LpvError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `contents` to `path` atomically: the data lands in a temp file in
/// the same directory and is renamed into place only after a full write.
pub fn write_text_atomic(path: impl AsRef<Path>, contents: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| io_err(path, e))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(&format!(".tmp.{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    std::fs::write(&tmp, contents).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        io_err(path, e)
    })
}

/// Serializes `value` as pretty JSON (trailing newline) and writes it
/// atomically.
pub fn write_json_atomic<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| LpvError::Internal(format!("JSON serialization failed: {e}")))?;
    text.push('\n');
    write_text_atomic(path, &text)
}

/// Eigenvalue trajectories as CSV rows
/// `k,rho,traj_index,re_lambda,im_lambda,stability_label`.
pub fn trajectory_csv(tm: &TrackedModes) -> String {
    let mut out = String::from("k,rho,traj_index,re_lambda,im_lambda,stability_label\n");
    for k in 0..tm.n_points() {
        for (i, tr) in tm.trajectories.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                k,
                tm.rho_grid[k],
                i,
                tr.values[k].re,
                tr.values[k].im,
                tr.kind.as_str()
            ));
        }
    }
    out
}

/// Singular-value trajectories as CSV rows `cluster,j,k,rho,sigma`;
/// `per_cluster[l]` holds the cluster's scheduling grid and its per-point
/// singular-value vectors.
pub fn singular_values_csv(per_cluster: &[(Vec<f64>, Vec<Vec64>)]) -> String {
    let mut out = String::from("cluster,j,k,rho,sigma\n");
    for (l, (rho_grid, s)) in per_cluster.iter().enumerate() {
        for (k, (rho, sk)) in rho_grid.iter().zip(s).enumerate() {
            for j in 0..sk.len() {
                out.push_str(&format!("{l},{j},{k},{rho},{}\n", sk[j]));
            }
        }
    }
    out
}

/// Cluster membership as CSV rows `traj_index,cluster_id`; preserved
/// trajectories (outside every cluster) get cluster id `-1`.
pub fn cluster_assignment_csv(partition: &ClusterPartition) -> String {
    let mut rows: Vec<(usize, i64)> = Vec::new();
    for (cid, members) in partition.clusters.iter().enumerate() {
        for &t in members {
            rows.push((t, cid as i64));
        }
    }
    for &t in &partition.preserved {
        rows.push((t, -1));
    }
    rows.sort_unstable();
    let mut out = String::from("traj_index,cluster_id\n");
    for (t, cid) in rows {
        out.push_str(&format!("{t},{cid}\n"));
    }
    out
}

/// Pointwise ν-gap profile as CSV rows `rho,gap`.
pub fn pointwise_gap_csv(samples: &[GapSample]) -> String {
    let mut out = String::from("rho,gap\n");
    for s in samples {
        out.push_str(&format!("{},{}\n", s.rho, s.gap));
    }
    out
}

/// Frequency-wise ν-gap profile as CSV rows `omega,gap`.
pub fn frequencywise_gap_csv(samples: &[FrequencyGapSample]) -> String {
    let mut out = String::from("omega,gap\n");
    for s in samples {
        out.push_str(&format!("{},{}\n", s.omega, s.gap));
    }
    out
}

/// Simulation trace as CSV rows `t,y_1,…,y_ny`.
pub fn sim_trace_csv(output: &SimOutput) -> String {
    let n_y = output.y.first().map_or(0, |y| y.len());
    let mut out = String::from("t");
    for j in 1..=n_y {
        out.push_str(&format!(",y_{j}"));
    }
    out.push('\n');
    for (t, y) in output.t.iter().zip(&output.y) {
        out.push_str(&format!("{t}"));
        for j in 0..n_y {
            out.push_str(&format!(",{}", y[j]));
        }
        out.push('\n');
    }
    out
}

/// Eigenvalue loci as CSV rows `k,rho,re,im`.
pub fn pole_map_csv(rows: &[PoleRow]) -> String {
    let mut out = String::from("k,rho,re,im\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.k, r.rho, r.re, r.im));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn temp_path(name: &str) -> PathBuf {
        std::env::temp_dir().join(format!("lpvred-export-{}-{name}", std::process::id()))
    }

    #[test]
    fn atomic_write_creates_and_replaces() {
        let path = temp_path("atomic.txt");
        write_text_atomic(&path, "first").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "first");
        write_text_atomic(&path, "second").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "second");
        assert!(!path.with_extension("txt.tmp").exists());
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn atomic_write_creates_parent_dirs() {
        let dir = temp_path("nested-dir");
        let path = dir.join("a/b/out.json");
        write_json_atomic(&path, &serde_json::json!({"x": 1})).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"x\": 1"));
        assert!(text.ends_with('\n'));
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn gap_csv_shapes() {
        let pw = pointwise_gap_csv(&[GapSample { rho: 0.5, gap: 0.01 }]);
        assert_eq!(pw, "rho,gap\n0.5,0.01\n");
        let fw = frequencywise_gap_csv(&[FrequencyGapSample { omega: 1.0, gap: 0.02 }]);
        assert_eq!(fw, "omega,gap\n1,0.02\n");
    }

    #[test]
    fn sim_trace_header_tracks_output_count() {
        let out = SimOutput {
            t: vec![0.0, 0.1],
            y: vec![Vec64::from_vec(vec![1.0, 2.0]), Vec64::from_vec(vec![3.0, 4.0])],
            diverged: None,
        };
        let csv = sim_trace_csv(&out);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,y_1,y_2"));
        assert_eq!(lines.next(), Some("0,1,2"));
        assert_eq!(lines.next(), Some("0.1,3,4"));
    }

    #[test]
    fn cluster_assignment_lists_preserved_as_minus_one() {
        let partition = ClusterPartition {
            clusters: vec![vec![0, 2], vec![1]],
            threshold: 0.5,
            permutation: vec![0, 1, 2, 3],
            ranges: vec![(0, 2), (2, 3)],
            preserved: vec![3],
            preserved_range: (3, 4),
        };
        let csv = cluster_assignment_csv(&partition);
        assert_eq!(csv, "traj_index,cluster_id\n0,0\n1,1\n2,0\n3,-1\n");
    }

    #[test]
    fn pole_map_csv_format() {
        let csv = pole_map_csv(&[PoleRow { k: 0, rho: 0.0, re: -1.0, im: 2.0 }]);
        assert_eq!(csv, "k,rho,re,im\n0,0,-1,2\n");
    }
}
