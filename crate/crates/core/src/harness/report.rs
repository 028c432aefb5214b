use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::{HarnessError, MseReport, SweepRow, WeightTable};

fn num(x: f64) -> String {
    format!("{x:.8e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn header(report: &MseReport) -> Vec<String> {
    let mut h = vec!["step".to_string(), "run".into(), "algorithm".into()];
    h.extend((1..=report.n_sensors).map(|i| format!("mse_local_{i}")));
    h.extend(["mse_fused".into(), "trace_P".into(), "delta_achieved".into()]);
    if report.trace_delta_p.is_some() {
        h.push("trace_delta_P".into());
    }
    h
}

/// Writes the per-(step, run) rows followed by one `avg,avg` summary row.
/// An empty report produces the header only.
pub fn write_csv<W: Write>(report: &MseReport, writer: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header(report))?;
    let with_dp = report.trace_delta_p.is_some();
    let alg = report.algorithm.as_str();
    for row in &report.rows {
        let mut rec = vec![row.step.to_string(), row.run.to_string(), alg.to_string()];
        rec.extend(row.local.iter().copied().map(num));
        rec.push(num(row.fused));
        rec.push(num(row.trace_p));
        rec.push(opt(row.delta_achieved));
        if with_dp {
            rec.push(opt(row.trace_delta_p));
        }
        w.write_record(&rec)?;
    }
    if !report.rows.is_empty() {
        let mut rec = vec!["avg".to_string(), "avg".into(), alg.to_string()];
        rec.extend((0..report.n_sensors).map(|i| num(report.avg_local(i))));
        rec.push(num(report.avg_fused()));
        rec.push(num(report.avg_trace_p()));
        rec.push(opt(report.max_delta_achieved()));
        if with_dp {
            rec.push(opt(report.avg_trace_delta_p()));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>, HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })
}

pub fn emit_csv(report: &MseReport, path: &Path) -> Result<(), HarnessError> {
    write_csv(report, create(path)?)
}

/// One row per (algorithm, weight vector).
pub fn write_weight_csv<W: Write>(table: &WeightTable, writer: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(writer);
    let m = table.weights.first().map_or(0, |w| w.len());
    let mut h = vec!["algorithm".to_string(), "weights".into(), "mse_fused".into()];
    h.extend((1..=m).map(|i| format!("mse_local_{i}")));
    w.write_record(&h)?;
    for (a, alg) in table.algorithms.iter().enumerate() {
        for (j, weights) in table.weights.iter().enumerate() {
            let mut rec = vec![alg.to_string(), weights.to_string(), num(table.fused[a][j])];
            rec.extend(table.local[a][j].iter().copied().map(num));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], writer: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(writer);
    let m = rows.first().map_or(0, |r| r.mse_local.len());
    let mut h = vec![
        "algorithm".to_string(),
        "epsilon".into(),
        "delta".into(),
        "eps0".into(),
        "mse_fused".into(),
    ];
    h.extend((1..=m).map(|i| format!("mse_local_{i}")));
    h.push("max_delta_achieved".into());
    w.write_record(&h)?;
    for r in rows {
        let mut rec = vec![
            r.algorithm.to_string(),
            num(r.params.epsilon()),
            num(r.params.delta()),
            num(r.params.eps0()),
            num(r.mse_fused),
        ];
        rec.extend(r.mse_local.iter().copied().map(num));
        rec.push(opt(r.max_delta_achieved));
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::Algorithm;
    use crate::harness::{run_experiment, ExperimentConfig};

    fn csv_of(report: &MseReport) -> String {
        let mut buf = Vec::new();
        write_csv(report, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn empty_report_is_header_only() {
        let text = csv_of(&MseReport::empty(Algorithm::Alg1, 2));
        assert_eq!(
            text,
            "step,run,algorithm,mse_local_1,mse_local_2,mse_fused,trace_P,delta_achieved\n"
        );
    }

    #[test]
    fn rows_and_summary() {
        let cfg = ExperimentConfig {
            n_runs: 3,
            horizon: 4,
            with_delta_p: true,
            ..ExperimentConfig::tracking()
        };
        let report = run_experiment(&cfg).unwrap();
        let text = csv_of(&report);
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 1 + 12 + 1);
        assert!(lines[0].ends_with(",trace_delta_P"));
        assert!(lines[1].starts_with("1,0,alg1,"));
        assert!(lines[4].starts_with("2,0,alg1,"));
        assert!(lines[13].starts_with("avg,avg,alg1,"));
        assert!(lines.iter().all(|l| l.split(',').count() == 9));
    }

    #[test]
    fn nonprivate_leaves_delta_blank() {
        let cfg = ExperimentConfig {
            algorithm: Algorithm::NonPrivate,
            n_runs: 1,
            horizon: 2,
            ..ExperimentConfig::tracking()
        };
        let text = csv_of(&run_experiment(&cfg).unwrap());
        for line in text.lines().skip(1) {
            assert!(line.ends_with(','), "{line}");
        }
    }

    #[test]
    fn emit_creates_parent_dirs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a/b/out.csv");
        emit_csv(&MseReport::empty(Algorithm::Alg2, 2), &path).unwrap();
        assert!(std::fs::read_to_string(path).unwrap().starts_with("step,run,algorithm"));
    }
}
