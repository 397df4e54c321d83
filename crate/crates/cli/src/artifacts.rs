//! Run artifacts: the params file and its JSON sidecar, measurement CSVs,
//! training logs, detection reports, and metrics summaries. Every file
//! carries the config hash for provenance.

use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use qsentry_core::detector::{DetectionReport, MeasurementMatrix};
use qsentry_core::error::{Error, Result};
use qsentry_core::model::{CircuitSpec, EpochStats, ModelParams};

/// Trained parameters as a length-prefixed little-endian array of f64.
pub fn write_params(path: &Path, params: &ModelParams) -> Result<()> {
    let mut bytes = Vec::with_capacity(8 + params.theta.len() * 8);
    bytes.extend_from_slice(&(params.theta.len() as u64).to_le_bytes());
    for value in &params.theta {
        bytes.extend_from_slice(&value.to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_params(path: &Path) -> Result<ModelParams> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 8 {
        return Err(Error::Length(format!(
            "params file {} shorter than its length prefix",
            path.display()
        )));
    }
    let count = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let expected = 8 + count * 8;
    if bytes.len() != expected {
        return Err(Error::Length(format!(
            "params file {} is {} bytes, header promises {expected}",
            path.display(),
            bytes.len()
        )));
    }
    let theta = (0..count)
        .map(|i| f64::from_le_bytes(bytes[8 + i * 8..16 + i * 8].try_into().unwrap()))
        .collect();
    Ok(ModelParams { theta })
}

/// JSON sidecar describing the circuit a params file belongs to.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamsSidecar {
    pub config_hash: String,
    pub spec: CircuitSpec,
    pub param_count: usize,
}

pub fn write_sidecar(path: &Path, sidecar: &ParamsSidecar) -> Result<()> {
    let text = serde_json::to_string_pretty(sidecar)
        .map_err(|e| Error::Format(format!("sidecar serialization: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_sidecar(path: &Path) -> Result<ParamsSidecar> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("sidecar {}: {e}", path.display())))
}

/// Sidecar path convention: `<params>.json` next to the binary file.
pub fn sidecar_path(params_path: &Path) -> PathBuf {
    let mut os = params_path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

/// Measurement matrix as CSV with a provenance comment line and the header
/// `sample_id,z0..z{Q-1}`. Float formatting round-trips exactly.
pub fn write_measurements_csv(
    path: &Path,
    matrix: &MeasurementMatrix,
    config_hash: &str,
) -> Result<()> {
    let q = matrix.values.ncols();
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "# config_hash={config_hash}")?;
    let header: Vec<String> = std::iter::once("sample_id".to_string())
        .chain((0..q).map(|j| format!("z{j}")))
        .collect();
    writeln!(file, "{}", header.join(","))?;
    for (row, &id) in matrix.values.rows().into_iter().zip(&matrix.sample_ids) {
        let cells: Vec<String> = std::iter::once(id.to_string())
            .chain(row.iter().map(|v| format!("{v}")))
            .collect();
        writeln!(file, "{}", cells.join(","))?;
    }
    Ok(())
}

pub fn read_measurements_csv(path: &Path) -> Result<MeasurementMatrix> {
    let text = std::fs::read_to_string(path)?;
    let mut sample_ids = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for line in text.lines() {
        if line.starts_with('#') || line.is_empty() {
            continue;
        }
        if line.starts_with("sample_id") {
            continue;
        }
        let mut cells = line.split(',');
        let id: usize = cells
            .next()
            .ok_or_else(|| Error::Format("empty CSV row".into()))?
            .parse()
            .map_err(|e| Error::Format(format!("sample id: {e}")))?;
        let values: Vec<f64> = cells
            .map(|c| c.parse().map_err(|e| Error::Format(format!("cell '{c}': {e}"))))
            .collect::<Result<_>>()?;
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(Error::Shape(format!(
                    "row width {} != {w} in {}",
                    values.len(),
                    path.display()
                )))
            }
            _ => {}
        }
        sample_ids.push(id);
        rows.push(values);
    }
    let q = width.unwrap_or(0);
    let mut values = Array2::zeros((rows.len(), q));
    for (i, row) in rows.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            values[[i, j]] = v;
        }
    }
    Ok(MeasurementMatrix { values, sample_ids })
}

/// Per-epoch training log CSV.
pub fn write_training_log(path: &Path, history: &[EpochStats], config_hash: &str) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "# config_hash={config_hash}")?;
    writeln!(file, "epoch,mean_loss,holdout_accuracy")?;
    for stat in history {
        let holdout = stat
            .holdout_accuracy
            .map(|v| format!("{v}"))
            .unwrap_or_default();
        writeln!(file, "{},{},{}", stat.epoch, stat.mean_loss, holdout)?;
    }
    Ok(())
}

/// Detection report file: both pipelines plus run identity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectionArtifact {
    pub config_hash: String,
    pub attack: String,
    pub poison_rate: f64,
    pub repeat: u64,
    pub report: DetectionReport,
    pub raw_report: DetectionReport,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Format(format!("json serialization: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// One pipeline's headline numbers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub detection_accuracy: Option<f64>,
    pub f1: Option<f64>,
    pub sc: f64,
    pub rcs: f64,
    pub flagged: usize,
    pub chosen_k: usize,
    pub inconclusive: bool,
}

impl PipelineSummary {
    pub fn from_report(report: &DetectionReport) -> Self {
        Self {
            detection_accuracy: report.detection_accuracy,
            f1: report.f1,
            sc: report.sc,
            rcs: report.rcs,
            flagged: report.flagged_indices.len(),
            chosen_k: report.chosen_k,
            inconclusive: report.inconclusive,
        }
    }
}

/// Metrics summary file for one cell run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub config_hash: String,
    pub attack: String,
    pub poison_rate: f64,
    pub repeat: u64,
    pub ca: f64,
    pub asr: Option<f64>,
    pub actual_poisons: usize,
    pub measurement_pipeline: PipelineSummary,
    pub raw_pipeline: PipelineSummary,
}

fn fmt_opt_pct(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{:.1}%", v * 100.0),
        None => "absent".to_string(),
    }
}

/// The console block for one finished run. `report` re-prints this from the
/// JSON artifact, so the two can never disagree.
pub fn summary_lines(summary: &MetricsSummary) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "run: attack={} rate={:.0}% repeat={}\n",
        summary.attack,
        summary.poison_rate * 100.0,
        summary.repeat
    ));
    out.push_str(&format!("  CA  = {:.4}\n", summary.ca));
    match summary.asr {
        Some(asr) => out.push_str(&format!("  ASR = {asr:.4}\n")),
        None => out.push_str("  ASR = n/a (clean run)\n"),
    }
    for (name, p) in [
        ("measurement", &summary.measurement_pipeline),
        ("raw-pixel  ", &summary.raw_pipeline),
    ] {
        out.push_str(&format!(
            "  [{name}] DA={} F1={} SC={:.4} RCS={:.4} K={} flagged={}{}\n",
            fmt_opt_pct(p.detection_accuracy),
            fmt_opt_pct(p.f1),
            p.sc,
            p.rcs,
            p.chosen_k,
            p.flagged,
            if p.inconclusive { " [inconclusive]" } else { "" },
        ));
    }
    out
}

/// Binary PGM (P5) writer for the visual-audit dumps.
pub fn write_pgm(path: &Path, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::Shape(format!(
            "{}x{width} PGM needs {} pixels, got {}",
            height,
            width * height,
            pixels.len()
        )));
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(file, "P5\n{width} {height}\n255\n")?;
    file.write_all(pixels)?;
    Ok(())
}

/// Features in [0, 1] rendered to PGM bytes.
pub fn features_to_pgm(path: &Path, features: &[f64], side: usize) -> Result<()> {
    let pixels: Vec<u8> = features
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    write_pgm(path, side, side, &pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use qsentry_core::detector::MeasurementMatrix;

    #[test]
    fn params_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");
        let params = ModelParams {
            theta: vec![0.25, -1.75, std::f64::consts::PI, 1e-300],
        };
        write_params(&path, &params).unwrap();
        let back = read_params(&path).unwrap();
        assert_eq!(params.theta, back.theta);
        // Bit-exact on disk: length prefix + 4 little-endian doubles.
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 8 + 4 * 8);
        assert_eq!(u64::from_le_bytes(bytes[..8].try_into().unwrap()), 4);
    }

    #[test]
    fn truncated_params_file_is_length_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.bin");
        let params = ModelParams {
            theta: vec![1.0, 2.0],
        };
        write_params(&path, &params).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.pop();
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_params(&path), Err(Error::Length(_))));
    }

    #[test]
    fn measurements_csv_round_trips_bit_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let values = ndarray::array![
            [0.1234567890123456, -0.9999999999999, 1.0],
            [5e-17, 0.5, -0.25]
        ];
        let matrix = MeasurementMatrix {
            values: values.clone(),
            sample_ids: vec![0, 1],
        };
        write_measurements_csv(&path, &matrix, "deadbeef").unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# config_hash=deadbeef\nsample_id,z0,z1,z2\n"));
        let back = read_measurements_csv(&path).unwrap();
        assert_eq!(back.sample_ids, vec![0, 1]);
        for (a, b) in values.iter().zip(back.values.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn pgm_has_correct_header_and_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let features: Vec<f64> = (0..256).map(|i| i as f64 / 255.0).collect();
        features_to_pgm(&path, &features, 16).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n16 16\n255\n"));
        assert_eq!(bytes.len(), 13 + 256);
        assert_eq!(bytes[13], 0);
    }
}
