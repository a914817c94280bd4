//! On-disk formats: trajectories, spectra, angle densities, layouts and trained models.

use anyhow::{bail, ensure, Context, Result};
use qrc_core::dynamics::{Scaler, SystemSpec, TimeBase, Trajectory};
use qrc_core::quantum::{CircuitLayout, Encoding};
use qrc_core::reservoir::{ReadoutMatrix, ReservoirConfig};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Writes through a sibling temporary file and a rename, creating parent directories.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let name = path.file_name().with_context(|| format!("{} has no file name", path.display()))?;
    let tmp = dir.join(format!(".{}.tmp", name.to_string_lossy()));
    let mut f = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value)?;
    text.push(b'\n');
    write_atomic(path, &text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Builds a CSV document in memory from a header and rows of cells.
pub fn csv_bytes<I, R>(header: &[&str], rows: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.into_iter().collect::<Vec<_>>())?;
    }
    Ok(w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)
}

/// Shortest representation that parses back to the same value.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Sidecar metadata of a trajectory CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub system: SystemSpec,
    pub time: TimeBase,
    pub n_samples: usize,
    pub seed: u64,
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// `t,x1..xD` with 17 significant digits, plus a JSON sidecar next to it.
pub fn write_trajectory(path: &Path, traj: &Trajectory, system: &SystemSpec, seed: u64) -> Result<()> {
    let mut header = vec!["t".to_string()];
    header.extend((1..=traj.dim).map(|i| format!("x{i}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows = traj.rows().enumerate().map(|(i, x)| {
        std::iter::once(format!("{:.16e}", i as f64 * traj.time.dt)).chain(x.iter().map(|v| format!("{v:.16e}")))
    });
    write_atomic(path, &csv_bytes(&header, rows)?)?;
    let meta = TrajectoryMeta { system: system.clone(), time: traj.time, n_samples: traj.len(), seed };
    write_json(&sidecar_path(path), &meta)
}

pub fn read_trajectory(path: &Path) -> Result<(Trajectory, TrajectoryMeta)> {
    let meta: TrajectoryMeta = read_json(&sidecar_path(path))?;
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let dim = r.headers()?.len().checked_sub(1).filter(|&d| d > 0).context("trajectory needs t plus one column")?;
    ensure!(dim == meta.system.dim, "{} has {dim} state columns, sidecar says {}", path.display(), meta.system.dim);
    let mut states = Vec::with_capacity(meta.n_samples * dim);
    for (i, rec) in r.records().enumerate() {
        let rec = rec.with_context(|| format!("{} row {}", path.display(), i + 1))?;
        for cell in rec.iter().skip(1) {
            states.push(cell.trim().parse::<f64>().with_context(|| format!("{} row {}: {cell:?}", path.display(), i + 1))?);
        }
    }
    let traj = Trajectory::new(states, dim, meta.time)?;
    ensure!(traj.len() == meta.n_samples, "sample count does not match the sidecar");
    Ok((traj, meta))
}

/// `exponent_index,value`, indices from 1.
pub fn spectrum_csv(exponents: &[f64]) -> Result<Vec<u8>> {
    csv_bytes(&["exponent_index", "value"], exponents.iter().enumerate().map(|(i, v)| [(i + 1).to_string(), num(*v)]))
}

pub fn read_spectrum(path: &Path) -> Result<Vec<f64>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        ensure!(rec.len() == 2, "spectrum rows have two columns");
        ensure!(rec[0].parse::<usize>()? == out.len() + 1, "exponent indices must be consecutive from 1");
        out.push(rec[1].parse()?);
    }
    Ok(out)
}

/// Pair label `U-N`, `U-S`, `N-S` for three vectors, `i-j` (from 1) otherwise.
pub fn pair_label(pair: (usize, usize), k: usize) -> String {
    if k == 3 {
        let names = ["U", "N", "S"];
        format!("{}-{}", names[pair.0], names[pair.1])
    } else {
        format!("{}-{}", pair.0 + 1, pair.1 + 1)
    }
}

/// Number of vectors `k` behind `n_pairs = k(k-1)/2` pairs.
pub fn vectors_for_pairs(n_pairs: usize) -> usize {
    (1..).find(|k| k * (k - 1) / 2 >= n_pairs).unwrap_or(1)
}

/// `pair,bin_left_deg,density`.
pub fn angle_pdf_csv(pdfs: &[Vec<f64>]) -> Result<Vec<u8>> {
    let k = vectors_for_pairs(pdfs.len());
    let pairs: Vec<(usize, usize)> = (0..k).flat_map(|i| (i + 1..k).map(move |j| (i, j))).collect();
    let rows = pdfs.iter().zip(&pairs).flat_map(|(pdf, &pair)| {
        let label = pair_label(pair, k);
        pdf.iter().enumerate().map(move |(b, d)| [label.clone(), b.to_string(), num(*d)])
    });
    csv_bytes(&["pair", "bin_left_deg", "density"], rows)
}

/// Circuit layout file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutFile {
    pub n: usize,
    pub alpha: Vec<f64>,
    pub encoding_layers: usize,
    pub entangler: String,
    pub seed: u64,
    pub input_dim: usize,
    pub encoding: Encoding,
}

impl From<&CircuitLayout> for LayoutFile {
    fn from(l: &CircuitLayout) -> Self {
        Self {
            n: l.n_qubits,
            alpha: l.alpha.clone(),
            encoding_layers: l.encoding_layers(),
            entangler: "full".into(),
            seed: l.seed,
            input_dim: l.input_dim,
            encoding: l.encoding,
        }
    }
}

impl TryFrom<LayoutFile> for CircuitLayout {
    type Error = anyhow::Error;

    fn try_from(f: LayoutFile) -> Result<Self> {
        if f.entangler != "full" {
            bail!("unsupported entangler {:?}", f.entangler);
        }
        let layout = CircuitLayout::new(f.n, f.alpha, f.input_dim, f.seed)?.with_encoding(f.encoding);
        ensure!(layout.encoding_layers() == f.encoding_layers, "encoding_layers disagrees with n and input_dim");
        Ok(layout)
    }
}

/// A trained reservoir: configuration, input scaling, readout and the state
/// reached at the end of training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub config: ReservoirConfig,
    pub scaler: Scaler,
    pub beta: f64,
    /// Row-major `N_r x D`.
    pub w_out: Vec<f64>,
    pub final_state: Vec<f64>,
}

impl ModelBundle {
    pub fn new(config: ReservoirConfig, scaler: Scaler, readout: &ReadoutMatrix, beta: f64, final_state: Vec<f64>) -> Self {
        Self { config, scaler, beta, w_out: readout.to_row_major(), final_state }
    }

    pub fn readout(&self) -> Result<ReadoutMatrix> {
        Ok(ReadoutMatrix::from_row_major(self.config.n_states(), self.scaler.dim(), &self.w_out)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        self.readout()?;
        ensure!(self.final_state.len() == self.config.n_states(), "final state has the wrong length");
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let b: Self = read_json(path)?;
        b.validate().with_context(|| format!("in {}", path.display()))?;
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use qrc_core::dynamics::generate_trajectory;

    #[test]
    fn trajectory_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SystemSpec::lorenz63();
        let traj = generate_trajectory(&spec, None, 0.01, 50, 10, 3).unwrap();
        let path = dir.path().join("nested/l63.csv");
        write_trajectory(&path, &traj, &spec, 3).unwrap();
        let (back, meta) = read_trajectory(&path).unwrap();
        assert_eq!(back, traj);
        assert_eq!(meta.seed, 3);
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("t,x1,x2,x3\n"));
    }

    #[test]
    fn spectrum_and_pdf_layouts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_atomic(&path, &spectrum_csv(&[0.9056, 1e-5, -14.57]).unwrap()).unwrap();
        assert_eq!(read_spectrum(&path).unwrap(), vec![0.9056, 1e-5, -14.57]);

        let pdfs = vec![vec![0.5, 0.5], vec![1.0, 0.0], vec![0.0, 1.0]];
        let text = String::from_utf8(angle_pdf_csv(&pdfs).unwrap()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "pair,bin_left_deg,density");
        assert_eq!(lines[1], "U-N,0,0.5");
        assert_eq!(lines[6], "N-S,1,1.0");
    }

    #[test]
    fn layout_file_roundtrip() {
        let layout = CircuitLayout::random(4, 10, 9).unwrap();
        let file = LayoutFile::from(&layout);
        assert_eq!((file.n, file.encoding_layers, file.entangler.as_str()), (4, 3, "full"));
        let json = serde_json::to_string(&file).unwrap();
        let back: LayoutFile = serde_json::from_str(&json).unwrap();
        assert_eq!(CircuitLayout::try_from(back).unwrap(), layout);
        let bad = LayoutFile { encoding_layers: 1, ..file };
        assert!(CircuitLayout::try_from(bad).is_err());
    }
}
