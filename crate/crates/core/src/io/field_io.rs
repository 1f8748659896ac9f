//! Binary field files, trajectory manifests and CSV export.
//!
//! A field file is the magic `TDF1`, then `rank`, `nx`, `ny` as `u32`
//! little-endian, then `rank * nx * ny` little-endian `f64` values in
//! row-major order, one component after the other.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{StateTrajectory, TimeGrid};
use crate::grid::{GridFunction, GridSpec, ScalarField, VectorField};

pub const MAGIC: &[u8; 4] = b"TDF1";
const HEADER_LEN: usize = 16;

/// Serializes a scalar (rank 1) or vector (rank 2) field.
pub fn encode<F: GridFunction>(field: &F) -> Vec<u8> {
    let g = field.grid();
    let comps = field.components();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * comps.len() * g.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(comps.len() as u32).to_le_bytes());
    out.extend_from_slice(&(g.nx as u32).to_le_bytes());
    out.extend_from_slice(&(g.ny as u32).to_le_bytes());
    for c in comps {
        for v in c {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Header of a field file: `(rank, nx, ny)`.
pub fn decode_header(bytes: &[u8]) -> Result<(usize, usize, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format("truncated header".into()));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic (expected TDF1)".into()));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().unwrap()) as usize;
    let (rank, nx, ny) = (word(4), word(8), word(12));
    if rank != 1 && rank != 2 {
        return Err(Error::Format(format!("unsupported rank {rank}")));
    }
    Ok((rank, nx, ny))
}

fn decode_components(bytes: &[u8], rank: usize, grid: &GridSpec) -> Result<Vec<Vec<f64>>> {
    let (file_rank, nx, ny) = decode_header(bytes)?;
    if file_rank != rank {
        return Err(Error::Format(format!(
            "rank {file_rank} file where rank {rank} was expected"
        )));
    }
    if nx != grid.nx || ny != grid.ny {
        return Err(Error::Format(format!(
            "file holds a {nx}x{ny} field but the grid is {}x{}",
            grid.nx, grid.ny
        )));
    }
    let expected = HEADER_LEN + 8 * rank * nx * ny;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "payload has {} bytes, header implies {}",
            bytes.len() - HEADER_LEN,
            expected - HEADER_LEN
        )));
    }
    let n = nx * ny;
    let values: Vec<f64> = bytes[HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(values.chunks(n).map(|c| c.to_vec()).collect())
}

pub fn decode_scalar(bytes: &[u8], grid: &GridSpec) -> Result<ScalarField> {
    let comps = decode_components(bytes, 1, grid)?;
    Ok(ScalarField::from_component_vecs(*grid, comps))
}

pub fn decode_vector(bytes: &[u8], grid: &GridSpec) -> Result<VectorField> {
    let comps = decode_components(bytes, 2, grid)?;
    Ok(VectorField::from_component_vecs(*grid, comps))
}

pub fn write_field<F: GridFunction>(path: &Path, field: &F) -> Result<()> {
    fs::write(path, encode(field))?;
    Ok(())
}

pub fn read_scalar(path: &Path, grid: &GridSpec) -> Result<ScalarField> {
    decode_scalar(&read_bytes(path)?, grid)
}

pub fn read_vector(path: &Path, grid: &GridSpec) -> Result<VectorField> {
    decode_vector(&read_bytes(path)?, grid)
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Format(format!("missing file {}", path.display()))
        } else {
            Error::Io(e)
        }
    })
}

/// One named series of snapshot files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesEntry {
    pub rank: usize,
    pub files: Vec<String>,
}

/// Manifest listing snapshot files of one or more series on a common time grid.
/// File names are relative to the manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub nx: usize,
    pub ny: usize,
    pub times: Vec<f64>,
    pub series: BTreeMap<String, SeriesEntry>,
}

impl Manifest {
    pub fn new(grid: &GridSpec, times: Vec<f64>) -> Self {
        Self {
            nx: grid.nx,
            ny: grid.ny,
            times,
            series: BTreeMap::new(),
        }
    }

    fn entry(&self, name: &str, rank: usize) -> Result<&SeriesEntry> {
        let e = self
            .series
            .get(name)
            .ok_or_else(|| Error::Format(format!("manifest has no series `{name}`")))?;
        if e.rank != rank {
            return Err(Error::Format(format!(
                "series `{name}` has rank {}, expected {rank}",
                e.rank
            )));
        }
        Ok(e)
    }

    fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        if self.nx != grid.nx || self.ny != grid.ny {
            return Err(Error::Format(format!(
                "manifest grid {}x{} differs from {}x{}",
                self.nx, self.ny, grid.nx, grid.ny
            )));
        }
        Ok(())
    }

    /// Every referenced file must exist next to the manifest.
    pub fn check_files(&self, dir: &Path) -> Result<()> {
        for e in self.series.values() {
            for f in &e.files {
                if !dir.join(f).is_file() {
                    return Err(Error::Format(format!("manifest references missing snapshot {f}")));
                }
            }
        }
        Ok(())
    }
}

/// Writes each snapshot as `<stem>_<series>_<k>.tdf` and returns the manifest entry.
pub fn write_series<F: GridFunction>(
    dir: &Path,
    stem: &str,
    name: &str,
    fields: &[F],
) -> Result<SeriesEntry> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(fields.len());
    let mut rank = 1;
    for (k, f) in fields.iter().enumerate() {
        let file = format!("{stem}_{name}_{k:05}.tdf");
        write_field(&dir.join(&file), f)?;
        rank = f.components().len();
        files.push(file);
    }
    Ok(SeriesEntry { rank, files })
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(manifest)?)?;
    Ok(())
}

/// Reads a manifest and checks that all snapshot files exist.
pub fn read_manifest(path: &Path) -> Result<(Manifest, PathBuf)> {
    let text = read_bytes(path)?;
    let m: Manifest = serde_json::from_slice(&text)?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    m.check_files(&dir)?;
    Ok((m, dir))
}

pub fn load_scalar_series(
    manifest: &Manifest,
    dir: &Path,
    name: &str,
    grid: &GridSpec,
) -> Result<Vec<ScalarField>> {
    manifest.check_grid(grid)?;
    manifest
        .entry(name, 1)?
        .files
        .iter()
        .map(|f| read_scalar(&dir.join(f), grid))
        .collect()
}

pub fn load_vector_series(
    manifest: &Manifest,
    dir: &Path,
    name: &str,
    grid: &GridSpec,
) -> Result<Vec<VectorField>> {
    manifest.check_grid(grid)?;
    manifest
        .entry(name, 2)?
        .files
        .iter()
        .map(|f| read_vector(&dir.join(f), grid))
        .collect()
}

/// Writes a state trajectory as series `u` and `xi` plus `<stem>.json`.
pub fn write_trajectory(dir: &Path, stem: &str, traj: &StateTrajectory) -> Result<PathBuf> {
    let grid = traj.grid();
    let times = (0..=traj.time.steps).map(|k| traj.time.t(k)).collect();
    let mut m = Manifest::new(&grid, times);
    m.series.insert("u".into(), write_series(dir, stem, "u", &traj.u)?);
    m.series.insert("xi".into(), write_series(dir, stem, "xi", &traj.xi)?);
    let path = dir.join(format!("{stem}.json"));
    write_manifest(&path, &m)?;
    Ok(path)
}

/// Loads a state trajectory written by [`write_trajectory`] onto `grid` and `time`.
pub fn read_trajectory(path: &Path, grid: &GridSpec, time: TimeGrid) -> Result<StateTrajectory> {
    let (m, dir) = read_manifest(path)?;
    if m.times.len() != time.steps + 1 {
        return Err(Error::TimeGridMismatch {
            expected: time.steps + 1,
            found: m.times.len(),
        });
    }
    let u = load_vector_series(&m, &dir, "u", grid)?;
    let xi = load_scalar_series(&m, &dir, "xi", grid)?;
    StateTrajectory::new(time, u, xi)
}

/// CSV export: one grid row per line; for vector fields the rows of the
/// first component come first, followed by those of the second.
pub fn write_csv<F: GridFunction>(path: &Path, field: &F) -> Result<()> {
    let g = field.grid();
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    for c in field.components() {
        for j in 0..g.ny {
            w.write_record(c[j * g.nx..(j + 1) * g.nx].iter().map(|v| format!("{v:e}")))?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec::new(5, 4, 1.0, 0.75).unwrap()
    }

    #[test]
    fn header_layout() {
        let f = ScalarField::constant(grid(), 1.5);
        let b = encode(&f);
        assert_eq!(&b[..4], b"TDF1");
        assert_eq!(b.len(), 16 + 8 * 20);
        assert_eq!(decode_header(&b).unwrap(), (1, 5, 4));
        assert_eq!(f64::from_le_bytes(b[16..24].try_into().unwrap()), 1.5);
    }

    #[test]
    fn bitwise_round_trip() {
        let g = grid();
        let v = VectorField::sample(g, |x, y| ((x * 7.3).sin() / 3.0, f64::MIN_POSITIVE * y));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.tdf");
        write_field(&p, &v).unwrap();
        let w = read_vector(&p, &g).unwrap();
        for (a, b) in v.comp1.iter().chain(&v.comp2).zip(w.comp1.iter().chain(&w.comp2)) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn guards() {
        let g = grid();
        let b = encode(&VectorField::zeros(g));
        assert!(matches!(decode_scalar(&b, &g), Err(Error::Format(_))));
        assert!(decode_vector(&b[..b.len() - 1], &g).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(decode_vector(&bad, &g).is_err());
        let other = GridSpec::new(4, 5, 1.0, 1.0).unwrap();
        assert!(decode_vector(&b, &other).is_err());
    }

    #[test]
    fn manifest_round_trip_and_missing_file() {
        let g = grid();
        let t = TimeGrid::new(1.0, 3).unwrap();
        let mut traj = StateTrajectory::zeros(g, t);
        traj.xi[2] = ScalarField::constant(g, 0.25);
        let dir = tempfile::tempdir().unwrap();
        let path = write_trajectory(dir.path(), "state", &traj).unwrap();
        let back = read_trajectory(&path, &g, t).unwrap();
        assert_eq!(back, traj);
        std::fs::remove_file(dir.path().join("state_xi_00002.tdf")).unwrap();
        let err = read_trajectory(&path, &g, t).unwrap_err().to_string();
        assert!(err.contains("state_xi_00002.tdf"), "{err}");
    }

    #[test]
    fn csv_blocks() {
        let g = grid();
        let v = VectorField::constant(g, 1.0, 2.0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.csv");
        write_csv(&p, &v).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 8);
        assert_eq!(lines[0].split(',').count(), 5);
        assert!(lines[4].starts_with("2e0"));
    }
}
