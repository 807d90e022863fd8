//! Persistence and deterministic seed derivation: the binary field format,
//! the results CSV schema, and report aggregation helpers.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiment::RealizationResult;
use crate::grid::{TorusField, TorusGrid};
use crate::scalar::Scalar;

/// Stable cross-platform seed derivation: SHA-256 over
/// `(master, label, index)`, truncated to 64 bits (little-endian).
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update([0x1f]);
    h.update(label.as_bytes());
    h.update([0x1f]);
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

const MAGIC: &[u8; 4] = b"SHOM";
const VERSION: u8 = 1;

/// Write a multi-component torus field:
/// magic "SHOM", version 1, d (u32), kappa (u32), n (u64), L (f64), then the
/// row-major little-endian f64 payload, component-major.
pub fn save_field<F: Scalar>(path: &Path, field: &TorusField<F>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&[VERSION])?;
    w.write_all(&(field.grid.dim() as u32).to_le_bytes())?;
    w.write_all(&(field.comps() as u32).to_le_bytes())?;
    w.write_all(&(field.grid.cells_per_axis() as u64).to_le_bytes())?;
    w.write_all(&field.grid.period().to_f64_lossy().to_le_bytes())?;
    for &v in field.data() {
        w.write_all(&v.to_f64_lossy().to_le_bytes())?;
    }
    Ok(())
}

pub fn load_field<F: Scalar>(path: &Path) -> Result<TorusField<F>> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::BadMagic)?;
    if &magic != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut ver = [0u8; 1];
    r.read_exact(&mut ver)?;
    if ver[0] != VERSION {
        return Err(Error::BadVersion(ver[0]));
    }
    let mut b4 = [0u8; 4];
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b4)?;
    let dim = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let kappa = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b8)?;
    let n = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let period = f64::from_le_bytes(b8);
    let grid = TorusGrid::new(dim, n, F::cast(period))?;
    let expected = kappa * grid.num_cells() * 8;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != expected {
        return Err(Error::TruncatedPayload {
            expected,
            got: payload.len(),
        });
    }
    let data: Vec<F> = payload
        .chunks_exact(8)
        .map(|c| F::cast(f64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    TorusField::from_data(grid, kappa, data)
}

/// Fixed CSV header of the per-realization result rows.
pub const RESULT_HEADER: &str =
    "run_id,seed,eps,k,lambda_eps,lambda_bar,err_lambda,err_g_l2,err_grad_l2,commutator_integral,gap_flag,wall_ms";

/// One CSV row per (realization, k).
#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub run_id: String,
    pub seed: u64,
    pub eps: f64,
    pub k: usize,
    pub lambda_eps: f64,
    pub lambda_bar: f64,
    pub err_lambda: f64,
    pub err_g_l2: f64,
    pub err_grad_l2: f64,
    pub commutator_integral: f64,
    pub gap_flag: bool,
    pub wall_ms: u64,
}

impl ResultRow {
    pub fn from_realization<F: Scalar>(
        run_id: &str,
        r: &RealizationResult<F>,
    ) -> Vec<ResultRow> {
        r.k_set
            .iter()
            .enumerate()
            .map(|(pos, &k)| ResultRow {
                run_id: run_id.to_string(),
                seed: r.seed,
                eps: r.eps.to_f64_lossy(),
                k,
                lambda_eps: r.lambda_eps[pos].to_f64_lossy(),
                lambda_bar: r.lambda_bar[pos].to_f64_lossy(),
                err_lambda: r.err_lambda[pos].to_f64_lossy(),
                err_g_l2: r.err_l2[pos].to_f64_lossy(),
                err_grad_l2: r.err_grad[pos].to_f64_lossy(),
                commutator_integral: r.commutator_integral[pos].to_f64_lossy(),
                gap_flag: r.gap_simple[pos],
                wall_ms: r.wall_ms,
            })
            .collect()
    }

    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{:.17e},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{},{}",
            self.run_id,
            self.seed,
            self.eps,
            self.k,
            self.lambda_eps,
            self.lambda_bar,
            self.err_lambda,
            self.err_g_l2,
            self.err_grad_l2,
            self.commutator_integral,
            u8::from(self.gap_flag),
            self.wall_ms
        )
    }

    pub fn parse_csv_line(line: &str) -> Result<ResultRow> {
        let parts: Vec<&str> = line.trim_end().split(',').collect();
        if parts.len() != 12 {
            return Err(Error::HeaderMismatch(format!(
                "expected 12 columns, got {}",
                parts.len()
            )));
        }
        let f = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::Numerical(format!("bad float {s}: {e}")))
        };
        Ok(ResultRow {
            run_id: parts[0].to_string(),
            seed: parts[1]
                .parse()
                .map_err(|e| Error::Numerical(format!("bad seed: {e}")))?,
            eps: f(parts[2])?,
            k: parts[3]
                .parse()
                .map_err(|e| Error::Numerical(format!("bad k: {e}")))?,
            lambda_eps: f(parts[4])?,
            lambda_bar: f(parts[5])?,
            err_lambda: f(parts[6])?,
            err_g_l2: f(parts[7])?,
            err_grad_l2: f(parts[8])?,
            commutator_integral: f(parts[9])?,
            gap_flag: parts[10] == "1",
            wall_ms: parts[11]
                .parse()
                .map_err(|e| Error::Numerical(format!("bad wall_ms: {e}")))?,
        })
    }
}

/// Write rows with the fixed header order; appending to an existing file
/// requires a matching header.
pub fn write_results(rows: &[ResultRow], path: &Path) -> Result<()> {
    let append = path.exists();
    if append {
        let existing = std::fs::read_to_string(path)?;
        let first = existing.lines().next().unwrap_or("");
        if first != RESULT_HEADER {
            return Err(Error::HeaderMismatch(format!(
                "existing file header differs: {first}"
            )));
        }
        let mut f = std::fs::OpenOptions::new().append(true).open(path)?;
        for row in rows {
            writeln!(f, "{}", row.to_csv_line())?;
            f.flush()?;
        }
        return Ok(());
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{RESULT_HEADER}")?;
    for row in rows {
        writeln!(f, "{}", row.to_csv_line())?;
    }
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != RESULT_HEADER {
        return Err(Error::HeaderMismatch(header.to_string()));
    }
    lines.map(ResultRow::parse_csv_line).collect()
}

/// Plot-data CSV: `x,y,yerr` triples with a one-line header.
pub fn write_plot_data(path: &Path, header: &str, rows: &[(f64, f64, f64)]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "{header}")?;
    for (x, y, yerr) in rows {
        writeln!(f, "{x:.17e},{y:.17e},{yerr:.17e}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TorusGrid;

    #[test]
    fn seed_derivation_is_pure_and_distinct() {
        assert_eq!(derive_seed(7, "field", 0), derive_seed(7, "field", 0));
        assert_ne!(derive_seed(7, "field", 0), derive_seed(7, "field", 1));
        assert_ne!(derive_seed(7, "field", 0), derive_seed(7, "ens", 0));
        assert_ne!(derive_seed(7, "field", 0), derive_seed(8, "field", 0));
    }

    #[test]
    fn seed_collision_scan() {
        use std::collections::HashSet;
        let mut seen = HashSet::with_capacity(1_000_000);
        for label in ["field", "ens", "real", "gk"] {
            for i in 0..250_000u64 {
                assert!(seen.insert(derive_seed(42, label, i)), "collision at {label}/{i}");
            }
        }
    }

    #[test]
    fn field_roundtrip_bitwise() {
        use rand::{Rng, SeedableRng};
        let dir = std::env::temp_dir().join("homlab-io-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("field.shom");
        let grid = TorusGrid::<f64>::new(2, 8, 1.5).unwrap();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..2 * 64).map(|_| rng.gen::<f64>() - 0.5).collect();
        let field = TorusField::from_data(grid, 2, data.clone()).unwrap();
        save_field(&path, &field).unwrap();
        // payload length arithmetic: 8 * kappa * n^d bytes after the header
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 4 + 1 + 4 + 4 + 8 + 8 + 8 * 2 * 64);
        let back: TorusField<f64> = load_field(&path).unwrap();
        for (a, b) in back.data().iter().zip(&data) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // corrupted magic
        let mut bad = bytes.clone();
        bad[0] = b'X';
        let bad_path = dir.join("bad.shom");
        std::fs::write(&bad_path, &bad).unwrap();
        assert!(matches!(
            load_field::<f64>(&bad_path).unwrap_err(),
            Error::BadMagic
        ));
        // truncated payload
        let trunc_path = dir.join("trunc.shom");
        std::fs::write(&trunc_path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(
            load_field::<f64>(&trunc_path).unwrap_err(),
            Error::TruncatedPayload { .. }
        ));
    }

    #[test]
    fn result_csv_roundtrip_and_header_guard() {
        let dir = std::env::temp_dir().join("homlab-csv-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("results.csv");
        let _ = std::fs::remove_file(&path);
        // empty set: header-only file
        write_results(&[], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.trim_end(), RESULT_HEADER);
        let row = ResultRow {
            run_id: "run-1".into(),
            seed: 123,
            eps: 1.0 / 8.0,
            k: 1,
            lambda_eps: 8.25,
            lambda_bar: 8.5,
            err_lambda: 0.25,
            err_g_l2: 0.05,
            err_grad_l2: 0.3,
            commutator_integral: -0.01,
            gap_flag: true,
            wall_ms: 42,
        };
        write_results(std::slice::from_ref(&row), &path).unwrap();
        let rows = read_results(&path).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0], row);
        // header mismatch on append
        std::fs::write(&path, "bad,header\n").unwrap();
        assert!(matches!(
            write_results(std::slice::from_ref(&row), &path).unwrap_err(),
            Error::HeaderMismatch(_)
        ));
    }
}
