//! Artifact emission: the binary density dump with its fixed 16-byte
//! header, legacy-ASCII VTK exports of density and mode fields, the
//! deterministic convergence CSV with its wall-clock companion, atomic
//! checkpoint files, and the plain-text diagnostics report.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write as _};
use std::path::Path;

use nalgebra::DVector;

use crate::diagnostics::{BlfErrorReport, LocalityReport, MacMatrix, MatchConfidence};
use crate::grid::Dims;
use crate::lba::LbaTimings;
use crate::optimizer::{Checkpoint, IterRecord, CHECKPOINT_VERSION};

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad density dump magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported density dump version {0}")]
    BadVersion(u32),
    #[error("density dump holds {got} values, header promises {expected}")]
    Truncated { got: usize, expected: usize },
    #[error("checkpoint version {got}, expected {expected}")]
    CheckpointVersion { got: u32, expected: u32 },
    #[error("checkpoint decode: {0}")]
    CheckpointDecode(#[from] serde_json::Error),
}

/// Density dump header: 4 magic bytes, then version, nelx, nely as
/// little-endian u32. Values follow as little-endian f64 in element-index
/// order (y fastest within each column of elements).
pub const DENSITY_MAGIC: [u8; 4] = *b"BKOD";
pub const DENSITY_VERSION: u32 = 1;

pub fn density_bytes(dims: Dims, values: &[f64]) -> Vec<u8> {
    assert_eq!(values.len(), dims.n_elems(), "field length");
    let mut out = Vec::with_capacity(16 + 8 * values.len());
    out.extend_from_slice(&DENSITY_MAGIC);
    out.extend_from_slice(&DENSITY_VERSION.to_le_bytes());
    out.extend_from_slice(&(dims.nelx as u32).to_le_bytes());
    out.extend_from_slice(&(dims.nely as u32).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_density(path: &Path, dims: Dims, values: &[f64]) -> Result<(), ExportError> {
    atomic_write(path, &density_bytes(dims, values))?;
    Ok(())
}

pub fn parse_density(bytes: &[u8]) -> Result<(Dims, Vec<f64>), ExportError> {
    if bytes.len() < 16 {
        return Err(ExportError::Truncated {
            got: bytes.len(),
            expected: 16,
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().expect("slice length");
    if magic != DENSITY_MAGIC {
        return Err(ExportError::BadMagic(magic));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("slice length"));
    let version = word(4);
    if version != DENSITY_VERSION {
        return Err(ExportError::BadVersion(version));
    }
    let dims = Dims::new(word(8) as usize, word(12) as usize);
    let expected = dims.n_elems();
    let body = &bytes[16..];
    if body.len() != 8 * expected {
        return Err(ExportError::Truncated {
            got: body.len() / 8,
            expected,
        });
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk length")))
        .collect();
    Ok((dims, values))
}

pub fn read_density(path: &Path) -> Result<(Dims, Vec<f64>), ExportError> {
    parse_density(&fs::read(path)?)
}

/// One displacement mode prepared for export: full-length dof vector plus
/// its per-element strain-energy density.
pub struct ModeExport<'a> {
    pub name: String,
    pub displacement: &'a DVector<f64>,
    pub energy: &'a [f64],
}

/// Legacy-ASCII VTK structured-points file: density and per-mode
/// log-strain-energy as cell data, mode displacements as point vectors.
pub fn vtk_string(title: &str, dims: Dims, h: f64, density: &[f64], modes: &[ModeExport]) -> String {
    assert_eq!(density.len(), dims.n_elems(), "density length");
    let mut s = String::new();
    let _ = writeln!(s, "# vtk DataFile Version 3.0");
    let _ = writeln!(s, "{title}");
    let _ = writeln!(s, "ASCII");
    let _ = writeln!(s, "DATASET STRUCTURED_POINTS");
    let _ = writeln!(s, "DIMENSIONS {} {} 1", dims.nelx + 1, dims.nely + 1);
    let _ = writeln!(s, "ORIGIN 0 0 0");
    let _ = writeln!(s, "SPACING {h} {h} {h}");

    let _ = writeln!(s, "CELL_DATA {}", dims.n_elems());
    let _ = writeln!(s, "SCALARS density double 1");
    let _ = writeln!(s, "LOOKUP_TABLE default");
    for ey in 0..dims.nely {
        for ex in 0..dims.nelx {
            let _ = writeln!(s, "{}", density[dims.elem(ex, ey)]);
        }
    }
    for m in modes {
        assert_eq!(m.energy.len(), dims.n_elems(), "energy length");
        let _ = writeln!(s, "SCALARS {}_log_energy double 1", m.name);
        let _ = writeln!(s, "LOOKUP_TABLE default");
        for ey in 0..dims.nely {
            for ex in 0..dims.nelx {
                let _ = writeln!(s, "{}", m.energy[dims.elem(ex, ey)].max(1e-300).log10());
            }
        }
    }

    if !modes.is_empty() {
        let _ = writeln!(s, "POINT_DATA {}", dims.n_nodes());
        for m in modes {
            assert_eq!(m.displacement.len(), dims.n_dofs(), "displacement length");
            let _ = writeln!(s, "VECTORS {} double", m.name);
            for iy in 0..=dims.nely {
                for ix in 0..=dims.nelx {
                    let n = dims.node(ix, iy);
                    let _ = writeln!(s, "{} {} 0", m.displacement[2 * n], m.displacement[2 * n + 1]);
                }
            }
        }
    }
    s
}

pub fn write_vtk(
    path: &Path,
    title: &str,
    dims: Dims,
    h: f64,
    density: &[f64],
    modes: &[ModeExport],
) -> Result<(), ExportError> {
    atomic_write(path, vtk_string(title, dims, h, density, modes).as_bytes())?;
    Ok(())
}

/// Deterministic convergence table: everything reproducible given config +
/// seed. Wall-clock phase times deliberately live in the separate timings
/// CSV so that identical runs stay byte-identical here.
pub fn convergence_csv(history: &[IterRecord]) -> String {
    let n_l = history.iter().map(|r| r.lambdas.len()).max().unwrap_or(0);
    let n_g = history.iter().map(|r| r.constraints.len()).max().unwrap_or(0);
    let mut s = String::new();
    s.push_str("iteration,p,beta,objective,compliance,volume,m_nd,dx_inf,relaxed,bumped");
    for i in 1..=n_l {
        let _ = write!(s, ",lambda_{i}");
    }
    for i in 1..=n_g {
        let _ = write!(s, ",g_{i}");
    }
    s.push('\n');
    for r in history {
        let _ = write!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            r.iteration,
            r.p,
            r.beta,
            r.objective,
            r.compliance,
            r.volume,
            r.m_nd,
            r.dx_inf,
            u8::from(r.relaxed),
            u8::from(r.bumped),
        );
        for i in 0..n_l {
            match r.lambdas.get(i) {
                Some(v) => {
                    let _ = write!(s, ",{v}");
                }
                None => s.push(','),
            }
        }
        for i in 0..n_g {
            match r.constraints.get(i) {
                Some(v) => {
                    let _ = write!(s, ",{v}");
                }
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    s
}

/// Wall-clock companion of the convergence CSV.
pub fn timings_csv(history: &[IterRecord]) -> String {
    let mut s = String::from("iteration,t_analysis,t_gradients,t_update\n");
    for r in history {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{:.6}",
            r.iteration, r.t_analysis, r.t_gradients, r.t_update
        );
    }
    s
}

pub fn write_text(path: &Path, text: &str) -> Result<(), ExportError> {
    atomic_write(path, text.as_bytes())?;
    Ok(())
}

pub fn write_checkpoint(path: &Path, cp: &Checkpoint) -> Result<(), ExportError> {
    let json = serde_json::to_vec_pretty(cp)?;
    atomic_write(path, &json)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, ExportError> {
    let cp: Checkpoint = serde_json::from_slice(&fs::read(path)?)?;
    if cp.version != CHECKPOINT_VERSION {
        return Err(ExportError::CheckpointVersion {
            got: cp.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    Ok(cp)
}

/// Write-to-temp-then-rename so that readers never observe a partial file.
fn atomic_write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.to_path_buf();
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "artifact".into());
    tmp.set_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

/// Sections of the plain-text diagnostics report. Every part is optional
/// so that analyze, reinforce, and optimize can share the renderer.
#[derive(Default)]
pub struct Report {
    sections: Vec<String>,
}

impl Report {
    pub fn new(title: &str) -> Self {
        Self {
            sections: vec![format!("# {title}\n")],
        }
    }

    pub fn push_lambdas(&mut self, label: &str, lambdas: &[f64]) -> &mut Self {
        let mut s = format!("## Load factors ({label})\n");
        for (i, l) in lambdas.iter().enumerate() {
            let _ = writeln!(s, "lambda_{:<2} = {l:.8e}", i + 1);
        }
        self.sections.push(s);
        self
    }

    pub fn push_coalescence(&mut self, deltas: &[f64]) -> &mut Self {
        let mut s = String::from("## Coalescence measures\n");
        for (i, d) in deltas.iter().enumerate() {
            let _ = writeln!(s, "delta_{:<2} = {d:.6e}", i + 2);
        }
        self.sections.push(s);
        self
    }

    pub fn push_mac(&mut self, mac: &MacMatrix) -> &mut Self {
        let mut s = String::from("## Modal assurance (rows = approximate, cols = reference)\n");
        for j in 0..mac.coeffs.nrows() {
            let row: Vec<String> = (0..mac.coeffs.ncols())
                .map(|r| format!("{:.4}", mac.coeffs[(j, r)]))
                .collect();
            let _ = writeln!(s, "  [{}]", row.join(" "));
        }
        let _ = writeln!(s, "pairs:");
        for p in &mac.pairs {
            let tier = match p.confidence {
                MatchConfidence::Strong => "strong",
                MatchConfidence::Moderate => "moderate",
            };
            let second = p
                .second_best
                .map(|(r, v)| format!(", runner-up ref {} at {:.4}", r + 1, v))
                .unwrap_or_default();
            let _ = writeln!(
                s,
                "  approx {} -> ref {}  c = {:.4} ({tier}{second})",
                p.approx + 1,
                p.reference + 1,
                p.value
            );
        }
        self.sections.push(s);
        self
    }

    pub fn push_blf_errors(&mut self, rep: &BlfErrorReport) -> &mut Self {
        let mut s = String::from("## BLF errors vs reference\n");
        for (i, e) in rep.raw.iter().enumerate() {
            let _ = writeln!(s, "raw    {:<2} eps = {e:+.4e}", i + 1);
        }
        for (a, r, e) in &rep.paired {
            let _ = writeln!(s, "paired {:<2}->{:<2} eps = {e:+.4e}", a + 1, r + 1);
        }
        self.sections.push(s);
        self
    }

    pub fn push_locality(&mut self, rep: &LocalityReport) -> &mut Self {
        let mut s = String::from("## Locality scores (normalized by mode 1)\n");
        for (j, score) in rep.scores.iter().enumerate() {
            let mark = if rep.flagged.contains(&j) { "  <- localized" } else { "" };
            let _ = writeln!(s, "mode {:<2} score = {score:.3}{mark}", j + 1);
        }
        let _ = writeln!(
            s,
            "flag threshold {}x, neighborhood elements: {}",
            rep.threshold,
            rep.neighborhood.iter().filter(|&&b| b).count()
        );
        self.sections.push(s);
        self
    }

    pub fn push_zetas(&mut self, zetas: &[f64]) -> &mut Self {
        let mut s = String::from("## Stress-to-elastic stiffness ratio per level\n");
        for (l, z) in zetas.iter().enumerate() {
            let _ = writeln!(s, "level {} zeta = {z:.4e}", l + 1);
        }
        self.sections.push(s);
        self
    }

    pub fn push_timings(&mut self, t: &LbaTimings) -> &mut Self {
        let mut s = String::from("## Timings\n");
        let _ = writeln!(s, "t_assemble = {:.4}s", t.t_assemble);
        let _ = writeln!(s, "t_LA       = {:.4}s", t.t_la);
        let _ = writeln!(s, "t_EA       = {:.4}s", t.t_ea);
        let _ = writeln!(s, "t_LBA      = {:.4}s", t.t_lba());
        let _ = writeln!(s, "e_R        = {:.4}", t.e_r());
        self.sections.push(s);
        self
    }

    pub fn push_note(&mut self, note: &str) -> &mut Self {
        self.sections.push(format!("{note}\n"));
        self
    }

    pub fn render(&self) -> String {
        self.sections.join("\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizer::IterRecord;

    fn record(i: usize, lambdas: Vec<f64>) -> IterRecord {
        IterRecord {
            iteration: i,
            p: 3.0,
            beta: 1.0,
            objective: 1.5,
            compliance: 0.25,
            volume: 0.5,
            m_nd: 0.1,
            lambdas,
            coalescence: vec![],
            constraints: vec![-0.1],
            dx_inf: 0.01,
            relaxed: false,
            bumped: i == 2,
            t_analysis: 0.5,
            t_gradients: 0.25,
            t_update: 0.125,
        }
    }

    #[test]
    fn density_dump_has_the_documented_golden_bytes() {
        let dims = Dims::new(2, 2);
        let vals = [0.0, 0.5, 1.0, 0.25];
        let bytes = density_bytes(dims, &vals);
        let mut expected = Vec::new();
        expected.extend_from_slice(b"BKOD");
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        for v in vals {
            expected.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(bytes, expected);
        assert_eq!(bytes.len(), 16 + 4 * 8);
    }

    #[test]
    fn density_round_trip_is_the_identity() {
        let dims = Dims::new(3, 2);
        let vals: Vec<f64> = (0..6).map(|i| (i as f64).sin().abs()).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.dens");
        write_density(&path, dims, &vals).unwrap();
        let (d2, v2) = read_density(&path).unwrap();
        assert_eq!(d2, dims);
        for (a, b) in vals.iter().zip(&v2) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // no stray temp file remains
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn density_parser_rejects_corrupt_headers() {
        let dims = Dims::new(2, 1);
        let good = density_bytes(dims, &[0.1, 0.9]);
        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(
            parse_density(&bad_magic),
            Err(ExportError::BadMagic(_))
        ));
        let mut bad_version = good.clone();
        bad_version[4] = 9;
        assert!(matches!(
            parse_density(&bad_version),
            Err(ExportError::BadVersion(9))
        ));
        let short = &good[..good.len() - 8];
        assert!(matches!(
            parse_density(short),
            Err(ExportError::Truncated { got: 1, expected: 2 })
        ));
    }

    #[test]
    fn vtk_file_is_schema_consistent() {
        let dims = Dims::new(2, 2);
        let density = vec![0.25, 0.5, 0.75, 1.0];
        let disp = DVector::from_fn(dims.n_dofs(), |i, _| i as f64 * 0.1);
        let energy = vec![1.0, 10.0, 100.0, 1000.0];
        let modes = [ModeExport {
            name: "mode_01".into(),
            displacement: &disp,
            energy: &energy,
        }];
        let text = vtk_string("case", dims, 0.5, &density, &modes);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# vtk DataFile Version 3.0");
        assert_eq!(lines[3], "DATASET STRUCTURED_POINTS");
        assert_eq!(lines[4], "DIMENSIONS 3 3 1");
        assert!(lines.contains(&"CELL_DATA 4"));
        assert!(lines.contains(&"POINT_DATA 9"));
        assert!(lines.contains(&"SCALARS mode_01_log_energy double 1"));
        assert!(lines.contains(&"VECTORS mode_01 double"));
        // vtk cell order flips the y-fastest element indexing to x-fastest
        let at = lines.iter().position(|l| *l == "LOOKUP_TABLE default").unwrap();
        assert_eq!(&lines[at + 1..at + 5], ["0.25", "0.75", "0.5", "1"]);
        // log-energy of the last cell (ex=1, ey=1) is log10(1000) = 3
        let at2 = lines
            .iter()
            .position(|l| *l == "SCALARS mode_01_log_energy double 1")
            .unwrap();
        assert_eq!(&lines[at2 + 2..at2 + 6], ["0", "2", "1", "3"]);
        // 9 point vectors, each with a zero z component
        let vat = lines.iter().position(|l| *l == "VECTORS mode_01 double").unwrap();
        assert_eq!(lines.len() - (vat + 1), 9);
        assert!(lines[vat + 1..].iter().all(|l| l.ends_with(" 0")));
    }

    #[test]
    fn convergence_csv_is_deterministic_and_excludes_wall_clock() {
        let h = vec![record(1, vec![0.9]), record(2, vec![0.95, 1.4])];
        let a = convergence_csv(&h);
        let b = convergence_csv(&h);
        assert_eq!(a.as_bytes(), b.as_bytes());
        let mut lines = a.lines();
        assert_eq!(
            lines.next().unwrap(),
            "iteration,p,beta,objective,compliance,volume,m_nd,dx_inf,relaxed,bumped,lambda_1,lambda_2,g_1"
        );
        let row1 = lines.next().unwrap();
        assert!(row1.starts_with("1,3,1,1.5,0.25,0.5,0.1,0.01,0,0"));
        assert!(row1.ends_with(",0.9,,-0.1"), "{row1}");
        assert!(!a.contains("t_analysis"));
        let t = timings_csv(&h);
        assert!(t.starts_with("iteration,t_analysis"));
        assert_eq!(t.lines().count(), 3);
    }

    #[test]
    fn checkpoint_files_round_trip_and_reject_other_versions() {
        let cp = Checkpoint {
            version: CHECKPOINT_VERSION,
            iteration: 7,
            p: 4.0,
            beta: 2.0,
            pmax_at: Some(5),
            stagnant: 1,
            j0: Some(0.5),
            jbar: None,
            x_hat: vec![0.25, 0.75],
            mma_iter: 7,
            xold1: vec![0.2, 0.7],
            xold2: vec![0.3, 0.6],
            low: vec![0.0, 0.1],
            upp: vec![0.9, 1.0],
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.checkpoint");
        write_checkpoint(&path, &cp).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back.iteration, 7);
        assert_eq!(back.x_hat, cp.x_hat);
        let mut wrong = cp;
        wrong.version = 99;
        write_checkpoint(&path, &wrong).unwrap();
        assert!(matches!(
            read_checkpoint(&path),
            Err(ExportError::CheckpointVersion { got: 99, .. })
        ));
    }

    #[test]
    fn report_renders_every_requested_section() {
        let mut rep = Report::new("analysis");
        rep.push_lambdas("multilevel", &[1.25, 2.5])
            .push_coalescence(&[0.02])
            .push_zetas(&[0.1, 0.2])
            .push_note("done");
        let text = rep.render();
        assert!(text.starts_with("# analysis"));
        assert!(text.contains("lambda_1  = 1.25"));
        assert!(text.contains("delta_2  = 2.0"));
        assert!(text.contains("level 2 zeta = 2.0000e-1"));
        assert!(text.contains("done"));
    }
}
