//! VTK and JSON output.

use crate::error::{FemError, Result};
use crate::estimators::MultiplierField;
use crate::mesh::TetMesh;
use crate::space::FeFunction;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

/// Writes a legacy ASCII unstructured grid: linear tets, vertex values of
/// `u_h` as point data and the element multiplier as cell data.
pub fn write_vtk<W: Write>(mut w: W, mesh: &TetMesh, u: &FeFunction, sigma_h: &MultiplierField) -> Result<()> {
    let nv = mesh.num_vertices();
    let nt = mesh.num_tets();
    if u.coeffs.len() < nv {
        return Err(FemError::DimensionMismatch { expected: nv, got: u.coeffs.len() });
    }
    if sigma_h.values.len() != nt {
        return Err(FemError::DimensionMismatch { expected: nt, got: sigma_h.values.len() });
    }
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "obstacle3d solution")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {nv} double")?;
    for p in mesh.vertices() {
        writeln!(w, "{:.17e} {:.17e} {:.17e}", p.x, p.y, p.z)?;
    }
    writeln!(w, "CELLS {nt} {}", 5 * nt)?;
    for t in mesh.tets() {
        writeln!(w, "4 {} {} {} {}", t.v[0], t.v[1], t.v[2], t.v[3])?;
    }
    writeln!(w, "CELL_TYPES {nt}")?;
    for _ in 0..nt {
        writeln!(w, "10")?;
    }
    writeln!(w, "POINT_DATA {nv}")?;
    writeln!(w, "SCALARS u_h double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for v in &u.coeffs[..nv] {
        writeln!(w, "{v:.17e}")?;
    }
    writeln!(w, "CELL_DATA {nt}")?;
    writeln!(w, "SCALARS sigma_h double 1")?;
    writeln!(w, "LOOKUP_TABLE default")?;
    for v in &sigma_h.values {
        writeln!(w, "{v:.17e}")?;
    }
    Ok(())
}

/// Discrete solution together with what is needed to rebuild its mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub schema_version: u32,
    pub n: usize,
    pub refine: usize,
    pub r0: f64,
    pub c: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl SolutionFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let s: Self = serde_json::from_str(&text)?;
        if s.schema_version != SCHEMA_VERSION {
            return Err(FemError::InvalidInput(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                s.schema_version
            )));
        }
        Ok(s)
    }
}

/// Serializes `value` with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}
