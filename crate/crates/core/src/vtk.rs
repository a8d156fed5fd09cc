//! Legacy ASCII VTK output of the mesh, nodal fields and cell data.

use std::io::Write;

use crate::error::Result;
use crate::fespace::DiscreteFunction;
use crate::mesh::Mesh;

const VTK_QUAD: u8 = 9;

/// Writes the active cells as an unstructured grid. Point fields are
/// evaluated at the mesh vertices (first component only for vector fields
/// unless listed per component by the caller). Cell fields must have one
/// value per active cell.
pub fn write_vtk(
    mesh: &Mesh,
    point_fields: &[(&str, &DiscreteFunction, usize)],
    cell_fields: &[(&str, &[f64])],
    mut out: impl Write,
) -> Result<()> {
    let active = mesh.active_cells();
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "adaptive mesh")?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(out, "POINTS {} double", 4 * active.len())?;
    for &c in active {
        for v in corner_order(mesh, c) {
            let p = mesh.vertex(v);
            writeln!(out, "{} {} 0", p[0], p[1])?;
        }
    }
    writeln!(out, "CELLS {} {}", active.len(), 5 * active.len())?;
    for k in 0..active.len() {
        let b = 4 * k;
        writeln!(out, "4 {} {} {} {}", b, b + 1, b + 2, b + 3)?;
    }
    writeln!(out, "CELL_TYPES {}", active.len())?;
    for _ in active {
        writeln!(out, "{VTK_QUAD}")?;
    }
    if !point_fields.is_empty() {
        writeln!(out, "POINT_DATA {}", 4 * active.len())?;
        for (name, f, comp) in point_fields {
            writeln!(out, "SCALARS {name} double 1")?;
            writeln!(out, "LOOKUP_TABLE default")?;
            for &c in active {
                // points are duplicated per cell so values on either side of
                // the slit stay separate
                for xi in [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]] {
                    let (vals, _) = f.eval_in_cell(c, xi);
                    writeln!(out, "{:.15e}", vals[*comp])?;
                }
            }
        }
    }
    if !cell_fields.is_empty() {
        writeln!(out, "CELL_DATA {}", active.len())?;
        for (name, vals) in cell_fields {
            assert_eq!(vals.len(), active.len(), "cell field {name}");
            writeln!(out, "SCALARS {name} double 1")?;
            writeln!(out, "LOOKUP_TABLE default")?;
            for v in *vals {
                writeln!(out, "{v:.15e}")?;
            }
        }
    }
    Ok(())
}

/// Cell vertices in counter-clockwise order. Cells store them
/// lexicographically (v0 v1 / v2 v3), VTK wants v0 v1 v3 v2.
fn corner_order(mesh: &Mesh, c: usize) -> [usize; 4] {
    let v = mesh.cell(c).vertices;
    [v[0], v[1], v[3], v[2]]
}

/// Mesh only: vertices, quads and the refinement level per cell.
pub fn write_mesh_vtk(mesh: &Mesh, out: impl Write) -> Result<()> {
    let levels: Vec<f64> = mesh.active_cells().iter().map(|&c| mesh.cell(c).level as f64).collect();
    write_vtk(mesh, &[], &[("level", &levels)], out)
}
