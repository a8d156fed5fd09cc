//! Local refinement with hanging nodes: refine towards a corner a few
//! times, report the mesh statistics and write it as VTK.

use multigoal_dwr::mesh::{CellMarks, Mesh};
use multigoal_dwr::vtk::write_mesh_vtk;

fn main() -> multigoal_dwr::Result<()> {
    let mut mesh = Mesh::unit_square(2);
    for _ in 0..5 {
        let mut marks = CellMarks::new();
        for &c in mesh.active_cells() {
            let p = mesh.centroid(c);
            if p[0] + p[1] < 0.5 {
                marks.insert(c);
            }
        }
        mesh = mesh.refine(&marks)?;
        println!(
            "cells {:>4}  vertices {:>4}  hanging {:>3}  max level {}  one-irregular {}",
            mesh.n_active_cells(),
            mesh.n_vertices(),
            mesh.hanging_vertices().len(),
            mesh.max_level(),
            mesh.is_one_irregular()
        );
    }
    let path = std::env::temp_dir().join("corner_refined.vtk");
    write_mesh_vtk(&mesh, std::fs::File::create(&path)?)?;
    println!("wrote {}", path.display());
    Ok(())
}
