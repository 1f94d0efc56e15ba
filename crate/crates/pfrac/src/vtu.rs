//! VTK XML unstructured grids (ASCII): nodal `u` and `s`, element `E`,
//! `region` and `H`.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use pfrac_core::assembly::FieldState;
use pfrac_core::materials::MaterialField;
use pfrac_core::mesh::Mesh;

use crate::{create_file, fmt17, OutputError};

/// VTK cell type code of the linear tetrahedron.
pub const VTK_TETRA: u8 = 10;

fn array<I: IntoIterator<Item = String>>(out: &mut String, kind: &str, name: Option<&str>, components: usize, values: I) {
    let _ = write!(out, "        <DataArray type=\"{kind}\"");
    if let Some(n) = name {
        let _ = write!(out, " Name=\"{n}\"");
    }
    if components > 1 {
        let _ = write!(out, " NumberOfComponents=\"{components}\"");
    }
    out.push_str(" format=\"ascii\">\n");
    for (i, v) in values.into_iter().enumerate() {
        out.push_str(if i % components == 0 { "          " } else { " " });
        out.push_str(&v);
        if (i + 1) % components == 0 {
            out.push('\n');
        }
    }
    out.push_str("        </DataArray>\n");
}

fn floats(v: &[f64]) -> impl Iterator<Item = String> + '_ {
    v.iter().map(|&x| fmt17(x))
}

/// The document as a string; byte-identical for identical inputs.
pub fn vtu_document(mesh: &Mesh, state: &FieldState, materials: &MaterialField) -> String {
    let (n, m) = (mesh.node_count(), mesh.tet_count());
    let mut out = String::with_capacity(64 * (n + m));
    out.push_str("<?xml version=\"1.0\"?>\n");
    out.push_str("<VTKFile type=\"UnstructuredGrid\" version=\"1.0\" byte_order=\"LittleEndian\" header_type=\"UInt64\">\n");
    out.push_str("  <UnstructuredGrid>\n");
    let _ = writeln!(out, "    <Piece NumberOfPoints=\"{n}\" NumberOfCells=\"{m}\">");

    out.push_str("      <PointData Scalars=\"s\" Vectors=\"u\">\n");
    array(&mut out, "Float64", Some("u"), 3, floats(&state.u));
    array(&mut out, "Float64", Some("s"), 1, floats(&state.s));
    out.push_str("      </PointData>\n");

    out.push_str("      <CellData Scalars=\"E\">\n");
    let e: Vec<f64> = materials.elements().iter().map(|m| m.e).collect();
    array(&mut out, "Float64", Some("E"), 1, floats(&e));
    array(&mut out, "Int32", Some("region"), 1, mesh.region_tags().iter().map(|r| r.to_string()));
    array(&mut out, "Float64", Some("H"), 1, floats(&state.h));
    out.push_str("      </CellData>\n");

    out.push_str("      <Points>\n");
    array(&mut out, "Float64", None, 3, mesh.nodes().iter().flatten().map(|&x| fmt17(x)));
    out.push_str("      </Points>\n");

    out.push_str("      <Cells>\n");
    array(&mut out, "Int64", Some("connectivity"), 4, mesh.tets().iter().flatten().map(|i| i.to_string()));
    array(&mut out, "Int64", Some("offsets"), 1, (1..=m).map(|i| (4 * i).to_string()));
    array(&mut out, "UInt8", Some("types"), 1, (0..m).map(|_| VTK_TETRA.to_string()));
    out.push_str("      </Cells>\n");

    out.push_str("    </Piece>\n  </UnstructuredGrid>\n</VTKFile>\n");
    out
}

pub fn write_vtu(mesh: &Mesh, state: &FieldState, materials: &MaterialField, path: &Path) -> Result<(), OutputError> {
    let mut f = create_file(path)?;
    f.write_all(vtu_document(mesh, state, materials).as_bytes())
        .and_then(|_| f.flush())
        .map_err(|e| OutputError::new(path, e))
}
