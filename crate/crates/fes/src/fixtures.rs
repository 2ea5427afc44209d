//! Bundled mesh files.

use crate::complex::{Complex, ComplexError, MeshFile};

pub const NAMES: &[&str] = &[
    "triangle",
    "tetrahedron",
    "tet_boundary",
    "square2",
    "square_agglomerated",
    "square8",
    "annulus",
    "interval",
    "interval2",
    "interval3",
    "square_h4",
    "square_h8",
    "square_h16",
    "counterexample",
];

/// Text of a bundled mesh file.
pub fn text(name: &str) -> Option<&'static str> {
    Some(match name {
        "triangle" => include_str!("../../../fixtures/triangle.json"),
        "tetrahedron" => include_str!("../../../fixtures/tetrahedron.json"),
        "tet_boundary" => include_str!("../../../fixtures/tet_boundary.json"),
        "square2" => include_str!("../../../fixtures/square2.json"),
        "square_agglomerated" => include_str!("../../../fixtures/square_agglomerated.json"),
        "square8" => include_str!("../../../fixtures/square8.json"),
        "annulus" => include_str!("../../../fixtures/annulus.json"),
        "interval" => include_str!("../../../fixtures/interval.json"),
        "interval2" => include_str!("../../../fixtures/interval2.json"),
        "interval3" => include_str!("../../../fixtures/interval3.json"),
        "square_h4" => include_str!("../../../fixtures/square_h4.json"),
        "square_h8" => include_str!("../../../fixtures/square_h8.json"),
        "square_h16" => include_str!("../../../fixtures/square_h16.json"),
        "counterexample" => include_str!("../../../fixtures/counterexample.json"),
        _ => return None,
    })
}

pub fn mesh_file(name: &str) -> Result<MeshFile, ComplexError> {
    MeshFile::parse(text(name).ok_or_else(|| ComplexError::Parse(format!("no bundled mesh {name}")))?)
}

/// Complex of a bundled mesh; panics on an unknown name.
pub fn complex(name: &str) -> Complex {
    mesh_file(name).and_then(|m| m.complex()).unwrap_or_else(|e| panic!("fixture {name}: {e}"))
}
