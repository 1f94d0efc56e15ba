//! Gmsh MSH meshes. ASCII versions 2.2 and 4.1 are read; 2.2 is written.
//!
//! Only nodes used by a tetrahedron are kept, renumbered from zero in file
//! order. Tetrahedra take their physical tag as region tag and triangles
//! become boundary facets when they are a face of exactly one tetrahedron.
//! Points and line segments are skipped; any other element type is an error.

use std::collections::HashMap;
use std::io::{Read, Write};

use pfrac_core::mesh::{exterior_faces, BoundaryFacet, Mesh, MeshError};
use thiserror::Error;

use crate::fmt17;

#[derive(Debug, Error)]
pub enum MshError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unsupported MSH version {0} (expected 2.2 or 4.1)")]
    Version(String),
    #[error("binary MSH files are not supported")]
    Binary,
    #[error("line {line}: unsupported element type {code}")]
    UnsupportedElement { code: i64, line: usize },
    #[error("line {line}: element references undefined node {node}")]
    DanglingNode { node: u64, line: usize },
    #[error("missing section ${0}")]
    MissingSection(&'static str),
    #[error("the mesh has no tetrahedra")]
    NoTetrahedra,
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

fn syntax(line: usize, message: impl Into<String>) -> MshError {
    MshError::Syntax {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Version {
    V22,
    V41,
}

/// Whitespace-separated tokens of one section, with their line numbers.
struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
    end_line: usize,
}

impl<'a> Tokens<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str), MshError> {
        let item = self
            .items
            .get(self.pos)
            .copied()
            .ok_or_else(|| syntax(self.end_line, format!("section ended before {what}")))?;
        self.pos += 1;
        Ok(item)
    }

    fn int(&mut self, what: &str) -> Result<(usize, i64), MshError> {
        let (line, tok) = self.next(what)?;
        tok.parse()
            .map(|v| (line, v))
            .map_err(|_| syntax(line, format!("expected integer {what}, found '{tok}'")))
    }

    fn count(&mut self, what: &str) -> Result<usize, MshError> {
        let (line, v) = self.int(what)?;
        usize::try_from(v).map_err(|_| syntax(line, format!("negative {what}")))
    }

    fn tag(&mut self, what: &str) -> Result<(usize, u64), MshError> {
        let (line, v) = self.int(what)?;
        u64::try_from(v)
            .map(|t| (line, t))
            .map_err(|_| syntax(line, format!("negative {what}")))
    }

    fn real(&mut self, what: &str) -> Result<f64, MshError> {
        let (line, tok) = self.next(what)?;
        tok.parse()
            .map_err(|_| syntax(line, format!("expected number {what}, found '{tok}'")))
    }

    fn finish(&self, name: &str) -> Result<(), MshError> {
        match self.items.get(self.pos) {
            Some(&(line, tok)) => Err(syntax(line, format!("unexpected '{tok}' in ${name}"))),
            None => Ok(()),
        }
    }
}

struct Section<'a> {
    name: &'a str,
    line: usize,
    tokens: Tokens<'a>,
}

fn sections(text: &str) -> Result<Vec<Section<'_>>, MshError> {
    let mut out = Vec::new();
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    while let Some((line, l)) = lines.next() {
        if l.is_empty() {
            continue;
        }
        let Some(name) = l.strip_prefix('$') else {
            return Err(syntax(line, format!("expected a section header, found '{l}'")));
        };
        if name.starts_with("End") {
            return Err(syntax(line, format!("'{l}' without an open section")));
        }
        let end = format!("$End{name}");
        let mut items = Vec::new();
        let mut end_line = None;
        for (i, body) in lines.by_ref() {
            if body == end {
                end_line = Some(i);
                break;
            }
            if body.starts_with('$') {
                return Err(syntax(i, format!("expected {end}, found '{body}'")));
            }
            items.extend(body.split_whitespace().map(|t| (i, t)));
        }
        let end_line = end_line.ok_or_else(|| syntax(line, format!("{end} not found")))?;
        out.push(Section {
            name,
            line,
            tokens: Tokens {
                items,
                pos: 0,
                end_line,
            },
        });
    }
    Ok(out)
}

fn read_format(s: &mut Section) -> Result<Version, MshError> {
    let (_, version) = s.tokens.next("version")?;
    let (_, file_type) = s.tokens.next("file type")?;
    s.tokens.next("data size")?;
    let version = match version {
        "2.2" | "2.2.0" => Version::V22,
        "4.1" | "4.1.0" => Version::V41,
        other => return Err(MshError::Version(other.to_string())),
    };
    if file_type != "0" {
        return Err(MshError::Binary);
    }
    // binary files append an endianness marker; ASCII ones have nothing more
    s.tokens.finish("MeshFormat")?;
    Ok(version)
}

/// Node count per element for the accepted element types.
fn nodes_per_element(code: i64) -> Option<usize> {
    match code {
        15 => Some(1),
        1 => Some(2),
        2 => Some(3),
        4 => Some(4),
        _ => None,
    }
}

#[derive(Default)]
struct Raw {
    /// Node tag to (file order, coordinates).
    nodes: HashMap<u64, (usize, [f64; 3])>,
    tets: Vec<([u64; 4], i32, usize)>,
    triangles: Vec<([u64; 3], i32, usize)>,
}

impl Raw {
    fn add_node(&mut self, tag: u64, p: [f64; 3], line: usize) -> Result<(), MshError> {
        let order = self.nodes.len();
        if self.nodes.insert(tag, (order, p)).is_some() {
            return Err(syntax(line, format!("node {tag} defined twice")));
        }
        Ok(())
    }

    fn add_element(&mut self, code: i64, nodes: &[u64], physical: i32, line: usize) {
        match code {
            2 => self.triangles.push(([nodes[0], nodes[1], nodes[2]], physical, line)),
            4 => self.tets.push(([nodes[0], nodes[1], nodes[2], nodes[3]], physical, line)),
            _ => {}
        }
    }
}

fn physical(line: usize, tag: i64) -> Result<i32, MshError> {
    i32::try_from(tag).map_err(|_| syntax(line, format!("physical tag {tag} out of range")))
}

fn read_nodes_v22(s: &mut Section, raw: &mut Raw) -> Result<(), MshError> {
    let n = s.tokens.count("node count")?;
    for _ in 0..n {
        let (line, tag) = s.tokens.tag("node tag")?;
        let p = [s.tokens.real("x")?, s.tokens.real("y")?, s.tokens.real("z")?];
        raw.add_node(tag, p, line)?;
    }
    s.tokens.finish("Nodes")
}

fn read_elements_v22(s: &mut Section, raw: &mut Raw) -> Result<(), MshError> {
    let n = s.tokens.count("element count")?;
    let mut nodes = Vec::with_capacity(4);
    for _ in 0..n {
        let (line, _) = s.tokens.int("element tag")?;
        let (_, code) = s.tokens.int("element type")?;
        let per = nodes_per_element(code).ok_or(MshError::UnsupportedElement { code, line })?;
        let n_tags = s.tokens.count("tag count")?;
        let mut phys = 0;
        for k in 0..n_tags {
            let (l, t) = s.tokens.int("tag")?;
            if k == 0 {
                phys = physical(l, t)?;
            }
        }
        nodes.clear();
        for _ in 0..per {
            nodes.push(s.tokens.tag("node")?.1);
        }
        raw.add_element(code, &nodes, phys, line);
    }
    s.tokens.finish("Elements")
}

/// Physical tag of each (dimension, entity) pair, 0 when it has none.
fn read_entities_v41(s: &mut Section) -> Result<HashMap<(i64, i64), i32>, MshError> {
    let mut out = HashMap::new();
    let counts = [
        s.tokens.count("point count")?,
        s.tokens.count("curve count")?,
        s.tokens.count("surface count")?,
        s.tokens.count("volume count")?,
    ];
    for (dim, &count) in counts.iter().enumerate() {
        for _ in 0..count {
            let (_, tag) = s.tokens.int("entity tag")?;
            let n_coords = if dim == 0 { 3 } else { 6 };
            for _ in 0..n_coords {
                s.tokens.real("entity bounds")?;
            }
            let n_phys = s.tokens.count("physical tag count")?;
            let mut phys = 0;
            for k in 0..n_phys {
                let (l, t) = s.tokens.int("physical tag")?;
                if k == 0 {
                    phys = physical(l, t)?;
                }
            }
            if dim > 0 {
                let n_bound = s.tokens.count("bounding entity count")?;
                for _ in 0..n_bound {
                    s.tokens.int("bounding entity")?;
                }
            }
            out.insert((dim as i64, tag), phys);
        }
    }
    s.tokens.finish("Entities")?;
    Ok(out)
}

fn read_nodes_v41(s: &mut Section, raw: &mut Raw) -> Result<(), MshError> {
    let blocks = s.tokens.count("entity block count")?;
    s.tokens.count("node count")?;
    s.tokens.int("minimum node tag")?;
    s.tokens.int("maximum node tag")?;
    let mut tags = Vec::new();
    for _ in 0..blocks {
        let (_, dim) = s.tokens.int("entity dimension")?;
        s.tokens.int("entity tag")?;
        let (pline, parametric) = s.tokens.int("parametric flag")?;
        if parametric != 0 && parametric != 1 {
            return Err(syntax(pline, "parametric flag must be 0 or 1"));
        }
        let n = s.tokens.count("block node count")?;
        tags.clear();
        for _ in 0..n {
            tags.push(s.tokens.tag("node tag")?);
        }
        let extra = if parametric == 1 { dim.max(0) as usize } else { 0 };
        for &(line, tag) in &tags {
            let p = [s.tokens.real("x")?, s.tokens.real("y")?, s.tokens.real("z")?];
            for _ in 0..extra {
                s.tokens.real("parametric coordinate")?;
            }
            raw.add_node(tag, p, line)?;
        }
    }
    s.tokens.finish("Nodes")
}

fn read_elements_v41(s: &mut Section, raw: &mut Raw, entities: &HashMap<(i64, i64), i32>) -> Result<(), MshError> {
    let blocks = s.tokens.count("entity block count")?;
    s.tokens.count("element count")?;
    s.tokens.int("minimum element tag")?;
    s.tokens.int("maximum element tag")?;
    let mut nodes = Vec::with_capacity(4);
    for _ in 0..blocks {
        let (_, dim) = s.tokens.int("entity dimension")?;
        let (_, entity) = s.tokens.int("entity tag")?;
        let (line, code) = s.tokens.int("element type")?;
        let per = nodes_per_element(code).ok_or(MshError::UnsupportedElement { code, line })?;
        let n = s.tokens.count("block element count")?;
        let phys = entities.get(&(dim, entity)).copied().unwrap_or(0);
        for _ in 0..n {
            let (line, _) = s.tokens.int("element tag")?;
            nodes.clear();
            for _ in 0..per {
                nodes.push(s.tokens.tag("node")?.1);
            }
            raw.add_element(code, &nodes, phys, line);
        }
    }
    s.tokens.finish("Elements")
}

/// Parses an ASCII MSH 2.2 or 4.1 document.
pub fn parse_msh_str(text: &str) -> Result<Mesh, MshError> {
    let mut sections = sections(text)?;
    let format = sections
        .iter_mut()
        .find(|s| s.name == "MeshFormat")
        .ok_or(MshError::MissingSection("MeshFormat"))?;
    let version = read_format(format)?;
    let mut raw = Raw::default();
    let mut entities = HashMap::new();
    let mut seen_nodes = false;
    let mut seen_elements = false;
    for s in sections.iter_mut() {
        match (s.name, version) {
            ("Entities", Version::V41) => entities = read_entities_v41(s)?,
            ("Nodes", Version::V22) => read_nodes_v22(s, &mut raw)?,
            ("Nodes", Version::V41) => read_nodes_v41(s, &mut raw)?,
            ("Elements", Version::V22) => read_elements_v22(s, &mut raw)?,
            ("Elements", Version::V41) => read_elements_v41(s, &mut raw, &entities)?,
            _ => continue,
        }
        match s.name {
            "Nodes" if seen_nodes => return Err(syntax(s.line, "second $Nodes section")),
            "Elements" if seen_elements => return Err(syntax(s.line, "second $Elements section")),
            "Nodes" => seen_nodes = true,
            "Elements" => seen_elements = true,
            _ => {}
        }
    }
    if !seen_nodes {
        return Err(MshError::MissingSection("Nodes"));
    }
    if !seen_elements {
        return Err(MshError::MissingSection("Elements"));
    }
    assemble(raw)
}

fn assemble(raw: Raw) -> Result<Mesh, MshError> {
    if raw.tets.is_empty() {
        return Err(MshError::NoTetrahedra);
    }
    let lookup = |tag: u64, line: usize| raw.nodes.get(&tag).ok_or(MshError::DanglingNode { node: tag, line });
    // keep the nodes used by tets, in file order
    let mut used: Vec<(usize, u64)> = Vec::new();
    let mut flagged = HashMap::new();
    for (nodes, _, line) in &raw.tets {
        for &t in nodes {
            let &(order, _) = lookup(t, *line)?;
            if flagged.insert(t, ()).is_none() {
                used.push((order, t));
            }
        }
    }
    used.sort_unstable();
    let index: HashMap<u64, usize> = used.iter().enumerate().map(|(i, &(_, t))| (t, i)).collect();
    let coords: Vec<[f64; 3]> = used.iter().map(|&(_, t)| raw.nodes[&t].1).collect();
    let tets: Vec<[usize; 4]> = raw.tets.iter().map(|(n, _, _)| n.map(|t| index[&t])).collect();
    let regions: Vec<i32> = raw.tets.iter().map(|&(_, r, _)| r).collect();

    let mut exterior: HashMap<[usize; 3], ()> = HashMap::new();
    for f in exterior_faces(&tets) {
        let mut key = f;
        key.sort_unstable();
        exterior.insert(key, ());
    }
    let mut facets = Vec::new();
    for (nodes, tag, line) in &raw.triangles {
        for &t in nodes {
            lookup(t, *line)?;
        }
        let Some(mapped) = nodes.iter().map(|t| index.get(t).copied()).collect::<Option<Vec<_>>>() else {
            continue;
        };
        let mut key = [mapped[0], mapped[1], mapped[2]];
        key.sort_unstable();
        if exterior.contains_key(&key) {
            facets.push(BoundaryFacet {
                nodes: [mapped[0], mapped[1], mapped[2]],
                tag: *tag,
            });
        }
    }
    Ok(Mesh::new_reoriented(coords, tets, facets, regions)?)
}

pub fn parse_msh<R: Read>(mut reader: R) -> Result<Mesh, MshError> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    parse_msh_str(&String::from_utf8_lossy(&bytes))
}

/// Writes `mesh` as ASCII MSH 2.2. Facets come first, then tetrahedra;
/// both carry their tag as physical and elementary tag.
pub fn write_msh<W: Write>(mesh: &Mesh, mut w: W) -> std::io::Result<()> {
    writeln!(w, "$MeshFormat\n2.2 0 8\n$EndMeshFormat")?;
    writeln!(w, "$Nodes\n{}", mesh.node_count())?;
    for (i, p) in mesh.nodes().iter().enumerate() {
        writeln!(w, "{} {} {} {}", i + 1, fmt17(p[0]), fmt17(p[1]), fmt17(p[2]))?;
    }
    writeln!(w, "$EndNodes")?;
    writeln!(w, "$Elements\n{}", mesh.facets().len() + mesh.tet_count())?;
    let mut id = 0;
    for f in mesh.facets() {
        id += 1;
        let [a, b, c] = f.nodes;
        writeln!(w, "{id} 2 2 {0} {0} {1} {2} {3}", f.tag, a + 1, b + 1, c + 1)?;
    }
    for (t, &r) in mesh.tets().iter().zip(mesh.region_tags()) {
        id += 1;
        writeln!(w, "{id} 4 2 {r} {r} {} {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1, t[3] + 1)?;
    }
    writeln!(w, "$EndElements")?;
    w.flush()
}
