//! PLY reading and writing.
//!
//! Splat files follow the layout produced by the common 3DGS training code:
//! one `vertex` element with `x y z f_dc_0..2 [f_rest_*] opacity scale_0..2 rot_0..3`,
//! binary little-endian. Mesh files may be ASCII or binary little-endian with a
//! `vertex` element and a `face` element carrying a vertex index list.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::splat::SplatPrimitive;
use crate::error::{Error, Result};
use crate::geometry::Vec3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
    BinaryBigEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    pub fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            ScalarType::I8 => b[0] as i8 as f64,
            ScalarType::U8 => b[0] as f64,
            ScalarType::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PropertyKind {
    Scalar(ScalarType),
    List { count: ScalarType, item: ScalarType },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Property {
    pub name: String,
    pub kind: PropertyKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub name: String,
    pub count: usize,
    pub properties: Vec<Property>,
}

impl Element {
    pub fn property_index(&self, name: &str) -> Option<usize> {
        self.properties.iter().position(|p| p.name == name)
    }

    /// Byte size of one record, if every property is a scalar.
    fn fixed_stride(&self) -> Option<usize> {
        self.properties
            .iter()
            .map(|p| match p.kind {
                PropertyKind::Scalar(t) => Some(t.size()),
                PropertyKind::List { .. } => None,
            })
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct PlyHeader {
    pub format: PlyFormat,
    pub elements: Vec<Element>,
    /// Offset of the first body byte.
    pub body_offset: usize,
}

pub fn parse_header(bytes: &[u8], context: &str) -> Result<PlyHeader> {
    let err = |m: String| Error::format(context, m);
    if !bytes.starts_with(b"ply") {
        return Err(err("missing 'ply' magic".into()));
    }
    let marker = b"end_header";
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or_else(|| err("missing end_header".into()))?;
    let mut body_offset = end + marker.len();
    if bytes.get(body_offset) == Some(&b'\r') {
        body_offset += 1;
    }
    if bytes.get(body_offset) != Some(&b'\n') {
        return Err(err("end_header must be followed by a newline".into()));
    }
    body_offset += 1;

    let text = std::str::from_utf8(&bytes[..end]).map_err(|_| err("header is not UTF-8".into()))?;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    for line in text.lines().skip(1) {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] => {}
            ["comment", ..] | ["obj_info", ..] => {}
            ["format", f, _version] => {
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    "binary_big_endian" => PlyFormat::BinaryBigEndian,
                    other => return Err(err(format!("unknown format '{other}'"))),
                });
            }
            ["element", name, count] => {
                let count = count.parse().map_err(|_| err(format!("bad element count '{count}'")))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            ["property", "list", ct, it, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| err("property before element".into()))?;
                let count = ScalarType::parse(ct).ok_or_else(|| err(format!("bad type '{ct}'")))?;
                let item = ScalarType::parse(it).ok_or_else(|| err(format!("bad type '{it}'")))?;
                el.properties.push(Property {
                    name: name.to_string(),
                    kind: PropertyKind::List { count, item },
                });
            }
            ["property", ty, name] => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| err("property before element".into()))?;
                let t = ScalarType::parse(ty).ok_or_else(|| err(format!("bad type '{ty}'")))?;
                el.properties.push(Property {
                    name: name.to_string(),
                    kind: PropertyKind::Scalar(t),
                });
            }
            _ => return Err(err(format!("unrecognized header line '{line}'"))),
        }
    }
    let format = format.ok_or_else(|| err("missing format line".into()))?;
    Ok(PlyHeader {
        format,
        elements,
        body_offset,
    })
}

const SH_REST_COUNTS: [usize; 4] = [0, 9, 24, 45];

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Loads a 3DGS splat PLY, applying the storage activations.
pub fn load_splat_ply(path: impl AsRef<Path>) -> Result<Vec<SplatPrimitive>> {
    let path = path.as_ref();
    let bytes = read_file(path)?;
    parse_splat_ply(&bytes, &path.display().to_string())
}

pub fn parse_splat_ply(bytes: &[u8], context: &str) -> Result<Vec<SplatPrimitive>> {
    if bytes.is_empty() {
        return Err(Error::format(context, "empty file"));
    }
    let header = parse_header(bytes, context)?;
    if header.format != PlyFormat::BinaryLittleEndian {
        return Err(Error::format(context, "splat files must be binary_little_endian"));
    }
    let vertex_pos = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| Error::format(context, "missing element 'vertex'"))?;
    let vertex = &header.elements[vertex_pos];
    if vertex.count == 0 {
        return Err(Error::format(context, "file contains no splats"));
    }
    let stride = vertex
        .fixed_stride()
        .ok_or_else(|| Error::format(context, "vertex element has list properties"))?;

    let mut offset = header.body_offset;
    for el in &header.elements[..vertex_pos] {
        let s = el
            .fixed_stride()
            .ok_or_else(|| Error::format(context, "list element precedes vertex data"))?;
        offset += s * el.count;
    }

    let required = |name: &str| -> Result<usize> {
        vertex
            .property_index(name)
            .ok_or_else(|| Error::format(context, format!("missing property '{name}'")))
    };
    let pos = [required("x")?, required("y")?, required("z")?];
    let dc = [required("f_dc_0")?, required("f_dc_1")?, required("f_dc_2")?];
    let opacity = required("opacity")?;
    let scale = [required("scale_0")?, required("scale_1")?, required("scale_2")?];
    let rot = [
        required("rot_0")?,
        required("rot_1")?,
        required("rot_2")?,
        required("rot_3")?,
    ];
    let mut rest = Vec::new();
    while let Some(i) = vertex.property_index(&format!("f_rest_{}", rest.len())) {
        rest.push(i);
    }
    if !SH_REST_COUNTS.contains(&rest.len()) {
        return Err(Error::format(
            context,
            format!("unsupported number of f_rest properties: {}", rest.len()),
        ));
    }

    let mut prop_offsets = Vec::with_capacity(vertex.properties.len());
    let mut types = Vec::with_capacity(vertex.properties.len());
    let mut acc = 0;
    for p in &vertex.properties {
        let PropertyKind::Scalar(t) = p.kind else {
            unreachable!()
        };
        prop_offsets.push(acc);
        types.push(t);
        acc += t.size();
    }

    let needed = offset + stride * vertex.count;
    if bytes.len() < needed {
        return Err(Error::format(
            context,
            format!(
                "truncated body: expected {} bytes of vertex data, found {}",
                stride * vertex.count,
                bytes.len().saturating_sub(offset)
            ),
        ));
    }

    let mut splats = Vec::with_capacity(vertex.count);
    for i in 0..vertex.count {
        let record = &bytes[offset + i * stride..offset + (i + 1) * stride];
        let get = |k: usize| -> Result<f32> {
            let v = types[k].read_le(&record[prop_offsets[k]..]) as f32;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::format(
                    context,
                    format!(
                        "record {i}: non-finite value in property '{}'",
                        vertex.properties[k].name
                    ),
                ))
            }
        };
        let raw = RawSplat {
            position: [get(pos[0])?, get(pos[1])?, get(pos[2])?],
            sh_dc: [get(dc[0])?, get(dc[1])?, get(dc[2])?],
            sh_rest: rest.iter().map(|&k| get(k)).collect::<Result<_>>()?,
            opacity_logit: get(opacity)?,
            log_scale: [get(scale[0])?, get(scale[1])?, get(scale[2])?],
            rotation: [get(rot[0])?, get(rot[1])?, get(rot[2])?, get(rot[3])?],
        };
        let splat = raw
            .activate()
            .map_err(|m| Error::format(context, format!("record {i}: {m}")))?;
        splats.push(splat);
    }
    Ok(splats)
}

/// Values as stored in the file, before activation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSplat {
    pub position: [f32; 3],
    pub sh_dc: [f32; 3],
    pub sh_rest: Vec<f32>,
    pub opacity_logit: f32,
    pub log_scale: [f32; 3],
    pub rotation: [f32; 4],
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

impl RawSplat {
    pub fn activate(&self) -> std::result::Result<SplatPrimitive, String> {
        let rotation = normalize_quaternion(self.rotation).ok_or("degenerate rotation quaternion")?;
        let scale = self.log_scale.map(f32::exp);
        if scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err("scale underflows or overflows after exponentiation".into());
        }
        Ok(SplatPrimitive {
            position: self.position,
            rotation,
            scale,
            opacity: sigmoid(self.opacity_logit),
            sh_dc: self.sh_dc,
            sh_rest: self.sh_rest.clone(),
        })
    }

    /// Inverse activations. Each stored value is chosen so that activating it
    /// reproduces the primitive's field bit-for-bit.
    pub fn from_primitive(s: &SplatPrimitive) -> Self {
        RawSplat {
            position: s.position,
            sh_dc: s.sh_dc,
            sh_rest: s.sh_rest.clone(),
            opacity_logit: exact_preimage(s.opacity, logit(s.opacity), sigmoid),
            log_scale: s.scale.map(|v| exact_preimage(v, v.ln(), f32::exp)),
            rotation: s.rotation,
        }
    }
}

fn logit(p: f32) -> f32 {
    (p / (1.0 - p)).ln()
}

/// Searches a few ulps around `guess` for an `x` with `f(x) == target`.
fn exact_preimage(target: f32, guess: f32, f: impl Fn(f32) -> f32) -> f32 {
    if !guess.is_finite() {
        return guess;
    }
    if f(guess) == target {
        return guess;
    }
    let (mut lo, mut hi) = (guess, guess);
    for _ in 0..64 {
        lo = lo.next_down();
        hi = hi.next_up();
        if f(lo) == target {
            return lo;
        }
        if f(hi) == target {
            return hi;
        }
    }
    guess
}

/// Normalizes `(w, x, y, z)` unless it is already unit within 1e-6, which keeps
/// repeated normalization idempotent.
pub fn normalize_quaternion(q: [f32; 4]) -> Option<[f32; 4]> {
    let n2: f64 = q.iter().map(|&v| (v as f64) * (v as f64)).sum();
    let n = n2.sqrt();
    if !(n > 1e-12) || !n.is_finite() {
        return None;
    }
    if (n - 1.0).abs() <= 1e-6 {
        return Some(q);
    }
    Some(q.map(|v| (v as f64 / n) as f32))
}

pub fn write_splat_ply(path: impl AsRef<Path>, splats: &[SplatPrimitive]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_splat_ply(splats)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_splat_ply(splats: &[SplatPrimitive]) -> Result<Vec<u8>> {
    let n_rest = splats.first().map_or(0, |s| s.sh_rest.len());
    if splats.iter().any(|s| s.sh_rest.len() != n_rest) {
        return Err(Error::InvalidArgument(
            "all splats must carry the same number of SH coefficients".into(),
        ));
    }
    let mut out = Vec::with_capacity(256 + splats.len() * (14 + n_rest) * 4);
    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", splats.len()));
    for name in ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"] {
        header.push_str(&format!("property float {name}\n"));
    }
    for i in 0..n_rest {
        header.push_str(&format!("property float f_rest_{i}\n"));
    }
    for name in [
        "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3",
    ] {
        header.push_str(&format!("property float {name}\n"));
    }
    header.push_str("end_header\n");
    out.extend_from_slice(header.as_bytes());
    for s in splats {
        let raw = RawSplat::from_primitive(s);
        let mut put = |v: f32| out.extend_from_slice(&v.to_le_bytes());
        raw.position.iter().for_each(|&v| put(v));
        raw.sh_dc.iter().for_each(|&v| put(v));
        raw.sh_rest.iter().for_each(|&v| put(v));
        put(raw.opacity_logit);
        raw.log_scale.iter().for_each(|&v| put(v));
        raw.rotation.iter().for_each(|&v| put(v));
    }
    Ok(out)
}

/// Vertices and triangles as read from a mesh PLY (polygons fan-triangulated).
pub fn load_mesh_ply(bytes: &[u8], context: &str) -> Result<(Vec<Vec3>, Vec<[u32; 3]>)> {
    let header = parse_header(bytes, context)?;
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut cursor = Cursor::new(&bytes[header.body_offset..], header.format, context);
    for el in &header.elements {
        match el.name.as_str() {
            "vertex" => {
                let idx = |n: &str| {
                    el.property_index(n)
                        .ok_or_else(|| Error::format(context, format!("missing property '{n}'")))
                };
                let (ix, iy, iz) = (idx("x")?, idx("y")?, idx("z")?);
                vertices.reserve(el.count);
                for _ in 0..el.count {
                    let mut v = [0.0f64; 3];
                    for (k, p) in el.properties.iter().enumerate() {
                        let value = cursor.read_property(&p.kind)?;
                        let first = value.first().copied().unwrap_or(0.0);
                        if k == ix {
                            v[0] = first;
                        } else if k == iy {
                            v[1] = first;
                        } else if k == iz {
                            v[2] = first;
                        }
                    }
                    vertices.push(Vec3::new(v[0], v[1], v[2]));
                }
            }
            "face" => {
                let list = el
                    .properties
                    .iter()
                    .position(|p| p.name == "vertex_indices" || p.name == "vertex_index")
                    .ok_or_else(|| Error::format(context, "face element has no vertex index list"))?;
                for _ in 0..el.count {
                    for (k, p) in el.properties.iter().enumerate() {
                        let value = cursor.read_property(&p.kind)?;
                        if k == list {
                            fan_triangulate(&value, &mut triangles, context)?;
                        }
                    }
                }
            }
            _ => {
                for _ in 0..el.count {
                    for p in &el.properties {
                        cursor.read_property(&p.kind)?;
                    }
                }
            }
        }
    }
    Ok((vertices, triangles))
}

fn fan_triangulate(poly: &[f64], out: &mut Vec<[u32; 3]>, context: &str) -> Result<()> {
    if poly.len() < 3 {
        return Err(Error::format(context, "face with fewer than 3 vertices"));
    }
    let idx: Vec<u32> = poly.iter().map(|&v| v as u32).collect();
    for k in 1..idx.len() - 1 {
        out.push([idx[0], idx[k], idx[k + 1]]);
    }
    Ok(())
}

struct Cursor<'a> {
    body: &'a [u8],
    pos: usize,
    format: PlyFormat,
    context: &'a str,
    tokens: Option<std::str::SplitAsciiWhitespace<'a>>,
}

impl<'a> Cursor<'a> {
    fn new(body: &'a [u8], format: PlyFormat, context: &'a str) -> Self {
        let tokens = match format {
            PlyFormat::Ascii => std::str::from_utf8(body).ok().map(|s| s.split_ascii_whitespace()),
            _ => None,
        };
        Cursor {
            body,
            pos: 0,
            format,
            context,
            tokens,
        }
    }

    fn scalar(&mut self, t: ScalarType) -> Result<f64> {
        match self.format {
            PlyFormat::Ascii => {
                let tok = self
                    .tokens
                    .as_mut()
                    .and_then(|it| it.next())
                    .ok_or_else(|| Error::format(self.context, "unexpected end of ASCII body"))?;
                tok.parse::<f64>()
                    .map_err(|_| Error::format(self.context, format!("bad number '{tok}'")))
            }
            PlyFormat::BinaryLittleEndian | PlyFormat::BinaryBigEndian => {
                let n = t.size();
                let b = self
                    .body
                    .get(self.pos..self.pos + n)
                    .ok_or_else(|| Error::format(self.context, "truncated binary body"))?;
                self.pos += n;
                if self.format == PlyFormat::BinaryLittleEndian {
                    Ok(t.read_le(b))
                } else {
                    let mut rev = b.to_vec();
                    rev.reverse();
                    Ok(t.read_le(&rev))
                }
            }
        }
    }

    fn read_property(&mut self, kind: &PropertyKind) -> Result<Vec<f64>> {
        match *kind {
            PropertyKind::Scalar(t) => Ok(vec![self.scalar(t)?]),
            PropertyKind::List { count, item } => {
                let n = self.scalar(count)? as usize;
                (0..n).map(|_| self.scalar(item)).collect()
            }
        }
    }
}

/// Writes a binary little-endian triangle mesh PLY.
pub fn write_mesh_ply(path: impl AsRef<Path>, vertices: &[Vec3], triangles: &[[u32; 3]]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        vertices.len(),
        triangles.len()
    )
    .expect("write to Vec");
    for v in vertices {
        for k in 0..3 {
            out.extend_from_slice(&(v[k] as f32).to_le_bytes());
        }
    }
    for t in triangles {
        out.push(3);
        for &i in t {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(opacity_logit: f32, log_scale: f32) -> RawSplat {
        RawSplat {
            position: [1.0, 2.0, 3.0],
            sh_dc: [0.1, 0.2, 0.3],
            sh_rest: Vec::new(),
            opacity_logit,
            log_scale: [log_scale; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
        }
    }

    fn encode_raw(raws: &[RawSplat]) -> Vec<u8> {
        // Goes through the primitive path only for the header; the body is raw.
        let mut out = Vec::new();
        let mut header = format!("ply\nformat binary_little_endian 1.0\nelement vertex {}\n", raws.len());
        for name in [
            "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1",
            "rot_2", "rot_3",
        ] {
            header.push_str(&format!("property float {name}\n"));
        }
        header.push_str("end_header\n");
        out.extend_from_slice(header.as_bytes());
        for r in raws {
            let vals = r
                .position
                .iter()
                .chain(&r.sh_dc)
                .chain(std::iter::once(&r.opacity_logit))
                .chain(&r.log_scale)
                .chain(&r.rotation);
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    #[test]
    fn opacity_logit_zero_is_half() {
        let s = parse_splat_ply(&encode_raw(&[raw(0.0, 0.0)]), "t").unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].opacity, 0.5);
    }

    #[test]
    fn log_scale_is_exponentiated() {
        let s = parse_splat_ply(&encode_raw(&[raw(0.0, 0.01f32.ln())]), "t").unwrap();
        for v in s[0].scale {
            approx::assert_relative_eq!(v, 0.01, max_relative = 1e-6);
        }
    }

    #[test]
    fn missing_property_is_named() {
        let bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n\0\0\0\0\0\0\0\0\0\0\0\0";
        let err = parse_splat_ply(bytes, "t").unwrap_err().to_string();
        assert!(err.contains("'f_dc_0'"), "{err}");
    }

    #[test]
    fn nan_record_is_rejected_with_index() {
        let mut r = vec![raw(0.0, 0.0), raw(0.0, 0.0)];
        r[1].position[1] = f32::NAN;
        let err = parse_splat_ply(&encode_raw(&r), "t").unwrap_err().to_string();
        assert!(err.contains("record 1"), "{err}");
    }

    #[test]
    fn empty_inputs_are_errors() {
        assert!(parse_splat_ply(b"", "t").is_err());
        assert!(parse_splat_ply(&encode_raw(&[]), "t").is_err());
    }

    #[test]
    fn quaternion_is_normalized_and_idempotent() {
        let mut r = raw(0.0, 0.0);
        r.rotation = [2.0, 0.0, 0.0, 0.0];
        let s = parse_splat_ply(&encode_raw(&[r]), "t").unwrap();
        assert_eq!(s[0].rotation, [1.0, 0.0, 0.0, 0.0]);
        let q = [0.3f32, -0.5, 0.7, 0.1];
        let once = normalize_quaternion(q).unwrap();
        assert_eq!(normalize_quaternion(once).unwrap(), once);
    }

    #[test]
    fn ascii_mesh_with_quad() {
        let text = b"ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        let (v, t) = load_mesh_ply(text, "t").unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(t, vec![[0, 1, 2], [0, 2, 3]]);
    }
}
