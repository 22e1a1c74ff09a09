//! File formats: PLY clouds and meshes, OBJ export, PFM depth, RGBA PNG
//! images with the mask in alpha, and the JSON run manifest.
//!
//! Writers are deterministic. Readers reject truncated or trailing data.

use std::fs;
use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cloud::{OrientedPoint, PointCloud};
use crate::grid::{rgb_to_u8, u8_to_rgb, ColorImage, DepthMap, Grid, Mask};
use crate::raster::TriangleMesh;
use crate::{Error, Result, Vec3};

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------- PLY

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return Err(Error::format("PLY", format!("unknown scalar type `{s}`"))),
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }
}

#[derive(Clone, Debug)]
struct Property {
    name: String,
    /// `Some(count type)` for list properties.
    list: Option<Scalar>,
    ty: Scalar,
}

#[derive(Clone, Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

impl Element {
    fn prop(&self, name: &str) -> Option<usize> {
        self.props.iter().position(|p| p.name == name)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum PlyFormat {
    Ascii,
    BinaryLe,
    BinaryBe,
}

struct PlyHeader {
    format: PlyFormat,
    elements: Vec<Element>,
    body_offset: usize,
}

fn parse_ply_header(bytes: &[u8]) -> Result<PlyHeader> {
    let bad = |m: &str| Error::format("PLY", m.to_string());
    let mut offset = 0;
    let mut next_line = || -> Result<&str> {
        let rest = &bytes[offset..];
        let len = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("header not terminated by end_header"))?;
        offset += len + 1;
        std::str::from_utf8(&rest[..len]).map_err(|_| bad("header is not valid text"))
    };
    if next_line()?.trim_end() != "ply" {
        return Err(bad("missing `ply` magic"));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let line = next_line()?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", f, _version] => {
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLe,
                    "binary_big_endian" => PlyFormat::BinaryBe,
                    _ => return Err(bad("unknown format")),
                })
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| bad("bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, ty, name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                el.props.push(Property {
                    name: name.to_string(),
                    list: Some(Scalar::parse(ct)?),
                    ty: Scalar::parse(ty)?,
                });
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| bad("property before element"))?;
                el.props.push(Property {
                    name: name.to_string(),
                    list: None,
                    ty: Scalar::parse(ty)?,
                });
            }
            _ => return Err(bad(&format!("unrecognized header line `{}`", line.trim_end()))),
        }
    }
    Ok(PlyHeader {
        format: format.ok_or_else(|| bad("missing format line"))?,
        elements,
        body_offset: offset,
    })
}

/// Sequential reader of scalar values from a PLY body.
struct BodyReader<'a> {
    format: PlyFormat,
    bytes: &'a [u8],
    pos: usize,
    tokens: std::str::SplitAsciiWhitespace<'a>,
}

impl<'a> BodyReader<'a> {
    fn new(format: PlyFormat, body: &'a [u8]) -> Result<Self> {
        let text = if format == PlyFormat::Ascii {
            std::str::from_utf8(body).map_err(|_| Error::format("PLY", "ascii body is not text"))?
        } else {
            ""
        };
        Ok(Self {
            format,
            bytes: body,
            pos: 0,
            tokens: text.split_ascii_whitespace(),
        })
    }

    fn read(&mut self, ty: Scalar) -> Result<f64> {
        if self.format == PlyFormat::Ascii {
            let tok = self.tokens.next().ok_or_else(|| Error::format("PLY", "truncated body"))?;
            return tok
                .parse::<f64>()
                .map_err(|_| Error::format("PLY", format!("bad number `{tok}`")));
        }
        let n = ty.size();
        let raw = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::format("PLY", "truncated body"))?;
        self.pos += n;
        let mut buf = [0u8; 8];
        buf[..n].copy_from_slice(raw);
        if self.format == PlyFormat::BinaryBe {
            buf[..n].reverse();
        }
        Ok(match ty {
            Scalar::I8 => buf[0] as i8 as f64,
            Scalar::U8 => buf[0] as f64,
            Scalar::I16 => i16::from_le_bytes([buf[0], buf[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([buf[0], buf[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(buf[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(buf),
        })
    }

    fn finish(mut self) -> Result<()> {
        let trailing = match self.format {
            PlyFormat::Ascii => self.tokens.next().is_some(),
            _ => self.pos != self.bytes.len(),
        };
        if trailing {
            Err(Error::format("PLY", "unexpected data after last element"))
        } else {
            Ok(())
        }
    }
}

/// Every element's rows, scalars as f64 and lists as vectors.
struct PlyData {
    elements: Vec<(Element, Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>)>,
}

fn parse_ply(bytes: &[u8]) -> Result<PlyData> {
    let header = parse_ply_header(bytes)?;
    let mut body = BodyReader::new(header.format, &bytes[header.body_offset..])?;
    let mut elements = Vec::new();
    for el in header.elements {
        let mut scalars = Vec::with_capacity(el.count);
        let mut lists = Vec::with_capacity(el.count);
        for _ in 0..el.count {
            let mut row = Vec::with_capacity(el.props.len());
            let mut row_lists = Vec::new();
            for p in &el.props {
                match p.list {
                    None => row.push(body.read(p.ty)?),
                    Some(ct) => {
                        let n = body.read(ct)?;
                        if n < 0.0 || n.fract() != 0.0 {
                            return Err(Error::format("PLY", "bad list length"));
                        }
                        let items = (0..n as usize).map(|_| body.read(p.ty)).collect::<Result<Vec<_>>>()?;
                        row.push(f64::NAN);
                        row_lists.push(items);
                    }
                }
            }
            scalars.push(row);
            lists.push(row_lists);
        }
        elements.push((el, scalars, lists));
    }
    body.finish()?;
    Ok(PlyData { elements })
}

impl PlyData {
    fn element(&self, name: &str) -> Option<&(Element, Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>)> {
        self.elements.iter().find(|(e, _, _)| e.name == name)
    }
}

fn require(el: &Element, name: &str) -> Result<usize> {
    el.prop(name).ok_or_else(|| Error::MissingProperty(name.to_string()))
}

fn color_scale(el: &Element, idx: usize) -> f64 {
    match el.props[idx].ty {
        Scalar::F32 | Scalar::F64 => 1.0,
        Scalar::U16 => 1.0 / 65535.0,
        _ => 1.0 / 255.0,
    }
}

pub fn encode_cloud_ply(pc: &PointCloud) -> Result<Vec<u8>> {
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property float nx\nproperty float ny\nproperty float nz\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\n\
         property uchar step\nend_header\n",
        pc.len()
    )
    .into_bytes();
    out.reserve(pc.len() * 28);
    for p in pc.points() {
        let step = u8::try_from(p.step)
            .map_err(|_| Error::invalid(format!("step {} does not fit the PLY uchar property", p.step)))?;
        for v in [p.position, p.orientation] {
            for c in v.iter() {
                out.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&rgb_to_u8(p.color));
        out.push(step);
    }
    Ok(out)
}

pub fn decode_cloud_ply(bytes: &[u8]) -> Result<PointCloud> {
    let data = parse_ply(bytes)?;
    let Some((el, rows, _)) = data.element("vertex") else {
        return Err(Error::format("PLY", "no vertex element"));
    };
    let names = ["x", "y", "z", "nx", "ny", "nz", "red", "green", "blue"];
    let idx: Vec<usize> = names.iter().map(|n| require(el, n)).collect::<Result<_>>()?;
    let step = el.prop("step");
    let cs = color_scale(el, idx[6]);
    let points = rows
        .iter()
        .map(|r| OrientedPoint {
            position: Vec3::new(r[idx[0]], r[idx[1]], r[idx[2]]),
            orientation: Vec3::new(r[idx[3]], r[idx[4]], r[idx[5]]),
            color: [(r[idx[6]] * cs) as f32, (r[idx[7]] * cs) as f32, (r[idx[8]] * cs) as f32],
            step: step.map_or(0, |s| r[s] as u32),
        })
        .collect();
    Ok(PointCloud::new(points))
}

pub fn write_cloud(path: impl AsRef<Path>, pc: &PointCloud) -> Result<()> {
    write_file(path.as_ref(), &encode_cloud_ply(pc)?)
}

pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    decode_cloud_ply(&read_file(path.as_ref())?)
}

pub fn encode_mesh_ply(mesh: &TriangleMesh) -> Vec<u8> {
    let has_normals = mesh.normals.is_some();
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n",
        mesh.vertices.len()
    );
    if has_normals {
        header.push_str("property float nx\nproperty float ny\nproperty float nz\n");
    }
    header.push_str(&format!(
        "property uchar red\nproperty uchar green\nproperty uchar blue\nelement face {}\n\
         property list uchar int vertex_indices\nend_header\n",
        mesh.faces.len()
    ));
    let mut out = header.into_bytes();
    for (i, v) in mesh.vertices.iter().enumerate() {
        for c in v.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        if let Some(n) = &mesh.normals {
            for c in n[i].iter() {
                out.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&rgb_to_u8(mesh.colors.get(i).copied().unwrap_or([0.7; 3])));
    }
    for f in &mesh.faces {
        out.push(3);
        for &i in f {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    out
}

/// Polygons with more than three corners are fan-triangulated; missing
/// vertex colors default to light gray.
pub fn decode_mesh_ply(bytes: &[u8]) -> Result<TriangleMesh> {
    let data = parse_ply(bytes)?;
    let Some((vel, vrows, _)) = data.element("vertex") else {
        return Err(Error::format("PLY", "no vertex element"));
    };
    let xyz: Vec<usize> = ["x", "y", "z"].iter().map(|n| require(vel, n)).collect::<Result<_>>()?;
    let rgb: Option<Vec<usize>> = ["red", "green", "blue"].iter().map(|n| vel.prop(n)).collect();
    let nrm: Option<Vec<usize>> = ["nx", "ny", "nz"].iter().map(|n| vel.prop(n)).collect();
    let mut mesh = TriangleMesh::default();
    for r in vrows {
        mesh.vertices.push(Vec3::new(r[xyz[0]], r[xyz[1]], r[xyz[2]]));
        mesh.colors.push(match &rgb {
            Some(c) => {
                let s = color_scale(vel, c[0]);
                [(r[c[0]] * s) as f32, (r[c[1]] * s) as f32, (r[c[2]] * s) as f32]
            }
            None => [0.7; 3],
        });
    }
    if let Some(n) = &nrm {
        mesh.normals = Some(vrows.iter().map(|r| Vec3::new(r[n[0]], r[n[1]], r[n[2]])).collect());
    }
    if let Some((fel, _, flists)) = data.element("face") {
        let li = fel
            .props
            .iter()
            .filter(|p| p.list.is_some())
            .position(|p| p.name == "vertex_indices" || p.name == "vertex_index")
            .ok_or_else(|| Error::MissingProperty("vertex_indices".into()))?;
        for lists in flists {
            let idx = &lists[li];
            if idx.len() < 3 {
                return Err(Error::format("PLY", "face with fewer than 3 vertices"));
            }
            let as_u32 = |v: f64| -> Result<u32> {
                if v < 0.0 || v as usize >= mesh.vertices.len() {
                    Err(Error::format("PLY", format!("face index {v} out of range")))
                } else {
                    Ok(v as u32)
                }
            };
            for k in 1..idx.len() - 1 {
                mesh.faces.push([as_u32(idx[0])?, as_u32(idx[k])?, as_u32(idx[k + 1])?]);
            }
        }
    }
    Ok(mesh)
}

pub fn write_mesh(path: impl AsRef<Path>, mesh: &TriangleMesh) -> Result<()> {
    write_file(path.as_ref(), &encode_mesh_ply(mesh))
}

pub fn read_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    decode_mesh_ply(&read_file(path.as_ref())?)
}

pub fn encode_obj(mesh: &TriangleMesh) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    for v in &mesh.vertices {
        let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in &mesh.faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

pub fn write_obj(path: impl AsRef<Path>, mesh: &TriangleMesh) -> Result<()> {
    write_file(path.as_ref(), encode_obj(mesh).as_bytes())
}

// ---------------------------------------------------------------- PFM

pub fn encode_pfm(depth: &DepthMap) -> Vec<u8> {
    let (w, h) = depth.dims();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(w * h * 4);
    for y in (0..h).rev() {
        for x in 0..w {
            out.extend_from_slice(&depth.get(x, y).to_le_bytes());
        }
    }
    out
}

pub fn decode_pfm(bytes: &[u8]) -> Result<DepthMap> {
    let bad = |m: &str| Error::format("PFM", m.to_string());
    // Three whitespace-terminated header tokens after the magic line.
    let mut pos = 0;
    let mut tokens = Vec::new();
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not text"))?);
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("truncated header"));
    }
    pos += 1;
    match tokens[0] {
        "Pf" => {}
        "PF" => return Err(bad("three-channel PFM is not a depth map")),
        _ => return Err(bad("missing Pf magic")),
    }
    let w: usize = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = tokens[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = tokens[3].parse().map_err(|_| bad("bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(bad("scale must be non-zero"));
    }
    let little = scale < 0.0;
    let body = &bytes[pos..];
    if body.len() != w * h * 4 {
        return Err(bad(&format!("expected {} raster bytes, found {}", w * h * 4, body.len())));
    }
    let mut depth = DepthMap::new(w, h, 0.0);
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let raw: [u8; 4] = chunk.try_into().unwrap();
        let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
        let (x, row) = (i % w, i / w);
        depth.set(x, h - 1 - row, v);
    }
    Ok(depth)
}

pub fn write_depth(path: impl AsRef<Path>, depth: &DepthMap) -> Result<()> {
    write_file(path.as_ref(), &encode_pfm(depth))
}

pub fn read_depth(path: impl AsRef<Path>) -> Result<DepthMap> {
    decode_pfm(&read_file(path.as_ref())?)
}

// ---------------------------------------------------------------- PNG

fn png_err(e: impl std::fmt::Display) -> Error {
    Error::format("PNG", e.to_string())
}

/// RGBA8 with alpha 255 on mask pixels and 0 elsewhere.
pub fn encode_png(color: &ColorImage, mask: &Mask) -> Result<Vec<u8>> {
    if !color.same_dims(mask) {
        return Err(Error::invalid("image and mask dimensions differ"));
    }
    let (w, h) = color.dims();
    let mut raw = Vec::with_capacity(w * h * 4);
    for (c, &m) in color.data().iter().zip(mask.data()) {
        raw.extend_from_slice(&rgb_to_u8(*c));
        raw.push(if m { 255 } else { 0 });
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Rgba);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&raw).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
    }
    Ok(out)
}

/// Decoded pixels plus whether the file carried an alpha channel.
struct DecodedPng {
    color: ColorImage,
    alpha: Option<Grid<u8>>,
    luma: Grid<u8>,
}

fn decode_png_raw(bytes: &[u8]) -> Result<DecodedPng> {
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(png_err)?;
    if reader.info().bit_depth == png::BitDepth::Sixteen {
        return Err(Error::format("PNG", "16-bit PNG is not supported; expected 8-bit RGBA"));
    }
    let size = reader.output_buffer_size().ok_or_else(|| png_err("image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(png_err)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(png_err("palette was not expanded")),
    };
    let row = info.line_size;
    let px = |x: usize, y: usize| &buf[y * row + x * channels..y * row + (x + 1) * channels];
    let rgb = |p: &[u8]| -> [u8; 3] {
        if channels >= 3 {
            [p[0], p[1], p[2]]
        } else {
            [p[0]; 3]
        }
    };
    let color = Grid::from_fn(w, h, |x, y| u8_to_rgb(rgb(px(x, y))));
    let luma = Grid::from_fn(w, h, |x, y| {
        let c = rgb(px(x, y));
        ((c[0] as u32 * 299 + c[1] as u32 * 587 + c[2] as u32 * 114 + 500) / 1000) as u8
    });
    let alpha = (channels == 2 || channels == 4).then(|| Grid::from_fn(w, h, |x, y| px(x, y)[channels - 1]));
    Ok(DecodedPng { color, alpha, luma })
}

/// Color plus mask (alpha ≥ 128). Files without alpha get a full mask.
pub fn decode_png(bytes: &[u8]) -> Result<(ColorImage, Mask)> {
    let d = decode_png_raw(bytes)?;
    let mask = match &d.alpha {
        Some(a) => a.map(|&v| v >= 128),
        None => Mask::new(d.color.width(), d.color.height(), true),
    };
    Ok((d.color, mask))
}

pub fn write_image(path: impl AsRef<Path>, color: &ColorImage, mask: &Mask) -> Result<()> {
    write_file(path.as_ref(), &encode_png(color, mask)?)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<(ColorImage, Mask)> {
    decode_png(&read_file(path.as_ref())?)
}

/// White-on-transparent rendering of a mask.
pub fn write_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let color = mask.map(|&m| if m { [1.0; 3] } else { [0.0; 3] });
    write_image(path, &color, mask)
}

/// A mask from a PNG: the alpha channel when present, otherwise luminance
/// ≥ 128 (plain black/white mask images).
pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let d = decode_png_raw(&read_file(path.as_ref())?)?;
    Ok(match d.alpha {
        Some(a) => a.map(|&v| v >= 128),
        None => d.luma.map(|&v| v >= 128),
    })
}

// ---------------------------------------------------------------- manifest

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub created_unix_s: u64,
    pub finished_unix_s: u64,
    pub config: serde_json::Value,
    pub files: Vec<FileEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    /// Inventory of every regular file under `dir` (recursively, sorted,
    /// excluding `manifest.json` itself).
    pub fn scan(dir: impl AsRef<Path>, config: serde_json::Value, created_unix_s: u64) -> Result<Self> {
        let dir = dir.as_ref();
        let mut paths = Vec::new();
        collect_files(dir, &mut paths)?;
        paths.sort();
        let mut files = Vec::new();
        for p in paths {
            let rel = p.strip_prefix(dir).unwrap_or(&p).to_string_lossy().replace('\\', "/");
            if rel == "manifest.json" {
                continue;
            }
            let mut bytes = Vec::new();
            fs::File::open(&p)
                .and_then(|mut f| f.read_to_end(&mut bytes))
                .map_err(|e| Error::io(&p, e))?;
            files.push(FileEntry {
                path: rel,
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            });
        }
        Ok(Self {
            tool: "viewloom".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            created_unix_s,
            finished_unix_s: unix_now(),
            config,
            files,
        })
    }

    pub fn write(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let path = dir.as_ref().join("manifest.json");
        write_file(&path, serde_json::to_string_pretty(self)?.as_bytes())?;
        Ok(path)
    }

    /// Files whose current checksum no longer matches the inventory.
    pub fn verify(&self, dir: impl AsRef<Path>) -> Result<Vec<String>> {
        let mut stale = Vec::new();
        for f in &self.files {
            let p = dir.as_ref().join(&f.path);
            match fs::read(&p) {
                Ok(b) if sha256_hex(&b) == f.sha256 => {}
                _ => stale.push(f.path.clone()),
            }
        }
        Ok(stale)
    }
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}
