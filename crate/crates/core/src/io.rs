//! AFRAW field files, PGM snapshots, cohort manifests and CSV text.
//!
//! An AFRAW file is one ASCII header line
//! `AFRAW v1 <kind> <d> <dims...> <spacing...>` followed by a little-endian
//! payload: `f32` per component for `scalar` and `vector` (components
//! interleaved, x fastest), `u32` per voxel for `label`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{DeformationMap, GridShape, LabelField, ScalarField, VectorField};
use crate::scalar::Real;

const MAGIC: &str = "AFRAW";
const VERSION: &str = "v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldKind {
    Scalar,
    Vector,
    Label,
}

impl FieldKind {
    pub fn name(self) -> &'static str {
        match self {
            FieldKind::Scalar => "scalar",
            FieldKind::Vector => "vector",
            FieldKind::Label => "label",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "scalar" => Ok(FieldKind::Scalar),
            "vector" => Ok(FieldKind::Vector),
            "label" => Ok(FieldKind::Label),
            other => Err(Error::format("kind", format!("unknown field kind {other:?}"))),
        }
    }
}

/// Any field an AFRAW file can hold.
#[derive(Clone, Debug, PartialEq)]
pub enum Field<T> {
    Scalar(ScalarField<T>),
    Vector(VectorField<T>),
    Label(LabelField),
}

impl<T: Real> Field<T> {
    pub fn kind(&self) -> FieldKind {
        match self {
            Field::Scalar(_) => FieldKind::Scalar,
            Field::Vector(_) => FieldKind::Vector,
            Field::Label(_) => FieldKind::Label,
        }
    }

    pub fn shape(&self) -> &GridShape {
        match self {
            Field::Scalar(f) => f.shape(),
            Field::Vector(f) => f.shape(),
            Field::Label(f) => f.shape(),
        }
    }
}

/// The header line, without its trailing newline.
pub fn header(kind: FieldKind, shape: &GridShape) -> String {
    let mut h = format!("{MAGIC} {VERSION} {} {}", kind.name(), shape.ndim());
    for n in shape.dims() {
        h.push_str(&format!(" {n}"));
    }
    for s in shape.spacing() {
        h.push_str(&format!(" {s}"));
    }
    h
}

pub fn encode<T: Real>(field: &Field<T>) -> Vec<u8> {
    let mut out = header(field.kind(), field.shape()).into_bytes();
    out.push(b'\n');
    let floats = |out: &mut Vec<u8>, vals: &[T]| {
        for v in vals {
            let x = v.to_f32().unwrap_or(f32::NAN);
            out.extend_from_slice(&x.to_le_bytes());
        }
    };
    match field {
        Field::Scalar(f) => floats(&mut out, f.values()),
        Field::Vector(f) => floats(&mut out, f.values()),
        Field::Label(f) => {
            for l in f.labels() {
                out.extend_from_slice(&l.to_le_bytes());
            }
        }
    }
    out
}

fn parse_header(line: &str) -> Result<(FieldKind, GridShape)> {
    let mut tok = line.split_ascii_whitespace();
    if tok.next() != Some(MAGIC) {
        return Err(Error::format("magic", format!("expected {MAGIC:?}")));
    }
    match tok.next() {
        Some(VERSION) => {}
        other => return Err(Error::format("version", format!("unsupported version {other:?}"))),
    }
    let kind = FieldKind::parse(tok.next().unwrap_or(""))?;
    let d: usize = tok
        .next()
        .and_then(|s| s.parse().ok())
        .filter(|d| *d == 2 || *d == 3)
        .ok_or_else(|| Error::format("ndim", "expected 2 or 3"))?;
    let mut dims = Vec::with_capacity(d);
    for a in 0..d {
        let n: usize = tok
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("dims", format!("missing or invalid extent {a}")))?;
        dims.push(n);
    }
    let mut spacing = Vec::with_capacity(d);
    for a in 0..d {
        let s: f64 = tok
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("spacing", format!("missing or invalid spacing {a}")))?;
        spacing.push(s);
    }
    if tok.next().is_some() {
        return Err(Error::format("header", "trailing tokens"));
    }
    let shape = GridShape::with_spacing(&dims, &spacing).map_err(|e| Error::format("dims", e.to_string()))?;
    Ok((kind, shape))
}

pub fn decode<T: Real>(bytes: &[u8]) -> Result<Field<T>> {
    let end = bytes
        .iter()
        .take(4096)
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format("magic", "no header line"))?;
    let line = std::str::from_utf8(&bytes[..end]).map_err(|_| Error::format("header", "not ASCII"))?;
    let (kind, shape) = parse_header(line)?;
    let payload = &bytes[end + 1..];
    let words = match kind {
        FieldKind::Vector => shape.len() * shape.ndim(),
        _ => shape.len(),
    };
    if payload.len() != words * 4 {
        return Err(Error::format(
            "payload",
            format!("expected {} bytes, found {}", words * 4, payload.len()),
        ));
    }
    let chunks = payload.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]);
    let floats = || -> Vec<T> { chunks.clone().map(|b| T::from_f32(f32::from_le_bytes(b)).unwrap_or(T::nan())).collect() };
    Ok(match kind {
        FieldKind::Scalar => Field::Scalar(ScalarField::new(shape, floats())?),
        FieldKind::Vector => Field::Vector(VectorField::new(shape, floats())?),
        FieldKind::Label => Field::Label(
            LabelField::from_labels(shape, chunks.clone().map(u32::from_le_bytes).collect())
                .map_err(|e| Error::format("payload", e.to_string()))?,
        ),
    })
}

pub fn write_field<T: Real>(path: &Path, field: &Field<T>) -> Result<()> {
    fs::write(path, encode(field))?;
    Ok(())
}

pub fn read_field<T: Real>(path: &Path) -> Result<Field<T>> {
    let bytes = fs::read(path)?;
    decode(&bytes).map_err(|e| match e {
        Error::Format { field, reason } => Error::Format {
            field,
            reason: format!("{reason} ({})", path.display()),
        },
        other => other,
    })
}

fn wrong_kind(path: &Path, want: FieldKind, got: FieldKind) -> Error {
    Error::format(
        "kind",
        format!("{} holds a {} field, expected {}", path.display(), got.name(), want.name()),
    )
}

pub fn read_scalar<T: Real>(path: &Path) -> Result<ScalarField<T>> {
    match read_field(path)? {
        Field::Scalar(f) => Ok(f),
        other => Err(wrong_kind(path, FieldKind::Scalar, other.kind())),
    }
}

pub fn read_vector<T: Real>(path: &Path) -> Result<VectorField<T>> {
    match read_field(path)? {
        Field::Vector(f) => Ok(f),
        other => Err(wrong_kind(path, FieldKind::Vector, other.kind())),
    }
}

pub fn read_labels(path: &Path) -> Result<LabelField> {
    match read_field::<f32>(path)? {
        Field::Label(f) => Ok(f),
        other => Err(wrong_kind(path, FieldKind::Label, other.kind())),
    }
}

/// Maps are stored as their displacement.
pub fn read_map<T: Real>(path: &Path) -> Result<DeformationMap<T>> {
    read_vector(path).map(DeformationMap::from_displacement)
}

pub fn write_scalar<T: Real>(path: &Path, f: &ScalarField<T>) -> Result<()> {
    write_field(path, &Field::Scalar(f.clone()))
}

pub fn write_vector<T: Real>(path: &Path, f: &VectorField<T>) -> Result<()> {
    write_field(path, &Field::Vector(f.clone()))
}

pub fn write_labels(path: &Path, f: &LabelField) -> Result<()> {
    write_field::<f32>(path, &Field::Label(f.clone()))
}

pub fn write_map<T: Real>(path: &Path, m: &DeformationMap<T>) -> Result<()> {
    write_vector(path, m.displacement())
}

/// Binary PGM bytes; 3D fields contribute their central z slice.
pub fn encode_pgm<T: Real>(field: &ScalarField<T>) -> Vec<u8> {
    let [nx, ny, nz] = field.shape().extents3();
    let offset = if field.shape().ndim() == 3 { (nz / 2) * nx * ny } else { 0 };
    let mut out = format!("P5\n{nx} {ny}\n255\n").into_bytes();
    for &v in &field.values()[offset..offset + nx * ny] {
        let x = v.to_f64_lossy();
        let x = if x.is_nan() { 0.0 } else { x.clamp(0.0, 1.0) };
        out.push((x * 255.0).round() as u8);
    }
    out
}

pub fn export_pgm<T: Real>(field: &ScalarField<T>, path: &Path) -> Result<()> {
    fs::write(path, encode_pgm(field))?;
    Ok(())
}

/// One cohort member: an image and, optionally, its segmentation.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub labels: Option<PathBuf>,
}

/// Reads `image [labels]` lines; relative paths resolve against the manifest's
/// directory. Blank lines and `#` comments are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    let resolve = |p: &str| {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_ascii_whitespace().collect();
        match parts.as_slice() {
            [img] => out.push(ManifestEntry {
                image: resolve(img),
                labels: None,
            }),
            [img, lab] => out.push(ManifestEntry {
                image: resolve(img),
                labels: Some(resolve(lab)),
            }),
            _ => {
                return Err(Error::format(
                    "manifest",
                    format!("{} line {}: expected `image [labels]`", path.display(), n + 1),
                ))
            }
        }
    }
    if out.is_empty() {
        return Err(Error::format("manifest", format!("{} lists no members", path.display())));
    }
    Ok(out)
}

/// Writes entries as given; paths are stored verbatim.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for e in entries {
        match &e.labels {
            Some(l) => writeln!(f, "{} {}", e.image.display(), l.display())?,
            None => writeln!(f, "{}", e.image.display())?,
        }
    }
    Ok(())
}

/// Comma-separated rows with `\n` endings and no quoting.
pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut text = String::with_capacity(header.len() + rows.iter().map(|r| r.len() + 1).sum::<usize>() + 1);
    text.push_str(header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}
