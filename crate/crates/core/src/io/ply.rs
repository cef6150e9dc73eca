//! PLY reading and writing in the common 3D Gaussian splatting layout.
//!
//! Gaussians are written as binary little-endian `float` properties
//! `x y z nx ny nz f_dc_0..2 opacity scale_0..2 rot_0..3` plus an `int`
//! property `instance_label`. Opacity is stored as a logit, scales as
//! logarithms, color as the zeroth spherical-harmonic coefficient and the
//! rotation as `w x y z`.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion};

use crate::error::{Error, Result};
use crate::scene::{Gaussian, Label, PointCloud, Vec3, BACKGROUND};

/// Zeroth-order spherical harmonic basis value.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;
/// Stored opacity logits are clamped to this magnitude so that a load/save
/// cycle reproduces the same bytes. Opacities of exactly 0 and 1 are stored
/// as infinite logits.
pub const OPACITY_LOGIT_LIMIT: f64 = 16.0;

const GAUSSIAN_FLOATS: [&str; 17] = [
    "x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
];
const LABEL: &str = "instance_label";

#[derive(Debug, Clone, Copy, PartialEq)]
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
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
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

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Format {
    Ascii,
    BinaryLe,
}

/// Vertex properties of a PLY file as columns of `f64`.
#[derive(Debug, Clone)]
pub struct VertexTable {
    pub count: usize,
    columns: HashMap<String, Vec<f64>>,
}

impl VertexTable {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.get(name).map(Vec::as_slice)
    }

    fn require(&self, name: &str) -> Result<&[f64]> {
        self.column(name)
            .ok_or_else(|| Error::format("ply", format!("missing vertex property `{name}`")))
    }
}

struct Element {
    name: String,
    count: usize,
    props: Vec<(String, Scalar)>,
}

fn parse_header<R: BufRead>(r: &mut R) -> Result<(Format, Vec<Element>)> {
    let err = |m: String| Error::format("ply header", m);
    let mut line = String::new();
    let mut next_line = |line: &mut String| -> Result<bool> {
        line.clear();
        Ok(r.read_line(line)? > 0)
    };
    if !next_line(&mut line)? || line.trim_end() != "ply" {
        return Err(err("missing `ply` magic".into()));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        if !next_line(&mut line)? {
            return Err(err("missing end_header".into()));
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        match tokens.as_slice() {
            ["end_header"] => break,
            ["format", "ascii", _] => format = Some(Format::Ascii),
            ["format", "binary_little_endian", _] => format = Some(Format::BinaryLe),
            ["format", other, ..] => return Err(err(format!("unsupported format `{other}`"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| err(format!("bad element count `{count}`")))?,
                props: Vec::new(),
            }),
            ["property", "list", ..] => return Err(err("list properties are not supported".into())),
            ["property", ty, name] => {
                let scalar = Scalar::parse(ty).ok_or_else(|| err(format!("unknown property type `{ty}`")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| err("property before any element".into()))?
                    .props
                    .push((name.to_string(), scalar));
            }
            _ => return Err(err(format!("unrecognized line `{}`", line.trim_end()))),
        }
    }
    let format = format.ok_or_else(|| err("missing format line".into()))?;
    Ok((format, elements))
}

/// Reads the `vertex` element. It must be the first element; later elements
/// are ignored.
pub fn read_vertices<R: Read>(reader: R) -> Result<VertexTable> {
    let mut r = BufReader::new(reader);
    let (format, elements) = parse_header(&mut r)?;
    let vertex = elements
        .first()
        .filter(|e| e.name == "vertex")
        .ok_or_else(|| Error::format("ply", "first element must be `vertex`"))?;
    let n = vertex.count;
    let mut columns: Vec<Vec<f64>> = vec![Vec::with_capacity(n); vertex.props.len()];
    match format {
        Format::BinaryLe => {
            let stride: usize = vertex.props.iter().map(|p| p.1.size()).sum();
            let mut buf = vec![0u8; stride * n];
            r.read_exact(&mut buf)
                .map_err(|_| Error::format("ply", format!("truncated vertex data: expected {n} vertices")))?;
            for row in buf.chunks_exact(stride.max(1)).take(n) {
                let mut off = 0;
                for (col, (_, ty)) in columns.iter_mut().zip(&vertex.props) {
                    col.push(ty.read_le(&row[off..]));
                    off += ty.size();
                }
            }
        }
        Format::Ascii => {
            let mut text = String::new();
            r.read_to_string(&mut text)?;
            let mut tokens = text.split_whitespace();
            for _ in 0..n {
                for col in columns.iter_mut() {
                    let t = tokens
                        .next()
                        .ok_or_else(|| Error::format("ply", format!("truncated vertex data: expected {n} vertices")))?;
                    col.push(
                        t.parse()
                            .map_err(|_| Error::format("ply", format!("bad number `{t}`")))?,
                    );
                }
            }
        }
    }
    Ok(VertexTable {
        count: n,
        columns: vertex.props.iter().map(|p| p.0.clone()).zip(columns).collect(),
    })
}

fn labels_of(table: &VertexTable) -> Result<Option<Vec<Label>>> {
    table
        .column(LABEL)
        .map(|col| {
            col.iter()
                .map(|&v| {
                    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                        Ok(v as Label)
                    } else {
                        Err(Error::format("ply", format!("invalid instance label {v}")))
                    }
                })
                .collect()
        })
        .transpose()
}

fn opacity_to_logit(a: f64) -> f64 {
    if a <= 0.0 {
        f64::NEG_INFINITY
    } else if a >= 1.0 {
        f64::INFINITY
    } else {
        (a.ln() - (-a).ln_1p()).clamp(-OPACITY_LOGIT_LIMIT, OPACITY_LOGIT_LIMIT)
    }
}

fn logit_to_opacity(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn write_gaussians<W: Write>(mut w: W, scene: &[Gaussian]) -> Result<()> {
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n",
        scene.len()
    );
    for p in GAUSSIAN_FLOATS {
        header.push_str(&format!("property float {p}\n"));
    }
    header.push_str(&format!("property int {LABEL}\nend_header\n"));
    w.write_all(header.as_bytes())?;
    let mut buf = Vec::with_capacity(scene.len() * 72);
    for g in scene {
        let q = g.rotation.quaternion();
        let values = [
            g.mean.x,
            g.mean.y,
            g.mean.z,
            0.0,
            0.0,
            0.0,
            (g.color.x - 0.5) / SH_C0,
            (g.color.y - 0.5) / SH_C0,
            (g.color.z - 0.5) / SH_C0,
            opacity_to_logit(g.opacity),
            g.scale.x.ln(),
            g.scale.y.ln(),
            g.scale.z.ln(),
            q.w,
            q.i,
            q.j,
            q.k,
        ];
        for v in values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        let label = i32::try_from(g.label)
            .map_err(|_| Error::format("ply", format!("label {} does not fit int32", g.label)))?;
        buf.extend_from_slice(&label.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_gaussians<R: Read>(r: R) -> Result<Vec<Gaussian>> {
    let t = read_vertices(r)?;
    let col = |n: &str| t.require(n);
    let (x, y, z) = (col("x")?, col("y")?, col("z")?);
    let dc = [col("f_dc_0")?, col("f_dc_1")?, col("f_dc_2")?];
    let opacity = col("opacity")?;
    let scale = [col("scale_0")?, col("scale_1")?, col("scale_2")?];
    let rot = [col("rot_0")?, col("rot_1")?, col("rot_2")?, col("rot_3")?];
    let labels = labels_of(&t)?;
    let bad = |i: usize, what: &str| Error::format("ply", format!("vertex {i}: {what}"));
    (0..t.count)
        .map(|i| {
            let mean = Vec3::new(x[i], y[i], z[i]);
            if !mean.iter().all(|v| v.is_finite()) {
                return Err(bad(i, "non-finite position"));
            }
            let color = Vec3::new(
                0.5 + SH_C0 * dc[0][i],
                0.5 + SH_C0 * dc[1][i],
                0.5 + SH_C0 * dc[2][i],
            );
            if !color.iter().all(|v| v.is_finite()) {
                return Err(bad(i, "non-finite color"));
            }
            if opacity[i].is_nan() {
                return Err(bad(i, "opacity is NaN"));
            }
            let s = Vec3::new(scale[0][i].exp(), scale[1][i].exp(), scale[2][i].exp());
            if !s.iter().all(|v| *v > 0.0 && v.is_finite()) {
                return Err(bad(i, "scale is not positive and finite"));
            }
            let q = Quaternion::new(rot[0][i], rot[1][i], rot[2][i], rot[3][i]);
            let n = q.norm();
            if !(n > 0.0 && n.is_finite()) {
                return Err(bad(i, "degenerate rotation"));
            }
            // near-unit rotations are kept as stored so save/load is a fixed point
            let rotation = if (n - 1.0).abs() < 1e-5 {
                UnitQuaternion::new_unchecked(q)
            } else {
                UnitQuaternion::from_quaternion(q)
            };
            let mut g = Gaussian::new(
                mean,
                s,
                rotation,
                logit_to_opacity(opacity[i]),
                color,
            );
            g.label = labels.as_ref().map_or(BACKGROUND, |l| l[i]);
            Ok(g)
        })
        .collect()
}

pub fn save_gaussians(path: impl AsRef<Path>, scene: &[Gaussian]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_gaussians(&mut f, scene)?;
    f.flush()?;
    Ok(())
}

pub fn load_gaussians(path: impl AsRef<Path>) -> Result<Vec<Gaussian>> {
    read_gaussians(std::fs::File::open(path)?)
}

/// Writes `x y z` as doubles, plus `instance_label` when labels are set.
pub fn write_points<W: Write>(mut w: W, cloud: &PointCloud) -> Result<()> {
    let mut header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n",
        cloud.len()
    );
    if cloud.labels.is_some() {
        header.push_str(&format!("property int {LABEL}\n"));
    }
    header.push_str("end_header\n");
    w.write_all(header.as_bytes())?;
    let mut buf = Vec::with_capacity(cloud.len() * 28);
    for (i, p) in cloud.points.iter().enumerate() {
        for v in p.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(labels) = &cloud.labels {
            let l = i32::try_from(labels[i])
                .map_err(|_| Error::format("ply", format!("label {} does not fit int32", labels[i])))?;
            buf.extend_from_slice(&l.to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_points<R: Read>(r: R) -> Result<PointCloud> {
    let t = read_vertices(r)?;
    let (x, y, z) = (t.require("x")?, t.require("y")?, t.require("z")?);
    let points: Vec<Vec3> = (0..t.count).map(|i| Vec3::new(x[i], y[i], z[i])).collect();
    if let Some(i) = points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
        return Err(Error::format("ply", format!("vertex {i}: non-finite position")));
    }
    Ok(PointCloud {
        points,
        labels: labels_of(&t)?,
        weights: None,
    })
}

pub fn save_points(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_points(&mut f, cloud)?;
    f.flush()?;
    Ok(())
}

pub fn load_points(path: impl AsRef<Path>) -> Result<PointCloud> {
    read_points(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Quat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_gaussians(seed: u64, n: usize) -> Vec<Gaussian> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 1.0);
                Gaussian::new(
                    Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)),
                    Vec3::new(rng.random_range(0.001..0.5), rng.random_range(0.001..0.5), rng.random_range(0.001..0.5)),
                    Quat::from_scaled_axis(axis * rng.random_range(0.0..3.0)),
                    rng.random_range(0.0..1.0),
                    Vec3::new(rng.random(), rng.random(), rng.random()),
                )
                .with_label(rng.random_range(0..20))
            })
            .collect()
    }

    fn bytes(scene: &[Gaussian]) -> Vec<u8> {
        let mut v = Vec::new();
        write_gaussians(&mut v, scene).unwrap();
        v
    }

    #[test]
    fn round_trip_is_idempotent() {
        let mut scene = random_gaussians(1, 1000);
        scene[0].opacity = 0.0;
        scene[1].opacity = 1.0;
        scene[2].opacity = 1e-12;
        let first = bytes(&scene);
        let loaded = read_gaussians(first.as_slice()).unwrap();
        assert_eq!(loaded.len(), 1000);
        assert_eq!(bytes(&loaded), first);
        // anything loaded from a file saves and loads back field-identical
        let again = read_gaussians(bytes(&loaded).as_slice()).unwrap();
        assert_eq!(again, loaded);
        assert_eq!(bytes(&again), first);
        assert_eq!(loaded[0].opacity, 0.0);
        assert_eq!(loaded[1].opacity, 1.0);
        for (a, b) in scene.iter().zip(&loaded) {
            assert_eq!(a.label, b.label);
            assert!((a.mean - b.mean).norm() < 1e-5);
            assert!((a.opacity - b.opacity).abs() < 1e-6);
        }
    }

    #[test]
    fn missing_label_property_means_background() {
        let scene = random_gaussians(2, 3);
        let full = bytes(&scene);
        let header_end = full.windows(11).position(|w| w == b"end_header\n").unwrap() + 11;
        let header = String::from_utf8(full[..header_end].to_vec())
            .unwrap()
            .replace("property int instance_label\n", "");
        let mut stripped = header.into_bytes();
        for row in full[header_end..].chunks(72) {
            stripped.extend_from_slice(&row[..68]);
        }
        let loaded = read_gaussians(stripped.as_slice()).unwrap();
        assert!(loaded.iter().all(|g| g.label == BACKGROUND));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(read_gaussians(&b"plx\n"[..]).is_err());
        let full = bytes(&random_gaussians(3, 4));
        assert!(read_gaussians(&full[..full.len() - 3]).is_err());
        let big = String::from_utf8_lossy(&full[..40]).replace("binary_little_endian", "binary_big_endian");
        assert!(read_gaussians(big.as_bytes()).is_err());
        let mut nan = random_gaussians(4, 1);
        nan[0].mean.x = f64::NAN;
        assert!(read_gaussians(bytes(&nan).as_slice()).is_err());
    }

    #[test]
    fn points_round_trip_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts: Vec<Vec3> = (0..100).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect();
        let cloud = PointCloud::with_labels(pts.clone(), (0..100).collect());
        let mut buf = Vec::new();
        write_points(&mut buf, &cloud).unwrap();
        assert_eq!(read_points(buf.as_slice()).unwrap(), cloud);
        let plain = PointCloud::new(pts);
        let mut buf = Vec::new();
        write_points(&mut buf, &plain).unwrap();
        assert_eq!(read_points(buf.as_slice()).unwrap(), plain);
    }

    #[test]
    fn ascii_points() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nproperty uchar instance_label\nend_header\n0 1 2 3\n4 5 6 7\n";
        let c = read_points(text.as_bytes()).unwrap();
        assert_eq!(c.points[1], Vec3::new(4.0, 5.0, 6.0));
        assert_eq!(c.labels, Some(vec![3, 7]));
    }
}
