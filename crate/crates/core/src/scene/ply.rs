//! Binary little-endian splat PLY reader and writer.
//!
//! Files store raw parameters (logit opacity, log scale, unnormalized
//! quaternion, SH coefficients); the in-memory scene holds activated values.
//! An optional integer `label` vertex property carries synthetic ground truth.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use super::{sh_rest_len, Gaussian, GaussianScene, SceneError, SH_C0};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
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
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<(String, ScalarType)>,
}

impl Element {
    fn stride(&self) -> usize {
        self.properties.iter().map(|(_, t)| t.size()).sum()
    }
}

fn parse_header<R: BufRead>(reader: &mut R) -> Result<Vec<Element>, SceneError> {
    let mut line = String::new();
    let mut next_line = |line: &mut String| -> Result<bool, SceneError> {
        line.clear();
        let n = reader
            .read_line(line)
            .map_err(|e| SceneError::MalformedHeader(format!("unreadable header: {e}")))?;
        Ok(n > 0)
    };
    if !next_line(&mut line)? || line.trim_end() != "ply" {
        return Err(SceneError::MalformedHeader("missing `ply` magic".into()));
    }
    let mut format_seen = false;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        if !next_line(&mut line)? {
            return Err(SceneError::MalformedHeader("missing `end_header`".into()));
        }
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("format") => {
                let fmt = tokens.next().unwrap_or_default();
                if fmt != "binary_little_endian" {
                    return Err(SceneError::MalformedHeader(format!("unsupported format `{fmt}`")));
                }
                format_seen = true;
            }
            Some("comment") | Some("obj_info") | None => {}
            Some("element") => {
                let name = tokens.next().unwrap_or_default().to_string();
                let count = tokens
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| SceneError::MalformedHeader(format!("bad element line `{}`", line.trim())))?;
                elements.push(Element {
                    name,
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let ty = tokens.next().unwrap_or_default();
                if ty == "list" {
                    return Err(SceneError::MalformedHeader("list properties are not supported".into()));
                }
                let ty = ScalarType::parse(ty)
                    .ok_or_else(|| SceneError::MalformedHeader(format!("unknown property type `{ty}`")))?;
                let name = tokens
                    .next()
                    .ok_or_else(|| SceneError::MalformedHeader("property without a name".into()))?;
                elements
                    .last_mut()
                    .ok_or_else(|| SceneError::MalformedHeader("property before any element".into()))?
                    .properties
                    .push((name.to_string(), ty));
            }
            Some("end_header") => break,
            Some(other) => return Err(SceneError::MalformedHeader(format!("unexpected keyword `{other}`"))),
        }
    }
    if !format_seen {
        return Err(SceneError::MalformedHeader("missing `format` line".into()));
    }
    Ok(elements)
}

pub fn load_scene_ply(path: impl AsRef<Path>) -> Result<GaussianScene, SceneError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| SceneError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_scene_ply(BufReader::new(file))
}

pub fn read_scene_ply<R: Read>(reader: R) -> Result<GaussianScene, SceneError> {
    let mut reader = BufReader::new(reader);
    let elements = parse_header(&mut reader)?;
    let mut body = Vec::new();
    reader.read_to_end(&mut body).map_err(|source| SceneError::Io {
        path: "<ply body>".into(),
        source,
    })?;

    let mut offset = 0usize;
    let mut vertex = None;
    for el in &elements {
        let len = el.count * el.stride();
        if el.name == "vertex" {
            vertex = Some((el, offset));
            break;
        }
        offset += len;
    }
    let (el, offset) = vertex.ok_or_else(|| SceneError::MalformedHeader("no `vertex` element".into()))?;
    let stride = el.stride();
    let expected = offset + el.count * stride;
    if body.len() < expected {
        return Err(SceneError::TruncatedBody {
            expected,
            found: body.len(),
        });
    }

    let mut columns: HashMap<&str, (usize, ScalarType)> = HashMap::new();
    let mut at = 0;
    for (name, ty) in &el.properties {
        columns.insert(name.as_str(), (at, *ty));
        at += ty.size();
    }
    let column = |name: &str| -> Result<(usize, ScalarType), SceneError> {
        columns
            .get(name)
            .copied()
            .ok_or_else(|| SceneError::MissingProperty(name.to_string()))
    };
    let required = [
        "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1",
        "rot_2", "rot_3",
    ];
    let required: Vec<(&str, (usize, ScalarType))> =
        required.iter().map(|n| column(n).map(|c| (*n, c))).collect::<Result<_, _>>()?;

    let rest_count = (0..).take_while(|i| columns.contains_key(format!("f_rest_{i}").as_str())).count();
    let degree = (0..=3u8)
        .find(|&d| 3 * sh_rest_len(d) == rest_count)
        .ok_or_else(|| SceneError::MalformedHeader(format!("{rest_count} f_rest properties match no SH degree")))?;
    let per_channel = sh_rest_len(degree);
    let rest_columns: Vec<(usize, ScalarType)> =
        (0..rest_count).map(|i| column(&format!("f_rest_{i}"))).collect::<Result<_, _>>()?;
    let label_column = columns.get("label").copied();

    let mut gaussians = Vec::with_capacity(el.count);
    let mut labels = label_column.map(|_| Vec::with_capacity(el.count));
    for index in 0..el.count {
        let row = &body[offset + index * stride..offset + (index + 1) * stride];
        let mut raw = [0.0f64; 14];
        for (slot, (name, (at, ty))) in raw.iter_mut().zip(&required) {
            let v = ty.read(&row[*at..]);
            if !v.is_finite() {
                return Err(SceneError::NonFiniteAttribute {
                    index,
                    property: name.to_string(),
                });
            }
            *slot = v;
        }
        let mut rest = vec![Vector3::zeros(); per_channel];
        for (k, (at, ty)) in rest_columns.iter().enumerate() {
            let v = ty.read(&row[*at..]);
            if !v.is_finite() {
                return Err(SceneError::NonFiniteAttribute {
                    index,
                    property: format!("f_rest_{k}"),
                });
            }
            // channel-major: all red coefficients, then green, then blue
            rest[k % per_channel][k / per_channel] = v;
        }
        let q = Quaternion::new(raw[10], raw[11], raw[12], raw[13]);
        if q.norm() == 0.0 {
            return Err(SceneError::NonFiniteAttribute {
                index,
                property: "rot".into(),
            });
        }
        gaussians.push(Gaussian {
            position: Vector3::new(raw[0], raw[1], raw[2]),
            color: Vector3::new(raw[3], raw[4], raw[5]).map(|f| 0.5 + SH_C0 * f),
            opacity: sigmoid(raw[6]),
            scale: Vector3::new(raw[7], raw[8], raw[9]).map(f64::exp),
            rotation: UnitQuaternion::from_quaternion(q),
            sh_rest: rest,
        });
        if let (Some(labels), Some((at, ty))) = (labels.as_mut(), label_column) {
            labels.push(ty.read(&row[at..]) as i64 as u32);
        }
    }
    GaussianScene::with_degree(gaussians, labels, degree)
}

pub fn save_scene_ply(scene: &GaussianScene, path: impl AsRef<Path>) -> Result<(), SceneError> {
    let path = path.as_ref();
    let io_err = |source| SceneError::Io {
        path: path.display().to_string(),
        source,
    };
    let bytes = scene_ply_bytes(scene)?;
    let mut file = std::fs::File::create(path).map_err(io_err)?;
    file.write_all(&bytes).map_err(io_err)
}

/// Serializes a scene to PLY bytes.
pub fn scene_ply_bytes(scene: &GaussianScene) -> Result<Vec<u8>, SceneError> {
    if scene.is_empty() {
        return Err(SceneError::EmptyScene);
    }
    let per_channel = sh_rest_len(scene.sh_degree());
    let mut header = String::from("ply\nformat binary_little_endian 1.0\ncomment written by gsculpt\n");
    header += &format!("element vertex {}\n", scene.len());
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz", "f_dc_0", "f_dc_1", "f_dc_2"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend((0..3 * per_channel).map(|i| format!("f_rest_{i}")));
    names.extend(
        ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
            .iter()
            .map(|s| s.to_string()),
    );
    for n in &names {
        header += &format!("property float {n}\n");
    }
    if scene.labels().is_some() {
        header += "property int label\n";
    }
    header += "end_header\n";

    let mut out = header.into_bytes();
    for (i, g) in scene.gaussians().iter().enumerate() {
        let q = g.rotation.quaternion();
        let mut row: Vec<f64> = vec![g.position.x, g.position.y, g.position.z, 0.0, 0.0, 0.0];
        row.extend(g.color.iter().map(|c| (c - 0.5) / SH_C0));
        for ch in 0..3 {
            row.extend(g.sh_rest.iter().map(|c| c[ch]));
        }
        row.push(logit(g.opacity));
        row.extend(g.scale.iter().map(|s| s.ln()));
        row.extend([q.w, q.i, q.j, q.k]);
        for v in row {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        if let Some(labels) = scene.labels() {
            out.extend_from_slice(&(labels[i] as i32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Inverse of [`sigmoid`], clamped so that opacities of exactly 0 or 1 stay finite.
pub fn logit(p: f64) -> f64 {
    const LIMIT: f64 = 30.0;
    (p / (1.0 - p)).ln().clamp(-LIMIT, LIMIT)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(props: &[&str]) -> Vec<u8> {
        let mut h = String::from("ply\nformat binary_little_endian 1.0\nelement vertex 1\n");
        for p in props {
            h += &format!("property float {p}\n");
        }
        h += "end_header\n";
        h.into_bytes()
    }

    const ALL: [&str; 14] = [
        "x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2", "opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1",
        "rot_2", "rot_3",
    ];

    fn one_vertex(values: [f32; 14]) -> Vec<u8> {
        let mut bytes = header(&ALL);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes
    }

    #[test]
    fn activations_applied() {
        let scene = read_scene_ply(&one_vertex([0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0])[..])
            .unwrap();
        let g = &scene.gaussians()[0];
        assert_eq!(g.opacity, 0.5);
        assert_eq!(g.scale, Vector3::repeat(1.0));
        assert_eq!(g.color, Vector3::repeat(0.5));
        assert!((g.rotation.quaternion().w - 1.0).abs() < 1e-12);
    }

    #[test]
    fn missing_property_is_named() {
        let mut bytes = header(&ALL[..13]);
        bytes.extend(std::iter::repeat_n(0u8, 13 * 4));
        match read_scene_ply(&bytes[..]) {
            Err(SceneError::MissingProperty(p)) => assert_eq!(p, "rot_3"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_reports_index() {
        let mut v = [0.0f32; 14];
        v[10] = 1.0;
        v[7] = f32::NAN;
        match read_scene_ply(&one_vertex(v)[..]) {
            Err(SceneError::NonFiniteAttribute { index: 0, property }) => assert_eq!(property, "scale_0"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(read_scene_ply(&b"plx\n"[..]), Err(SceneError::MalformedHeader(_))));
        assert!(matches!(
            read_scene_ply(&b"ply\nformat ascii 1.0\nend_header\n"[..]),
            Err(SceneError::MalformedHeader(_))
        ));
        assert!(matches!(
            read_scene_ply(&b"ply\nformat binary_little_endian 1.0\nelement vertex 1\n"[..]),
            Err(SceneError::MalformedHeader(_))
        ));
    }

    #[test]
    fn empty_scene_cannot_be_saved() {
        assert!(matches!(scene_ply_bytes(&GaussianScene::empty()), Err(SceneError::EmptyScene)));
    }

    #[test]
    fn extreme_opacities_stay_finite() {
        assert!(logit(1.0).is_finite());
        assert!(logit(0.0).is_finite());
        assert!((sigmoid(logit(1.0)) - 1.0).abs() < 1e-9);
    }
}
