//! PLY point clouds: vertices with `x y z` and optional `nx ny nz`.
//! Other elements and vertex properties are read past and ignored.

use std::fmt::Write as _;
use std::path::Path;

use super::{atomic_write, read_bytes};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Encoding {
    Ascii,
    Little,
    Big,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
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

    fn decode(self, b: &[u8], enc: Encoding) -> f64 {
        macro_rules! num {
            ($t:ty, $n:expr) => {{
                let a: [u8; $n] = b[..$n].try_into().expect("sized");
                (if enc == Encoding::Big { <$t>::from_be_bytes(a) } else { <$t>::from_le_bytes(a) }) as f64
            }};
        }
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => num!(i16, 2),
            Scalar::U16 => num!(u16, 2),
            Scalar::I32 => num!(i32, 4),
            Scalar::U32 => num!(u32, 4),
            Scalar::F32 => num!(f32, 4),
            Scalar::F64 => num!(f64, 8),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(Scalar, String),
    List(Scalar, Scalar),
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

struct Header {
    encoding: Encoding,
    elements: Vec<Element>,
    body: usize,
}

fn parse_header(bytes: &[u8], path: &Path) -> Result<Header> {
    let err = |line: usize, msg: String| Error::parse(path, Some(line), msg);
    let mut pos = 0;
    let mut lines = 0;
    let mut next_line = || -> Option<(usize, String)> {
        let rest = bytes.get(pos..)?;
        let end = rest.iter().position(|&b| b == b'\n')?;
        let line = String::from_utf8_lossy(&rest[..end]).trim_end_matches('\r').to_string();
        pos += end + 1;
        lines += 1;
        Some((lines, line))
    };
    match next_line() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => return Err(err(1, "missing `ply` magic".into())),
    }
    let mut encoding = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let (n, line) = next_line().ok_or_else(|| Error::parse(path, None, "header has no end_header"))?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["end_header"] => break,
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", f, _] => {
                encoding = Some(match *f {
                    "ascii" => Encoding::Ascii,
                    "binary_little_endian" => Encoding::Little,
                    "binary_big_endian" => Encoding::Big,
                    _ => return Err(err(n, format!("unknown format {f:?}"))),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| err(n, format!("bad element count {count:?}")))?,
                props: Vec::new(),
            }),
            ["property", "list", c, t, _] => {
                let (c, t) = Scalar::parse(c)
                    .zip(Scalar::parse(t))
                    .ok_or_else(|| err(n, format!("bad list property {line:?}")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| err(n, "property before any element".into()))?
                    .props
                    .push(Property::List(c, t));
            }
            ["property", t, name] => {
                let t = Scalar::parse(t).ok_or_else(|| err(n, format!("unknown property type {t:?}")))?;
                elements
                    .last_mut()
                    .ok_or_else(|| err(n, "property before any element".into()))?
                    .props
                    .push(Property::Scalar(t, name.to_string()));
            }
            _ => return Err(err(n, format!("unexpected header line {line:?}"))),
        }
    }
    Ok(Header {
        encoding: encoding.ok_or_else(|| Error::parse(path, None, "header has no format line"))?,
        elements,
        body: pos,
    })
}

/// Reads the body value by value, in either encoding.
struct Body<'a> {
    bytes: &'a [u8],
    pos: usize,
    encoding: Encoding,
    path: &'a Path,
}

impl Body<'_> {
    fn truncated(&self) -> Error {
        Error::parse(self.path, None, "vertex data ends early")
    }

    fn value(&mut self, t: Scalar) -> Result<f64> {
        if self.encoding == Encoding::Ascii {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            let start = self.pos;
            while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if start == self.pos {
                return Err(self.truncated());
            }
            let tok = String::from_utf8_lossy(&self.bytes[start..self.pos]);
            tok.parse::<f64>()
                .map_err(|_| Error::parse(self.path, None, format!("bad number {tok:?} in vertex data")))
        } else {
            let b = self.bytes.get(self.pos..self.pos + t.size()).ok_or_else(|| self.truncated())?;
            self.pos += t.size();
            Ok(t.decode(b, self.encoding))
        }
    }
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud<f64>> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let header = parse_header(&bytes, path)?;
    let mut body = Body {
        bytes: &bytes,
        pos: header.body,
        encoding: header.encoding,
        path,
    };
    for el in &header.elements {
        let names: Vec<Option<&str>> = el
            .props
            .iter()
            .map(|p| match p {
                Property::Scalar(_, n) => Some(n.as_str()),
                Property::List(..) => None,
            })
            .collect();
        let slot = |n: &str| names.iter().position(|&p| p == Some(n));
        if el.name != "vertex" {
            for _ in 0..el.count {
                for p in &el.props {
                    match *p {
                        Property::Scalar(t, _) => {
                            body.value(t)?;
                        }
                        Property::List(c, t) => {
                            for _ in 0..body.value(c)? as usize {
                                body.value(t)?;
                            }
                        }
                    }
                }
            }
            continue;
        }
        let xyz = [slot("x"), slot("y"), slot("z")];
        let nrm = [slot("nx"), slot("ny"), slot("nz")];
        let [Some(ix), Some(iy), Some(iz)] = xyz else {
            return Err(Error::parse(path, None, "vertex element lacks x, y or z"));
        };
        let has_normals = nrm.iter().all(Option::is_some);
        let mut points = Vec::with_capacity(el.count);
        let mut normals = Vec::with_capacity(if has_normals { el.count } else { 0 });
        let mut row = vec![0.0; el.props.len()];
        for _ in 0..el.count {
            for (k, p) in el.props.iter().enumerate() {
                row[k] = match *p {
                    Property::Scalar(t, _) => body.value(t)?,
                    Property::List(c, t) => {
                        for _ in 0..body.value(c)? as usize {
                            body.value(t)?;
                        }
                        0.0
                    }
                };
            }
            points.push([row[ix], row[iy], row[iz]]);
            if has_normals {
                normals.push(nrm.map(|i| row[i.expect("checked")]));
            }
        }
        let mut cloud = PointCloud::new(points)?;
        cloud.normals = has_normals.then_some(normals);
        return Ok(cloud);
    }
    Err(Error::parse(path, None, "no vertex element"))
}

/// Writes `double` coordinates, with normals when the cloud has them.
pub fn write_ply(path: impl AsRef<Path>, cloud: &PointCloud<f64>, binary: bool) -> Result<()> {
    let mut h = String::from("ply\n");
    let _ = writeln!(h, "format {} 1.0", if binary { "binary_little_endian" } else { "ascii" });
    let _ = writeln!(h, "element vertex {}", cloud.len());
    let mut names = vec!["x", "y", "z"];
    if cloud.normals.is_some() {
        names.extend(["nx", "ny", "nz"]);
    }
    for n in &names {
        let _ = writeln!(h, "property double {n}");
    }
    h.push_str("end_header\n");
    let mut out = h.into_bytes();
    for (k, p) in cloud.points.iter().enumerate() {
        let mut row: Vec<f64> = p.to_vec();
        if let Some(n) = &cloud.normals {
            row.extend_from_slice(&n[k]);
        }
        if binary {
            for v in row {
                out.extend_from_slice(&v.to_le_bytes());
            }
        } else {
            let line: Vec<String> = row.iter().map(f64::to_string).collect();
            out.extend_from_slice(line.join(" ").as_bytes());
            out.push(b'\n');
        }
    }
    atomic_write(path, &out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(normals: bool) -> PointCloud<f64> {
        let pts: Vec<[f64; 3]> = (0..25).map(|k| [k as f64 * 0.1, -(k as f64).sqrt(), 1.0 / (1.0 + k as f64)]).collect();
        let mut c = PointCloud::new(pts).unwrap();
        if normals {
            c.normals = Some((0..25).map(|k| [0.0, (k as f64).sin(), (k as f64).cos()]).collect());
        }
        c
    }

    #[test]
    fn round_trips_are_exact() {
        let dir = tempfile::tempdir().unwrap();
        for (binary, normals) in [(false, false), (false, true), (true, false), (true, true)] {
            let p = dir.path().join(format!("c{binary}{normals}.ply"));
            let c = cloud(normals);
            write_ply(&p, &c, binary).unwrap();
            assert_eq!(read_ply(&p).unwrap(), c);
        }
        let a = dir.path().join("a.ply");
        let b = dir.path().join("b.ply");
        write_ply(&a, &cloud(false), false).unwrap();
        write_ply(&b, &cloud(false), true).unwrap();
        assert!(std::fs::metadata(&b).unwrap().len() > 25 * 24);
    }

    #[test]
    fn foreign_layouts() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.ply");
        let mut bytes = b"ply\nformat binary_little_endian 1.0\ncomment made elsewhere\nelement vertex 2\n\
property float x\nproperty float y\nproperty float z\nproperty uchar red\n\
element face 1\nproperty list uchar int vertex_indices\nend_header\n"
            .to_vec();
        for (v, red) in [([1.0f32, 2.0, 3.0], 7u8), ([4.0, 5.0, 6.5], 9)] {
            for x in v {
                bytes.extend_from_slice(&x.to_le_bytes());
            }
            bytes.push(red);
        }
        bytes.push(3);
        for i in [0i32, 1, 0] {
            bytes.extend_from_slice(&i.to_le_bytes());
        }
        std::fs::write(&p, &bytes).unwrap();
        let c = read_ply(&p).unwrap();
        assert_eq!(c.points, vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.5]]);
        assert!(c.normals.is_none());

        std::fs::write(&p, "ply\nformat ascii 1.0\nelement camera 1\nproperty int id\nelement vertex 1\nproperty double z\nproperty double y\nproperty double x\nend_header\n5\n3 2 1\n").unwrap();
        assert_eq!(read_ply(&p).unwrap().points, vec![[1.0, 2.0, 3.0]]);
    }

    #[test]
    fn broken_files_are_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("b.ply");
        for bad in [
            "plx\n",
            "ply\nformat ascii 1.0\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nend_header\n1 2 3\n",
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty double x\nend_header\n1\n",
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty quad x\nend_header\n",
            "ply\nformat ascii 1.0\nelement vertex 1\nproperty double x\nproperty double y\nproperty double z\nend_header\n1 two 3\n",
            "ply\nelement vertex 0\nend_header\n",
        ] {
            std::fs::write(&p, bad).unwrap();
            assert!(matches!(read_ply(&p), Err(Error::Parse { .. })), "{bad}");
        }
    }
}
