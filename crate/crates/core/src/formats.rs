//! Plain-text scene and view files, raw float target grids, and the layout
//! sidecar written next to a built store.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blocking::{BlockBound, BlockOrder};
use crate::error::{Error, Result};
use crate::geometry::quat_to_mat;
use crate::param_table::TableConfig;
use crate::trainer::Image;
use crate::visibility::Camera;

pub const LAYOUT_FILE: &str = "layout.json";

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, data: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, data).map_err(|e| Error::io(path, e))
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_f64(path: &Path, line: usize, tok: &str) -> Result<f64> {
    tok.parse().map_err(|_| Error::Parse {
        path: path.into(),
        line,
        msg: format!("not a number: {tok:?}"),
    })
}

/// One primitive per line, whitespace-separated floats, `#` comments.
/// Returns (D, rows flattened).
pub fn read_scene(path: &Path) -> Result<(usize, Vec<f32>)> {
    let text = read(path)?;
    let mut dim = None;
    let mut out = Vec::new();
    for (ln, l) in lines(&text) {
        let row = l
            .split_whitespace()
            .map(|t| parse_f64(path, ln, t).map(|x| x as f32))
            .collect::<Result<Vec<_>>>()?;
        match dim {
            None => dim = Some(row.len()),
            Some(d) if d != row.len() => {
                return Err(Error::Parse {
                    path: path.into(),
                    line: ln,
                    msg: format!("expected {d} values, found {}", row.len()),
                })
            }
            _ => {}
        }
        out.extend(row);
    }
    let dim = dim.ok_or(Error::Empty("scene file has no primitives"))?;
    Ok((dim, out))
}

pub fn write_scene(path: &Path, dim: usize, rows: &[f32]) -> Result<()> {
    let mut s = String::new();
    for row in rows.chunks(dim) {
        let toks: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
        s.push_str(&toks.join(" "));
        s.push('\n');
    }
    write(path, s.as_bytes())
}

/// Camera list, one per line:
/// `window x0 y0 x1 y1 w h` or
/// `persp px py pz qw qx qy qz fov_y_deg aspect near far w h`.
pub fn read_views(path: &Path) -> Result<Vec<Camera>> {
    let text = read(path)?;
    let mut out = Vec::new();
    for (ln, l) in lines(&text) {
        let mut toks = l.split_whitespace();
        let kind = toks.next().unwrap_or("");
        let nums = toks.map(|t| parse_f64(path, ln, t)).collect::<Result<Vec<_>>>()?;
        let bad = |msg: String| Error::Parse {
            path: path.into(),
            line: ln,
            msg,
        };
        let res = |x: f64| -> Result<u32> {
            if x >= 1.0 && x.fract() == 0.0 && x <= u32::MAX as f64 {
                Ok(x as u32)
            } else {
                Err(bad(format!("bad resolution {x}")))
            }
        };
        let cam = match (kind, nums.len()) {
            ("window", 6) => Camera::window([nums[0], nums[1]], [nums[2], nums[3]], res(nums[4])?, res(nums[5])?),
            ("persp", 13) => Camera::Perspective {
                rotation: quat_to_mat([nums[3], nums[4], nums[5], nums[6]])
                    .ok_or_else(|| bad("zero quaternion".into()))?,
                position: [nums[0], nums[1], nums[2]],
                fov_y: nums[7].to_radians(),
                aspect: nums[8],
                near: nums[9],
                far: nums[10],
                width: res(nums[11])?,
                height: res(nums[12])?,
            },
            _ => return Err(bad(format!("unrecognized camera line {l:?}"))),
        };
        out.push(cam);
    }
    Ok(out)
}

/// Writes window cameras; perspective cameras are rejected because their
/// rotation is not kept as a quaternion.
pub fn write_views(path: &Path, cams: &[Camera]) -> Result<()> {
    let mut s = String::new();
    for c in cams {
        match c {
            Camera::Window {
                min,
                max,
                width,
                height,
            } => {
                writeln!(s, "window {:?} {:?} {:?} {:?} {width} {height}", min[0], min[1], max[0], max[1]).unwrap();
            }
            Camera::Perspective { .. } => {
                return Err(Error::InvalidConfig("only window views can be written".into()));
            }
        }
    }
    write(path, s.as_bytes())
}

/// Targets: little-endian f32 RGB grids, concatenated in view order, each
/// sized by its camera's resolution.
pub fn read_targets(path: &Path, cams: &[Camera]) -> Result<Vec<Image>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let need: usize = cams
        .iter()
        .map(|c| {
            let (w, h) = c.resolution();
            w as usize * h as usize * 3 * 4
        })
        .sum();
    if bytes.len() != need {
        return Err(Error::Shape(format!(
            "{}: {} bytes of targets, views need {need}",
            path.display(),
            bytes.len()
        )));
    }
    let mut at = 0;
    Ok(cams
        .iter()
        .map(|c| {
            let (w, h) = c.resolution();
            let n = w as usize * h as usize * 3;
            let rgb = bytes[at..at + n * 4]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            at += n * 4;
            Image { width: w, height: h, rgb }
        })
        .collect())
}

pub fn write_targets(path: &Path, images: &[Image]) -> Result<()> {
    let mut out = Vec::new();
    for img in images {
        for x in &img.rgb {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    write(path, &out)
}

/// Block layout recorded at build time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayoutFile {
    pub table: TableConfig,
    pub order: BlockOrder,
    /// `permutation[stored_row] = scene_row`.
    pub permutation: Vec<u32>,
    pub bounds: Vec<BlockBound>,
}

impl LayoutFile {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(LAYOUT_FILE);
        serde_json::from_str(&read(&path)?).map_err(|e| Error::Parse {
            path,
            line: e.line(),
            msg: e.to_string(),
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        write(&dir.join(LAYOUT_FILE), &json)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scene_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.txt");
        let rows = vec![0.1f32, 2.5, -3.0, 1e-7, 4.0, 5.0];
        write_scene(&p, 3, &rows).unwrap();
        assert_eq!(read_scene(&p).unwrap(), (3, rows));
    }

    #[test]
    fn scene_rejects_ragged_rows_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.txt");
        fs::write(&p, "# header\n1 2 3\n\n4 5\n").unwrap();
        match read_scene(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn views_parse_both_kinds() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.txt");
        fs::write(&p, "window 0 0 10 10 8 8\npersp 0 0 0 1 0 0 0 90 1 0.1 100 4 4 # identity\n").unwrap();
        let v = read_views(&p).unwrap();
        assert_eq!(v[0], Camera::window([0.0, 0.0], [10.0, 10.0], 8, 8));
        assert!(matches!(v[1], Camera::Perspective { width: 4, .. }));
        fs::write(&p, "window 0 0 10 10 8\n").unwrap();
        assert!(matches!(read_views(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn targets_roundtrip_and_size_check() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.bin");
        let cams = vec![Camera::window([0.0; 2], [1.0; 2], 2, 1), Camera::window([0.0; 2], [1.0; 2], 1, 1)];
        let imgs = vec![
            Image { width: 2, height: 1, rgb: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5] },
            Image { width: 1, height: 1, rgb: vec![0.7, 0.8, 0.9] },
        ];
        write_targets(&p, &imgs).unwrap();
        assert_eq!(read_targets(&p, &cams).unwrap(), imgs);
        assert!(matches!(read_targets(&p, &cams[..1]), Err(Error::Shape(_))));
    }
}
