//! On-disk formats.
//!
//! A dataset directory holds one `<id>.pgm` label image per frame, a cloud
//! `<id>.bin` (little-endian `f32` x, y, z, label) or `<id>.csv`
//! (`x,y,z,label` per line), and a shared `intrinsics.txt`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use semcal_core::geometry::{CameraIntrinsics, Extrinsics, RotationAngles, Translation, Vec3};
use semcal_core::scene::{ClassId, FramePair, LabelImage, LabeledPointCloud};

pub const INTRINSICS_FILE: &str = "intrinsics.txt";

/// Raw label to class id. Labels missing from a non-empty table map to 0.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Remap(BTreeMap<u32, u8>);

impl Remap {
    pub fn new(pairs: &[[u32; 2]]) -> Result<Self> {
        let mut map = BTreeMap::new();
        for &[from, to] in pairs {
            ensure!(to <= 255, "remap target {to} does not fit a class id");
            if map.insert(from, to as u8).is_some() {
                bail!("label {from} is remapped twice");
            }
        }
        Ok(Self(map))
    }

    pub fn apply(&self, raw: u32) -> Option<u8> {
        if self.0.is_empty() {
            u8::try_from(raw).ok()
        } else {
            Some(self.0.get(&raw).copied().unwrap_or(0))
        }
    }
}

fn cloud_from_records(records: Vec<[f32; 4]>, remap: &Remap) -> Result<LabeledPointCloud> {
    let mut points = Vec::with_capacity(records.len());
    let mut labels = Vec::with_capacity(records.len());
    for (i, [x, y, z, l]) in records.into_iter().enumerate() {
        ensure!(
            l >= 0.0 && l.fract() == 0.0 && l <= u32::MAX as f32,
            "point {i}: label {l} is not a non-negative integer"
        );
        let class = remap
            .apply(l as u32)
            .with_context(|| format!("point {i}: label {l} exceeds 255 and no remap is given"))?;
        points.push(Vec3::new(f64::from(x), f64::from(y), f64::from(z)));
        labels.push(ClassId(class));
    }
    Ok(LabeledPointCloud::new(points, labels)?)
}

pub fn read_cloud_bin(path: &Path, remap: &Remap) -> Result<LabeledPointCloud> {
    let parse = || -> Result<LabeledPointCloud> {
        let bytes = fs::read(path)?;
        ensure!(
            bytes.len() % 16 == 0,
            "size {} is not a multiple of 16 bytes",
            bytes.len()
        );
        let records = bytes
            .chunks_exact(16)
            .map(|c| {
                let f = |k: usize| f32::from_le_bytes(c[4 * k..4 * k + 4].try_into().unwrap());
                [f(0), f(1), f(2), f(3)]
            })
            .collect();
        cloud_from_records(records, remap)
    };
    parse().with_context(|| format!("reading cloud {}", path.display()))
}

pub fn read_cloud_csv(path: &Path, remap: &Remap) -> Result<LabeledPointCloud> {
    let parse = || -> Result<LabeledPointCloud> {
        let text = fs::read_to_string(path)?;
        let mut records = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if n == 0 && fields.first().is_some_and(|f| f.parse::<f32>().is_err()) {
                continue; // header
            }
            ensure!(fields.len() == 4, "line {}: expected 4 fields", n + 1);
            let mut r = [0f32; 4];
            for (v, f) in r.iter_mut().zip(&fields) {
                *v = f
                    .parse()
                    .with_context(|| format!("line {}: bad number {f:?}", n + 1))?;
            }
            records.push(r);
        }
        cloud_from_records(records, remap)
    };
    parse().with_context(|| format!("reading cloud {}", path.display()))
}

/// Writes a cloud in the binary layout. Coordinates are stored as `f32`.
pub fn write_cloud_bin(path: &Path, cloud: &LabeledPointCloud) -> Result<()> {
    let mut buf = Vec::with_capacity(cloud.len() * 16);
    for (p, c) in cloud.iter() {
        for v in [p.x as f32, p.y as f32, p.z as f32, f32::from(c.0)] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

/// Binary 8-bit PGM (P5).
pub fn read_pgm(path: &Path, remap: &Remap) -> Result<LabelImage> {
    let parse = || -> Result<LabelImage> {
        let bytes = fs::read(path)?;
        let mut pos = 0;
        let mut token = || -> Result<String> {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            ensure!(pos > start, "truncated header");
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        ensure!(token()? == "P5", "not a binary PGM (P5)");
        let width: u32 = token()?.parse().context("bad width")?;
        let height: u32 = token()?.parse().context("bad height")?;
        let maxval: u32 = token()?.parse().context("bad maxval")?;
        ensure!(
            (1..=255).contains(&maxval),
            "maxval {maxval} unsupported, need 8-bit"
        );
        // exactly one whitespace byte separates header and raster
        let data = &bytes[pos + 1.min(bytes.len() - pos)..];
        let n = width as usize * height as usize;
        ensure!(
            data.len() == n,
            "raster has {} bytes, expected {width}x{height}",
            data.len()
        );
        let labels = data
            .iter()
            .map(|&b| ClassId(remap.apply(u32::from(b)).unwrap_or(0)))
            .collect();
        Ok(LabelImage::new(width, height, labels)?)
    };
    parse().with_context(|| format!("reading label image {}", path.display()))
}

pub fn write_pgm(path: &Path, image: &LabelImage) -> Result<()> {
    let mut buf = format!("P5\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    buf.extend(image.labels().iter().map(|c| c.0));
    fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> Result<T> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading {what} {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {what} {}", path.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(text.as_bytes())
        .with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IntrinsicsFile {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    let f: IntrinsicsFile = read_toml(path, "intrinsics")?;
    CameraIntrinsics::new(f.fx, f.fy, f.cx, f.cy, f.width, f.height)
        .with_context(|| format!("invalid intrinsics in {}", path.display()))
}

pub fn write_intrinsics(path: &Path, k: &CameraIntrinsics) -> Result<()> {
    let f = IntrinsicsFile {
        fx: k.fx,
        fy: k.fy,
        cx: k.cx,
        cy: k.cy,
        width: k.width,
        height: k.height,
    };
    write_text(path, &toml::to_string(&f)?)
}

/// Extrinsics in reporting units: degrees and meters.
///
/// `p_cam = R·p + t` with `R = Rz(θz)·Ry(θy)·Rx(θx)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtrinsicsRecord {
    pub theta_x_deg: f64,
    pub theta_y_deg: f64,
    pub theta_z_deg: f64,
    pub tx_m: f64,
    pub ty_m: f64,
    pub tz_m: f64,
}

impl ExtrinsicsRecord {
    pub fn from_extrinsics(e: &Extrinsics) -> Self {
        let [x, y, z] = e.rotation.to_degrees();
        let t = e.translation;
        Self {
            theta_x_deg: x,
            theta_y_deg: y,
            theta_z_deg: z,
            tx_m: t.x,
            ty_m: t.y,
            tz_m: t.z,
        }
    }

    pub fn to_extrinsics(self) -> Extrinsics {
        Extrinsics::new(
            RotationAngles::from_degrees(self.theta_x_deg, self.theta_y_deg, self.theta_z_deg),
            Translation::new(self.tx_m, self.ty_m, self.tz_m),
        )
    }

    pub fn values(&self) -> [f64; 6] {
        [
            self.theta_x_deg,
            self.theta_y_deg,
            self.theta_z_deg,
            self.tx_m,
            self.ty_m,
            self.tz_m,
        ]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            theta_x_deg: f(self.theta_x_deg),
            theta_y_deg: f(self.theta_y_deg),
            theta_z_deg: f(self.theta_z_deg),
            tx_m: f(self.tx_m),
            ty_m: f(self.ty_m),
            tz_m: f(self.tz_m),
        }
    }
}

/// Reads an extrinsics file as written by [`write_extrinsics`].
pub fn read_extrinsics(path: &Path) -> Result<Extrinsics> {
    let rec: ExtrinsicsRecord = read_toml(path, "extrinsics")?;
    ensure!(
        rec.values().iter().all(|v| v.is_finite()),
        "non-finite value in {}",
        path.display()
    );
    Ok(rec.to_extrinsics())
}

/// Full precision, so estimates survive a write/read cycle.
pub fn write_extrinsics(path: &Path, e: &Extrinsics) -> Result<()> {
    let body = toml::to_string(&ExtrinsicsRecord::from_extrinsics(e))?;
    write_text(
        path,
        &format!(
            "# p_cam = R p + t, R = Rz Ry Rx; angles in degrees, translation in meters\n{body}"
        ),
    )
}

/// Frame ids of a dataset directory: stems of its `.pgm` files, sorted.
pub fn frame_ids(dir: &Path) -> Result<Vec<String>> {
    let entries =
        fs::read_dir(dir).with_context(|| format!("reading data directory {}", dir.display()))?;
    let mut ids = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "pgm") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.push(stem.to_string());
            }
        }
    }
    ids.sort();
    Ok(ids)
}

fn cloud_path(dir: &Path, id: &str) -> Result<PathBuf> {
    for ext in ["bin", "csv"] {
        let p = dir.join(format!("{id}.{ext}"));
        if p.is_file() {
            return Ok(p);
        }
    }
    bail!(
        "frame {id} in {} has a label image but no {id}.bin or {id}.csv",
        dir.display()
    )
}

pub fn load_dataset(
    dir: &Path,
    cloud_remap: &Remap,
    image_remap: &Remap,
) -> Result<Vec<FramePair>> {
    let ids = frame_ids(dir)?;
    ensure!(
        !ids.is_empty(),
        "no frames (*.pgm) found in {}",
        dir.display()
    );
    let k = read_intrinsics(&dir.join(INTRINSICS_FILE))?;
    ids.iter()
        .map(|id| {
            let cpath = cloud_path(dir, id)?;
            let cloud = if cpath.extension().is_some_and(|e| e == "csv") {
                read_cloud_csv(&cpath, cloud_remap)?
            } else {
                read_cloud_bin(&cpath, cloud_remap)?
            };
            let ipath = dir.join(format!("{id}.pgm"));
            let image = read_pgm(&ipath, image_remap)?;
            FramePair::new(id.clone(), cloud, image, k)
                .with_context(|| format!("frame {id} in {}", dir.display()))
        })
        .collect()
}

/// Writes frames with a shared intrinsics file. All pairs must share `k`.
pub fn write_dataset(dir: &Path, pairs: &[FramePair]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let Some(first) = pairs.first() else {
        bail!("no frames to write");
    };
    ensure!(
        pairs.iter().all(|p| p.intrinsics == first.intrinsics),
        "frames do not share intrinsics"
    );
    write_intrinsics(&dir.join(INTRINSICS_FILE), &first.intrinsics)?;
    for p in pairs {
        write_cloud_bin(&dir.join(format!("{}.bin", p.frame_id)), &p.cloud)?;
        write_pgm(&dir.join(format!("{}.pgm", p.frame_id)), &p.image)?;
    }
    Ok(())
}
