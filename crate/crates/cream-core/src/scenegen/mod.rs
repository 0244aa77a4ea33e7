//! Procedural synthetic RGB-D dataset generation and the on-disk dataset
//! format the kit ingests (converted real RGB-D data can be dropped into
//! the same layout).
//!
//! Scenes are axis-aligned boxes and spheres over a tilted background
//! plane, Lambertian-shaded from one random directional light, with a
//! depth-proportional brightness falloff. Shading is computed from the
//! depth map's own screen-space normals, so image intensity genuinely
//! carries depth information. A configurable fraction of pixels is zeroed
//! in depth and mask as sensor-style holes (the RGB stays intact).
//!
//! Files: `rgb_<id>.ppm` (P6, maxval 255), `depth_<id>.pgm` (P5, maxval
//! 65535, big-endian, millimeters, 0 = invalid), `manifest.csv`.

pub mod pnm;

use std::io::Write;
use std::path::{Path, PathBuf};

use crate::objectives::ValidityMask;
use crate::rng::Rng;
use crate::runtime;
use crate::tensor::{Dims4, Tensor4};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Pnm(#[from] pnm::PnmError),
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("{path}: image is {got_w}x{got_h} but the manifest says {want_w}x{want_h}")]
    DimsMismatch {
        path: String,
        got_w: usize,
        got_h: usize,
        want_w: usize,
        want_h: usize,
    },
    #[error("malformed manifest {path}: {msg}")]
    Manifest { path: String, msg: String },
    #[error("invalid scene spec: {0}")]
    Spec(String),
    #[error("unknown sample id: {0}")]
    UnknownId(String),
}

fn io_err(path: &Path, source: std::io::Error) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Generator configuration. Identifies a dataset completely: rerunning the
/// generator with an identical spec reproduces identical files.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Meters.
    pub z_min: f32,
    pub z_max: f32,
    pub prims_min: usize,
    pub prims_max: usize,
    /// Fraction of pixels zeroed as sensor holes, in [0, 0.15].
    pub p_hole: f32,
}

impl SceneSpec {
    /// Kinect-style range (0.5 - 10 m).
    pub fn indoor(seed: u64, width: usize, height: usize) -> Self {
        SceneSpec {
            seed,
            width,
            height,
            z_min: 0.5,
            z_max: 10.0,
            prims_min: 4,
            prims_max: 9,
            p_hole: 0.05,
        }
    }

    /// LIDAR-style range (2 - 50 m).
    pub fn outdoor(seed: u64, width: usize, height: usize) -> Self {
        SceneSpec {
            seed,
            width,
            height,
            z_min: 2.0,
            z_max: 50.0,
            prims_min: 5,
            prims_max: 12,
            p_hole: 0.08,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.z_min <= 0.0 || self.z_max <= self.z_min {
            return Err(DataError::Spec(format!(
                "depth range [{}, {}] must satisfy 0 < z_min < z_max",
                self.z_min, self.z_max
            )));
        }
        if self.width % 8 != 0 || self.height % 8 != 0 {
            return Err(DataError::Spec(format!(
                "resolution {}x{} must be divisible by 8",
                self.width, self.height
            )));
        }
        if !(0.0..=0.15).contains(&self.p_hole) {
            return Err(DataError::Spec(format!(
                "p_hole {} outside [0, 0.15]",
                self.p_hole
            )));
        }
        if self.prims_min > self.prims_max || self.prims_max == 0 {
            return Err(DataError::Spec(format!(
                "bad primitive count range {}..={}",
                self.prims_min, self.prims_max
            )));
        }
        Ok(())
    }
}

/// One RGB + metric-depth + validity-mask sample.
#[derive(Clone, Debug)]
pub struct DepthSample {
    /// (1, 3, h, w), values in [0, 1].
    pub rgb: Tensor4<f32>,
    /// (1, 1, h, w), meters; 0 where invalid.
    pub depth: Tensor4<f32>,
    pub mask: ValidityMask,
    pub id: String,
}

pub fn sample_id(index: u64) -> String {
    format!("{index:06}")
}

enum Prim {
    Sphere {
        cx: f32,
        cy: f32,
        r: f32,
        z: f32,
        bulge: f32,
        albedo: [f32; 3],
    },
    Box2 {
        x0: f32,
        x1: f32,
        y0: f32,
        y1: f32,
        z: f32,
        gz: f32,
        albedo: [f32; 3],
    },
}

/// Deterministically render sample `index` of the dataset described by
/// `spec`.
pub fn generate_scene(spec: &SceneSpec, index: u64) -> DepthSample {
    let (w, h) = (spec.width, spec.height);
    let span = spec.z_max - spec.z_min;
    let mut rng = Rng::substream(spec.seed, index);

    // Background plane with a random tilt, kept in the nearer half of the
    // range so scene statistics sit where a short training budget can
    // reach them.
    let bg_z = spec.z_min + span * rng.uniform(0.25, 0.62) as f32;
    let bg_gu = (rng.uniform(-0.08, 0.08) * span as f64) as f32;
    let bg_gv = (rng.uniform(-0.08, 0.08) * span as f64) as f32;
    let bg_albedo = [
        rng.uniform(0.3, 0.95) as f32,
        rng.uniform(0.3, 0.95) as f32,
        rng.uniform(0.3, 0.95) as f32,
    ];

    // Directional light.
    let lx = rng.uniform(-0.7, 0.7) as f32;
    let ly = rng.uniform(-0.7, 0.7) as f32;
    let ln = (lx * lx + ly * ly + 1.44f32).sqrt();
    let light = [lx / ln, ly / ln, 1.2 / ln];

    let n_prims = rng.range_usize(spec.prims_min, spec.prims_max + 1);
    let mut prims = Vec::with_capacity(n_prims);
    for _ in 0..n_prims {
        let albedo = [
            rng.uniform(0.25, 0.95) as f32,
            rng.uniform(0.25, 0.95) as f32,
            rng.uniform(0.25, 0.95) as f32,
        ];
        // Strictly in front of the background so every primitive is visible.
        let z = spec.z_min + (bg_z - spec.z_min) * rng.uniform(0.12, 0.9) as f32;
        if rng.next_u64() % 2 == 0 {
            prims.push(Prim::Sphere {
                cx: (rng.uniform(0.05, 0.95) * w as f64) as f32,
                cy: (rng.uniform(0.05, 0.95) * h as f64) as f32,
                r: (rng.uniform(0.08, 0.24) * w.min(h) as f64) as f32,
                z,
                bulge: span * rng.uniform(0.02, 0.09) as f32,
                albedo,
            });
        } else {
            let cx = rng.uniform(0.05, 0.95) * w as f64;
            let cy = rng.uniform(0.05, 0.95) * h as f64;
            let ax = rng.uniform(0.05, 0.22) * w as f64;
            let ay = rng.uniform(0.05, 0.22) * h as f64;
            prims.push(Prim::Box2 {
                x0: (cx - ax) as f32,
                x1: (cx + ax) as f32,
                y0: (cy - ay) as f32,
                y1: (cy + ay) as f32,
                z,
                gz: (rng.uniform(-0.04, 0.04) * span as f64) as f32,
                albedo,
            });
        }
    }

    // Depth + albedo composition, nearest-surface wins.
    let mut depth = vec![0.0f32; w * h];
    let mut albedo = vec![[0.0f32; 3]; w * h];
    for y in 0..h {
        let v = (y as f32 / h as f32) * 2.0 - 1.0;
        for x in 0..w {
            let u = (x as f32 / w as f32) * 2.0 - 1.0;
            let mut z = bg_z + bg_gu * u + bg_gv * v;
            let mut a = bg_albedo;
            for p in &prims {
                match *p {
                    Prim::Sphere {
                        cx,
                        cy,
                        r,
                        z: pz,
                        bulge,
                        albedo: pa,
                    } => {
                        let dx = x as f32 - cx;
                        let dy = y as f32 - cy;
                        let d2 = dx * dx + dy * dy;
                        if d2 < r * r {
                            let zc = pz - bulge * (1.0 - d2 / (r * r)).sqrt();
                            if zc < z {
                                z = zc;
                                a = pa;
                            }
                        }
                    }
                    Prim::Box2 {
                        x0,
                        x1,
                        y0,
                        y1,
                        z: pz,
                        gz,
                        albedo: pa,
                    } => {
                        let xf = x as f32;
                        let yf = y as f32;
                        if xf >= x0 && xf <= x1 && yf >= y0 && yf <= y1 {
                            let zc = pz + gz * u;
                            if zc < z {
                                z = zc;
                                a = pa;
                            }
                        }
                    }
                }
            }
            depth[y * w + x] = z.clamp(spec.z_min, spec.z_max);
            albedo[y * w + x] = a;
        }
    }

    // Screen-space normals from the depth map, Lambertian shading, and a
    // depth-proportional brightness falloff so absolute depth is inferable.
    let grad_gain = 6.0f32;
    let mut rgb = vec![0.0f32; 3 * w * h];
    for y in 0..h {
        for x in 0..w {
            let at = |xx: isize, yy: isize| -> f32 {
                let xx = xx.clamp(0, w as isize - 1) as usize;
                let yy = yy.clamp(0, h as isize - 1) as usize;
                depth[yy * w + xx]
            };
            let dzdx = (at(x as isize + 1, y as isize) - at(x as isize - 1, y as isize)) * 0.5;
            let dzdy = (at(x as isize, y as isize + 1) - at(x as isize, y as isize - 1)) * 0.5;
            let nx = -dzdx * grad_gain;
            let ny = -dzdy * grad_gain;
            let nz = 1.0f32;
            let nn = (nx * nx + ny * ny + nz * nz).sqrt();
            let ndotl = (nx * light[0] + ny * light[1] + nz * light[2]) / nn;
            let shade = 0.25 + 0.75 * ndotl.max(0.0);
            let z = depth[y * w + x];
            let fade = 1.0 - 0.55 * (z - spec.z_min) / span;
            let a = albedo[y * w + x];
            for c in 0..3 {
                rgb[(c * h + y) * w + x] = (a[c] * shade * fade).clamp(0.0, 1.0);
            }
        }
    }

    // Sensor-style holes: zero depth, keep RGB.
    if spec.p_hole > 0.0 {
        for d in depth.iter_mut() {
            if rng.next_f32() < spec.p_hole {
                *d = 0.0;
            }
        }
    }

    let rgb = Tensor4::new(Dims4::new(1, 3, h, w), rgb).expect("rgb dims");
    let depth = Tensor4::new(Dims4::new(1, 1, h, w), depth).expect("depth dims");
    let mask = ValidityMask::from_depth(&depth);
    DepthSample {
        rgb,
        depth,
        mask,
        id: sample_id(index),
    }
}

/// Train/test membership of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Dataset manifest: sample ids, their split, and the generator spec echoed
/// for provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub spec: SceneSpec,
    pub entries: Vec<(String, Split)>,
}

const MANIFEST_HEADER: &str = "id,split,seed,width,height,z_min,z_max,prims_min,prims_max,p_hole";

impl Manifest {
    pub fn ids(&self, split: Split) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, s)| *s == split)
            .map(|(id, _)| id.clone())
            .collect()
    }

    fn to_csv(&self) -> String {
        let mut out = String::from(MANIFEST_HEADER);
        out.push('\n');
        let s = &self.spec;
        for (id, split) in &self.entries {
            out.push_str(&format!(
                "{id},{},{},{},{},{},{},{},{},{}\n",
                split.as_str(),
                s.seed,
                s.width,
                s.height,
                s.z_min,
                s.z_max,
                s.prims_min,
                s.prims_max,
                s.p_hole
            ));
        }
        out
    }

    fn from_csv(path: &Path, text: &str) -> Result<Manifest, DataError> {
        let mal = |msg: String| DataError::Manifest {
            path: path.display().to_string(),
            msg,
        };
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| mal("empty manifest".into()))?;
        if header != MANIFEST_HEADER {
            return Err(mal(format!("unexpected header {header:?}")));
        }
        let mut spec: Option<SceneSpec> = None;
        let mut entries = Vec::new();
        for (ln, line) in lines.enumerate() {
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 10 {
                return Err(mal(format!("row {} has {} fields", ln + 2, f.len())));
            }
            let split = Split::parse(f[1]).ok_or_else(|| mal(format!("bad split {:?}", f[1])))?;
            let row_spec = SceneSpec {
                seed: f[2].parse().map_err(|_| mal(format!("bad seed {:?}", f[2])))?,
                width: f[3].parse().map_err(|_| mal("bad width".into()))?,
                height: f[4].parse().map_err(|_| mal("bad height".into()))?,
                z_min: f[5].parse().map_err(|_| mal("bad z_min".into()))?,
                z_max: f[6].parse().map_err(|_| mal("bad z_max".into()))?,
                prims_min: f[7].parse().map_err(|_| mal("bad prims_min".into()))?,
                prims_max: f[8].parse().map_err(|_| mal("bad prims_max".into()))?,
                p_hole: f[9].parse().map_err(|_| mal("bad p_hole".into()))?,
            };
            match &spec {
                None => spec = Some(row_spec),
                Some(s) if *s == row_spec => {}
                Some(_) => return Err(mal(format!("row {} spec echo disagrees", ln + 2))),
            }
            entries.push((f[0].to_string(), split));
        }
        Ok(Manifest {
            spec: spec.ok_or_else(|| mal("no rows".into()))?,
            entries,
        })
    }
}

fn rgb_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("rgb_{id}.ppm"))
}

fn depth_path(dir: &Path, id: &str) -> PathBuf {
    dir.join(format!("depth_{id}.pgm"))
}

fn quantize_rgb(rgb: &Tensor4<f32>) -> Vec<u8> {
    let d = rgb.dims();
    let (h, w) = (d.h, d.w);
    let mut out = vec![0u8; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                out[(y * w + x) * 3 + c] = (rgb.at(0, c, y, x).clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    out
}

fn quantize_depth_mm(depth: &Tensor4<f32>) -> Vec<u16> {
    depth
        .data()
        .iter()
        .map(|&m| (m as f64 * 1000.0).round().clamp(0.0, 65535.0) as u16)
        .collect()
}

/// Write one sample to `dir`.
pub fn write_sample(dir: &Path, sample: &DepthSample) -> Result<(), DataError> {
    let d = sample.rgb.dims();
    pnm::write_ppm(&rgb_path(dir, &sample.id), d.w, d.h, &quantize_rgb(&sample.rgb))?;
    pnm::write_pgm16(
        &depth_path(dir, &sample.id),
        d.w,
        d.h,
        &quantize_depth_mm(&sample.depth),
    )?;
    Ok(())
}

/// Generate `n_train + n_test` samples with disjoint index ranges (train
/// first), write them plus `manifest.csv` to `out_dir`.
pub fn generate_dataset(
    spec: &SceneSpec,
    n_train: usize,
    n_test: usize,
    out_dir: &Path,
) -> Result<Manifest, DataError> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let total = n_train + n_test;
    let results: Vec<Result<(), DataError>> = runtime::par_map(total, |i| {
        let sample = generate_scene(spec, i as u64);
        write_sample(out_dir, &sample)
    });
    for r in results {
        r?;
    }
    let entries = (0..total)
        .map(|i| {
            let split = if i < n_train { Split::Train } else { Split::Test };
            (sample_id(i as u64), split)
        })
        .collect();
    let manifest = Manifest {
        spec: spec.clone(),
        entries,
    };
    let path = out_dir.join("manifest.csv");
    let mut f = std::fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    f.write_all(manifest.to_csv().as_bytes())
        .map_err(|e| io_err(&path, e))?;
    Ok(manifest)
}

/// An on-disk dataset opened through its manifest.
#[derive(Clone, Debug)]
pub struct Dataset {
    dir: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Dataset, DataError> {
        let path = dir.join("manifest.csv");
        let text = std::fs::read_to_string(&path)
            .map_err(|_| DataError::MissingFile(path.display().to_string()))?;
        let manifest = Manifest::from_csv(&path, &text)?;
        Ok(Dataset {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    /// (width, height) of every sample.
    pub fn resolution(&self) -> (usize, usize) {
        (self.manifest.spec.width, self.manifest.spec.height)
    }

    pub fn ids(&self, split: Split) -> Vec<String> {
        self.manifest.ids(split)
    }

    pub fn len(&self, split: Split) -> usize {
        self.manifest
            .entries
            .iter()
            .filter(|(_, s)| *s == split)
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.entries.is_empty()
    }

    /// Load one sample; the exact inverse of the writer up to millimeter
    /// quantization of depth.
    pub fn load(&self, id: &str) -> Result<DepthSample, DataError> {
        if !self.manifest.entries.iter().any(|(i, _)| i == id) {
            return Err(DataError::UnknownId(id.to_string()));
        }
        let (want_w, want_h) = self.resolution();

        let rp = rgb_path(&self.dir, id);
        if !rp.exists() {
            return Err(DataError::MissingFile(rp.display().to_string()));
        }
        let (w, h, rgb8) = pnm::read_ppm(&rp)?;
        if (w, h) != (want_w, want_h) {
            return Err(DataError::DimsMismatch {
                path: rp.display().to_string(),
                got_w: w,
                got_h: h,
                want_w,
                want_h,
            });
        }
        let mut rgb = vec![0.0f32; 3 * w * h];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    rgb[(c * h + y) * w + x] = rgb8[(y * w + x) * 3 + c] as f32 / 255.0;
                }
            }
        }

        let dp = depth_path(&self.dir, id);
        if !dp.exists() {
            return Err(DataError::MissingFile(dp.display().to_string()));
        }
        let (w2, h2, mm) = pnm::read_pgm16(&dp)?;
        if (w2, h2) != (want_w, want_h) {
            return Err(DataError::DimsMismatch {
                path: dp.display().to_string(),
                got_w: w2,
                got_h: h2,
                want_w,
                want_h,
            });
        }
        let depth_m: Vec<f32> = mm.iter().map(|&v| v as f32 / 1000.0).collect();

        let rgb = Tensor4::new(Dims4::new(1, 3, h, w), rgb).expect("rgb dims");
        let depth = Tensor4::new(Dims4::new(1, 1, h, w), depth_m).expect("depth dims");
        let mask = ValidityMask::from_depth(&depth);
        Ok(DepthSample {
            rgb,
            depth,
            mask,
            id: id.to_string(),
        })
    }

    /// Shuffled fixed-size batches for one epoch; the last incomplete batch
    /// is dropped.
    pub fn batches(
        &self,
        split: Split,
        batch_size: usize,
        epoch_seed: u64,
    ) -> Result<BatchIter<'_>, DataError> {
        assert!(batch_size > 0);
        let mut ids = self.ids(split);
        let mut rng = Rng::substream(epoch_seed, 0xBA7C);
        rng.shuffle(&mut ids);
        let n_batches = ids.len() / batch_size;
        ids.truncate(n_batches * batch_size);
        Ok(BatchIter {
            dataset: self,
            ids,
            batch_size,
            at: 0,
        })
    }
}

/// One assembled minibatch.
pub struct Batch {
    /// (B, 3, h, w)
    pub rgb: Tensor4<f32>,
    /// (B, 1, h, w)
    pub depth: Tensor4<f32>,
    pub mask: ValidityMask,
    pub ids: Vec<String>,
}

pub struct BatchIter<'a> {
    dataset: &'a Dataset,
    ids: Vec<String>,
    batch_size: usize,
    at: usize,
}

impl BatchIter<'_> {
    pub fn n_batches(&self) -> usize {
        self.ids.len() / self.batch_size
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Result<Batch, DataError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.at + self.batch_size > self.ids.len() {
            return None;
        }
        let ids: Vec<String> = self.ids[self.at..self.at + self.batch_size].to_vec();
        self.at += self.batch_size;
        Some(assemble_batch(self.dataset, &ids))
    }
}

/// Load and stack samples into one batch.
pub fn assemble_batch(dataset: &Dataset, ids: &[String]) -> Result<Batch, DataError> {
    let (w, h) = dataset.resolution();
    let b = ids.len();
    let mut rgb = Vec::with_capacity(b * 3 * h * w);
    let mut depth = Vec::with_capacity(b * h * w);
    let mut mask = Vec::with_capacity(b * h * w);
    for id in ids {
        let s = dataset.load(id)?;
        rgb.extend_from_slice(s.rgb.data());
        depth.extend_from_slice(s.depth.data());
        mask.extend_from_slice(s.mask.as_slice());
    }
    Ok(Batch {
        rgb: Tensor4::new(Dims4::new(b, 3, h, w), rgb).expect("batch rgb dims"),
        depth: Tensor4::new(Dims4::new(b, 1, h, w), depth).expect("batch depth dims"),
        mask: ValidityMask::new(b, h, w, mask).expect("batch mask dims"),
        ids: ids.to_vec(),
    })
}
