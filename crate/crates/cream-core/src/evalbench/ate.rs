//! Absolute trajectory error: timestamp association, closed-form
//! least-squares alignment (rigid or similarity) and the RMS translational
//! residual.
//!
//! Trajectories use the plain-text format "timestamp tx ty tz qx qy qz qw",
//! one pose per line, `#` comments allowed.

use std::path::Path;

use super::EvalError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    /// Seconds.
    pub timestamp: f64,
    pub position: [f64; 3],
    /// (qx, qy, qz, qw), unit norm.
    pub quaternion: [f64; 4],
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Trajectory {
    pub poses: Vec<Pose>,
}

/// Alignment group used before computing residuals.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignMode {
    /// SE(3): rotation + translation.
    Rigid,
    /// Sim(3): rotation + translation + uniform scale.
    Similarity,
}

impl AlignMode {
    pub fn parse(s: &str) -> Option<AlignMode> {
        match s.to_ascii_lowercase().as_str() {
            "rigid" => Some(AlignMode::Rigid),
            "similarity" | "sim" => Some(AlignMode::Similarity),
            _ => None,
        }
    }
}

impl Trajectory {
    pub fn parse(text: &str, path: &str) -> Result<Trajectory, EvalError> {
        let mut poses = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 8 {
                return Err(EvalError::Parse {
                    path: path.to_string(),
                    line: ln + 1,
                    msg: format!("expected 8 fields, found {}", fields.len()),
                });
            }
            let mut vals = [0.0f64; 8];
            for (i, f) in fields.iter().enumerate() {
                vals[i] = f.parse().map_err(|_| EvalError::Parse {
                    path: path.to_string(),
                    line: ln + 1,
                    msg: format!("bad number {f:?}"),
                })?;
            }
            poses.push(Pose {
                timestamp: vals[0],
                position: [vals[1], vals[2], vals[3]],
                quaternion: [vals[4], vals[5], vals[6], vals[7]],
            });
        }
        let traj = Trajectory { poses };
        traj.validate(path)?;
        Ok(traj)
    }

    pub fn load(path: &Path) -> Result<Trajectory, EvalError> {
        let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Trajectory::parse(&text, &path.display().to_string())
    }

    fn validate(&self, path: &str) -> Result<(), EvalError> {
        for (i, pose) in self.poses.iter().enumerate() {
            if i > 0 && pose.timestamp <= self.poses[i - 1].timestamp {
                return Err(EvalError::Parse {
                    path: path.to_string(),
                    line: 0,
                    msg: format!(
                        "timestamps must be strictly increasing (pose {i}: {} after {})",
                        pose.timestamp,
                        self.poses[i - 1].timestamp
                    ),
                });
            }
            let q = pose.quaternion;
            let norm = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(EvalError::Parse {
                    path: path.to_string(),
                    line: 0,
                    msg: format!("pose {i}: quaternion norm {norm} deviates from 1"),
                });
            }
        }
        Ok(())
    }

    pub fn to_tum_string(&self) -> String {
        let mut out = String::new();
        for p in &self.poses {
            out.push_str(&format!(
                "{} {} {} {} {} {} {} {}\n",
                p.timestamp,
                p.position[0],
                p.position[1],
                p.position[2],
                p.quaternion[0],
                p.quaternion[1],
                p.quaternion[2],
                p.quaternion[3]
            ));
        }
        out
    }
}

/// Greedy one-to-one association by smallest timestamp difference within
/// the window, the standard RGB-D benchmark pairing.
fn associate(est: &Trajectory, gt: &Trajectory, max_dt: f64) -> Vec<(usize, usize)> {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    let mut j0 = 0usize;
    for (i, e) in est.poses.iter().enumerate() {
        while j0 < gt.poses.len() && gt.poses[j0].timestamp < e.timestamp - max_dt {
            j0 += 1;
        }
        let mut j = j0;
        while j < gt.poses.len() && gt.poses[j].timestamp <= e.timestamp + max_dt {
            candidates.push(((gt.poses[j].timestamp - e.timestamp).abs(), i, j));
            j += 1;
        }
    }
    candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut used_e = vec![false; est.poses.len()];
    let mut used_g = vec![false; gt.poses.len()];
    let mut pairs = Vec::new();
    for (_, i, j) in candidates {
        if !used_e[i] && !used_g[j] {
            used_e[i] = true;
            used_g[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Eigen-decomposition of a symmetric 4x4 matrix by cyclic Jacobi
/// rotations. Returns (eigenvalues, eigenvectors as columns).
fn jacobi_eigen_4(mut a: [[f64; 4]; 4]) -> ([f64; 4], [[f64; 4]; 4]) {
    let mut v = [[0.0; 4]; 4];
    for (i, row) in v.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for _ in 0..60 {
        let mut off = 0.0;
        for p in 0..4 {
            for q in (p + 1)..4 {
                off += a[p][q] * a[p][q];
            }
        }
        if off < 1e-28 {
            break;
        }
        for p in 0..4 {
            for q in (p + 1)..4 {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..4 {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..4 {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for k in 0..4 {
                    let vkp = v[k][p];
                    let vkq = v[k][q];
                    v[k][p] = c * vkp - s * vkq;
                    v[k][q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ([a[0][0], a[1][1], a[2][2], a[3][3]], v)
}

fn quat_to_rot(w: f64, x: f64, y: f64, z: f64) -> [[f64; 3]; 3] {
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

fn mat_vec(r: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
        r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
        r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
    ]
}

/// Closed-form least-squares alignment of point sets (quaternion method),
/// returning (rotation, scale, translation) mapping src onto dst.
fn align(src: &[[f64; 3]], dst: &[[f64; 3]], mode: AlignMode) -> ([[f64; 3]; 3], f64, [f64; 3]) {
    let n = src.len() as f64;
    let mut mu_s = [0.0; 3];
    let mut mu_d = [0.0; 3];
    for (s, d) in src.iter().zip(dst) {
        for k in 0..3 {
            mu_s[k] += s[k] / n;
            mu_d[k] += d[k] / n;
        }
    }
    // Correlation S[a][b] = sum src_c[a] * dst_c[b].
    let mut cov = [[0.0f64; 3]; 3];
    for (s, d) in src.iter().zip(dst) {
        let sc = [s[0] - mu_s[0], s[1] - mu_s[1], s[2] - mu_s[2]];
        let dc = [d[0] - mu_d[0], d[1] - mu_d[1], d[2] - mu_d[2]];
        for a in 0..3 {
            for b in 0..3 {
                cov[a][b] += sc[a] * dc[b];
            }
        }
    }
    let (sxx, sxy, sxz) = (cov[0][0], cov[0][1], cov[0][2]);
    let (syx, syy, syz) = (cov[1][0], cov[1][1], cov[1][2]);
    let (szx, szy, szz) = (cov[2][0], cov[2][1], cov[2][2]);
    let nmat = [
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
    ];
    let (eigenvalues, vectors) = jacobi_eigen_4(nmat);
    let mut best = 0;
    for k in 1..4 {
        if eigenvalues[k] > eigenvalues[best] {
            best = k;
        }
    }
    let q = [
        vectors[0][best],
        vectors[1][best],
        vectors[2][best],
        vectors[3][best],
    ];
    let r = quat_to_rot(q[0], q[1], q[2], q[3]);

    let scale = match mode {
        AlignMode::Rigid => 1.0,
        AlignMode::Similarity => {
            let mut num = 0.0;
            let mut den = 0.0;
            for (s, d) in src.iter().zip(dst) {
                let sc = [s[0] - mu_s[0], s[1] - mu_s[1], s[2] - mu_s[2]];
                let dc = [d[0] - mu_d[0], d[1] - mu_d[1], d[2] - mu_d[2]];
                let rs = mat_vec(&r, sc);
                num += dc[0] * rs[0] + dc[1] * rs[1] + dc[2] * rs[2];
                den += sc[0] * sc[0] + sc[1] * sc[1] + sc[2] * sc[2];
            }
            if den > 0.0 {
                num / den
            } else {
                1.0
            }
        }
    };
    let rmu = mat_vec(&r, mu_s);
    let t = [
        mu_d[0] - scale * rmu[0],
        mu_d[1] - scale * rmu[1],
        mu_d[2] - scale * rmu[2],
    ];
    (r, scale, t)
}

/// RMS translational residual after least-squares alignment of the
/// estimated trajectory onto the ground truth. Requires at least 3
/// associated pose pairs.
pub fn ate(
    est: &Trajectory,
    gt: &Trajectory,
    mode: AlignMode,
    max_dt: f64,
) -> Result<f64, EvalError> {
    let pairs = associate(est, gt, max_dt);
    if pairs.len() < 3 {
        return Err(EvalError::Degenerate(format!(
            "only {} associated pose pairs within {max_dt} s (need at least 3)",
            pairs.len()
        )));
    }
    let src: Vec<[f64; 3]> = pairs.iter().map(|&(i, _)| est.poses[i].position).collect();
    let dst: Vec<[f64; 3]> = pairs.iter().map(|&(_, j)| gt.poses[j].position).collect();
    let (r, s, t) = align(&src, &dst, mode);
    let mut sq = 0.0;
    for (p, q) in src.iter().zip(&dst) {
        let rp = mat_vec(&r, *p);
        let res = [
            s * rp[0] + t[0] - q[0],
            s * rp[1] + t[1] - q[1],
            s * rp[2] + t[2] - q[2],
        ];
        sq += res[0] * res[0] + res[1] * res[1] + res[2] * res[2];
    }
    Ok((sq / pairs.len() as f64).sqrt())
}
