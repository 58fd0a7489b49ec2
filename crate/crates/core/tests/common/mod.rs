#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use privest::finite::{FiniteSystem, SoftmaxTree};
use privest::policy::EstimationPolicy;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

pub fn tiny() -> FiniteSystem {
    FiniteSystem::from_json_str(&std::fs::read_to_string(fixture("tiny.json")).unwrap()).unwrap()
}

/// Squared loss on the grid centers, outputs at the same centers.
pub fn squared_table(fs: &FiniteSystem) -> Vec<Vec<f64>> {
    fs.centers
        .iter()
        .map(|x| fs.centers.iter().map(|c| (x - c) * (x - c)).collect())
        .collect()
}

pub fn random_dist(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
    let s: f64 = v.iter().sum();
    v.into_iter().map(|p| p / s).collect()
}

pub fn random_system(rng: &mut ChaCha8Rng, ny: usize, nx: usize, nz: usize) -> FiniteSystem {
    let py = (0..ny).map(|_| random_dist(rng, ny)).collect();
    let mut px = vec![vec![vec![0.0; ny]; nx]; nx];
    for (i, plane) in px.iter_mut().enumerate() {
        for y in 0..ny {
            let d = random_dist(rng, nx);
            for j in 0..nx {
                plane[j][y] = d[j];
            }
        }
        let _ = i;
    }
    FiniteSystem {
        ny,
        nx,
        nz,
        py,
        px,
        pz: (0..nx).map(|_| random_dist(rng, nz)).collect(),
        mu_y0: random_dist(rng, ny),
        mu_x0: random_dist(rng, nx),
        centers: (0..nx).map(|i| i as f64 * 0.5).collect(),
    }
}

pub fn random_tree(rng: &mut ChaCha8Rng, horizon: usize, nz: usize, m: usize, scale: f64) -> SoftmaxTree {
    let mut t = SoftmaxTree::zeros(horizon, nz, m).unwrap();
    for l in &mut t.logits {
        *l = scale * rng.sample::<f64, _>(StandardNormal);
    }
    t
}

/// One fully specified closed-loop path.
#[derive(Debug, Clone)]
pub struct Path {
    pub ys: Vec<usize>,
    pub xs: Vec<usize>,
    pub zs: Vec<usize>,
    pub xhs: Vec<usize>,
    pub p: f64,
}

/// Every `(y^T, x^T, z̃^T, x̂^T)` path with its probability, by explicit
/// products of the kernels.
pub fn brute_paths<P: EstimationPolicy + ?Sized>(fs: &FiniteSystem, policy: &P, horizon: usize) -> Vec<Path> {
    let mut out = Vec::new();
    for y in 0..fs.ny {
        for x in 0..fs.nx {
            let p = fs.mu_y0[y] * fs.mu_x0[x];
            if p > 0.0 {
                grow(fs, policy, horizon, Path { ys: vec![y], xs: vec![x], zs: vec![], xhs: vec![], p }, &mut out);
            }
        }
    }
    out
}

fn grow<P: EstimationPolicy + ?Sized>(fs: &FiniteSystem, policy: &P, horizon: usize, path: Path, out: &mut Vec<Path>) {
    let t = path.ys.len() - 1;
    let x = path.xs[t];
    for z in 0..fs.nz {
        let pz = fs.pz[x][z];
        if pz == 0.0 {
            continue;
        }
        let mut zs = path.zs.clone();
        zs.push(z);
        let probs = policy.probs_for(&zs, &path.xhs).unwrap();
        for (xh, &w) in probs.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let mut xhs = path.xhs.clone();
            xhs.push(xh);
            let p = path.p * pz * w;
            if t == horizon {
                out.push(Path { ys: path.ys.clone(), xs: path.xs.clone(), zs: zs.clone(), xhs, p });
                continue;
            }
            let y = path.ys[t];
            for y2 in 0..fs.ny {
                for x2 in 0..fs.nx {
                    let q = fs.py[y][y2] * fs.px[x][x2][y];
                    if q == 0.0 {
                        continue;
                    }
                    let mut ys = path.ys.clone();
                    ys.push(y2);
                    let mut xs = path.xs.clone();
                    xs.push(x2);
                    grow(fs, policy, horizon, Path { ys, xs, zs: zs.clone(), xhs: xhs.clone(), p: p * q }, out);
                }
            }
        }
    }
}

/// Sums `p` over paths grouped by `key`.
pub fn marginal<K: Ord>(paths: &[Path], key: impl Fn(&Path) -> Option<K>) -> BTreeMap<K, f64> {
    let mut out = BTreeMap::new();
    for path in paths {
        if let Some(k) = key(path) {
            *out.entry(k).or_insert(0.0) += path.p;
        }
    }
    out
}
