use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Simulator, SystemModel, UniformCells};
use crate::numeric::{check_distribution, normal_cdf, sample_categorical};
use crate::{Error, Result};

/// Finite surrogate: private chain x state-grid cells x measurement cells.
///
/// `Px[i][j][y] = P(x-cell j at t+1 | x-cell i, y)`, `Pz[i][k] = P(z-cell k | x-cell i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteSystem {
    pub ny: usize,
    pub nx: usize,
    pub nz: usize,
    #[serde(rename = "Py")]
    pub py: Vec<Vec<f64>>,
    #[serde(rename = "Px")]
    pub px: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "Pz")]
    pub pz: Vec<Vec<f64>>,
    pub mu_y0: Vec<f64>,
    pub mu_x0: Vec<f64>,
    pub centers: Vec<f64>,
}

const TOL: f64 = 1e-10;

impl FiniteSystem {
    pub fn validate(&self) -> Result<()> {
        let (ny, nx, nz) = (self.ny, self.nx, self.nz);
        if ny == 0 || nx == 0 || nz == 0 {
            return Err(Error::Config("finite system needs ny, nx, nz > 0".into()));
        }
        if ny.saturating_mul(nx).saturating_mul(nx) > 50_000_000 || nx.saturating_mul(nz) > 50_000_000 {
            return Err(Error::Config("finite system is too large".into()));
        }
        let shape = |name: &str, got: usize, want: usize| {
            if got != want {
                Err(Error::Config(format!("{name} has length {got}, expected {want}")))
            } else {
                Ok(())
            }
        };
        shape("Py", self.py.len(), ny)?;
        for (i, row) in self.py.iter().enumerate() {
            shape(&format!("Py[{i}]"), row.len(), ny)?;
            check_distribution(&format!("Py[{i}]"), row, TOL)?;
        }
        shape("Px", self.px.len(), nx)?;
        for (i, plane) in self.px.iter().enumerate() {
            shape(&format!("Px[{i}]"), plane.len(), nx)?;
            for (j, cell) in plane.iter().enumerate() {
                shape(&format!("Px[{i}][{j}]"), cell.len(), ny)?;
            }
            for y in 0..ny {
                let slice: Vec<f64> = plane.iter().map(|c| c[y]).collect();
                check_distribution(&format!("Px[{i}][.][{y}]"), &slice, TOL)?;
            }
        }
        shape("Pz", self.pz.len(), nx)?;
        for (i, row) in self.pz.iter().enumerate() {
            shape(&format!("Pz[{i}]"), row.len(), nz)?;
            check_distribution(&format!("Pz[{i}]"), row, TOL)?;
        }
        shape("mu_y0", self.mu_y0.len(), ny)?;
        check_distribution("mu_y0", &self.mu_y0, TOL)?;
        shape("mu_x0", self.mu_x0.len(), nx)?;
        check_distribution("mu_x0", &self.mu_x0, TOL)?;
        shape("centers", self.centers.len(), nx)?;
        if self.centers.iter().any(|c| !c.is_finite()) {
            return Err(Error::Config("centers must be finite".into()));
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let fs: FiniteSystem = serde_json::from_str(s)?;
        fs.validate()?;
        Ok(fs)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("finite system serializes")
    }

    /// One-step prediction `sum_x post[x] Px[x][.][y]`.
    pub fn predict(&self, post: &[f64], y: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.nx];
        for (x, &w) in post.iter().enumerate() {
            if w != 0.0 {
                for (o, p) in out.iter_mut().zip(&self.px[x]) {
                    *o += w * p[y];
                }
            }
        }
        out
    }
}

impl Simulator for FiniteSystem {
    type State = usize;

    fn n_private(&self) -> usize {
        self.ny
    }

    fn n_meas_cells(&self) -> usize {
        self.nz
    }

    fn private_label(&self, y: usize) -> i64 {
        y as i64
    }

    fn initial<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let y = sample_categorical(&self.mu_y0, rng);
        (y, sample_categorical(&self.mu_x0, rng))
    }

    fn advance<R: Rng + ?Sized>(&self, y: usize, x: &usize, rng: &mut R) -> (usize, usize) {
        let slice: Vec<f64> = self.px[*x].iter().map(|c| c[y]).collect();
        let x_next = sample_categorical(&slice, rng);
        (sample_categorical(&self.py[y], rng), x_next)
    }

    /// The measurement value of a finite system is its cell index.
    fn observe<R: Rng + ?Sized>(&self, x: &usize, rng: &mut R) -> (f64, usize) {
        let k = sample_categorical(&self.pz[*x], rng);
        (k as f64, k)
    }

    fn state_value(&self, x: &usize) -> f64 {
        self.centers[*x]
    }
}

/// Output of [`discretize`].
#[derive(Debug, Clone)]
pub struct Discretization {
    pub system: FiniteSystem,
    /// `(cell, y, mass)` for transition rows losing more than `1e-3` of
    /// their mass outside the grid before folding.
    pub boundary_leaks: Vec<(usize, usize, f64)>,
}

/// Gaussian cell masses of `N(mean, sd^2)` over `cells`, with the tails
/// folded into the end cells.
fn folded_masses(cells: &UniformCells, mean: f64, sd: f64) -> (Vec<f64>, f64) {
    let n = cells.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let (lo, hi) = cells.edges(i);
        let lo = if i == 0 { f64::NEG_INFINITY } else { lo };
        let hi = if i + 1 == n { f64::INFINITY } else { hi };
        out.push((normal_cdf((hi - mean) / sd) - normal_cdf((lo - mean) / sd)).max(0.0));
    }
    let leak = normal_cdf((cells.lo() - mean) / sd) + (1.0 - normal_cdf((cells.hi() - mean) / sd));
    let s: f64 = out.iter().sum();
    for v in &mut out {
        *v /= s;
    }
    (out, leak)
}

/// Builds the finite surrogate of `model` on the state grid `grid`.
pub fn discretize(model: &SystemModel, grid: &UniformCells) -> Result<Discretization> {
    if grid.is_empty() {
        return Err(Error::Config("empty state grid".into()));
    }
    let ny = model.chain.len();
    let nx = grid.len();
    let centers = grid.centers();
    let mut px = vec![vec![vec![0.0; ny]; nx]; nx];
    let mut boundary_leaks = Vec::new();
    for (i, &xc) in centers.iter().enumerate() {
        for y in 0..ny {
            let mean = model.dynamics.mean(xc, model.chain.label(y));
            let (masses, leak) = folded_masses(grid, mean, model.dynamics.sigma_w);
            if leak > 1e-3 {
                boundary_leaks.push((i, y, leak));
            }
            for (j, m) in masses.into_iter().enumerate() {
                px[i][j][y] = m;
            }
        }
    }
    if !boundary_leaks.is_empty() {
        log::warn!(
            "{} transition rows leak more than 1e-3 of their mass outside [{}, {})",
            boundary_leaks.len(),
            grid.lo(),
            grid.hi()
        );
    }
    let pz = centers
        .iter()
        .map(|&xc| folded_masses(&model.quantizer, model.measurement.c * xc, model.measurement.sigma_v).0)
        .collect();
    let mut mu_x0 = vec![0.0; nx];
    mu_x0[grid.cell(model.x0)] = 1.0;
    let system = FiniteSystem {
        ny,
        nx,
        nz: model.quantizer.len(),
        py: model.chain.transition().to_vec(),
        px,
        pz,
        mu_y0: model.chain.initial().to_vec(),
        mu_x0,
        centers,
    };
    system.validate()?;
    Ok(Discretization { system, boundary_leaks })
}
