#![allow(dead_code)]

use std::f64::consts::PI;

use ssav_ch::forcing::Sigma;

/// Direct evaluation of one SAV step in d = 1 with dense loops and a joint
/// `(M+1) x (M+1)` solve for `(X', r')`.
pub struct DenseOracle {
    pub modes: usize,
    pub nodes: usize,
    pub kappa: f64,
    pub tau: f64,
    pub theta: f64,
    pub sigma: Sigma,
}

pub struct DenseStep {
    pub x: Vec<f64>,
    pub r: f64,
    pub b: Vec<f64>,
    pub gamma: f64,
}

impl DenseOracle {
    fn basis(&self, j: usize, i: usize) -> f64 {
        let h = 1.0 / (self.nodes + 1) as f64;
        2f64.sqrt() * (j as f64 * PI * i as f64 * h).sin()
    }

    fn synth(&self, c: &[f64]) -> Vec<f64> {
        (1..=self.nodes).map(|i| (1..=self.modes).map(|j| c[j - 1] * self.basis(j, i)).sum()).collect()
    }

    fn analyze(&self, v: &[f64]) -> Vec<f64> {
        let h = 1.0 / (self.nodes + 1) as f64;
        (1..=self.modes).map(|j| h * (1..=self.nodes).map(|i| v[i - 1] * self.basis(j, i)).sum::<f64>()).collect()
    }

    pub fn ep(&self, x: &[f64]) -> f64 {
        let h = 1.0 / (self.nodes + 1) as f64;
        h * self.synth(x).iter().map(|u| 0.25 * u.powi(4) - 0.5 * u * u).sum::<f64>() + self.theta
    }

    /// `dw` holds the noise coefficients already scaled by `√q_j √τ`, padded to `M`.
    pub fn step(&self, x: &[f64], r: f64, dw: &[f64], stochastic: bool) -> DenseStep {
        let m = self.modes;
        let xv = self.synth(x);
        let wv = self.synth(dw);
        let g = self.analyze(&xv.iter().zip(&wv).map(|(u, w)| self.sigma.value(*u) * w).collect::<Vec<_>>());
        let fp = self.analyze(&xv.iter().map(|u| u * u * u - u).collect::<Vec<_>>());
        let ep = self.ep(x);
        let sq = ep.sqrt();
        let mut b: Vec<f64> = fp.iter().map(|v| v / sq).collect();
        if stochastic {
            let proj: f64 = fp.iter().zip(&g).map(|(a, b)| a * b).sum();
            let gv = self.synth(&g);
            let curv = self.analyze(&xv.iter().zip(&gv).map(|(u, w)| (3.0 * u * u - 1.0) * w).collect::<Vec<_>>());
            for j in 0..m {
                b[j] += -fp[j] * proj / (4.0 * ep * sq) + curv[j] / (2.0 * sq);
            }
        }
        let lam: Vec<f64> = (1..=m).map(|j| PI * PI * (j * j) as f64).collect();
        let e: Vec<f64> = lam.iter().map(|l| (-self.kappa * l * l * self.tau).exp()).collect();
        let phi: Vec<f64> = lam.iter().zip(&e).map(|(l, e)| (1.0 - e) / (self.kappa * l)).collect();
        let gamma = 0.5 * (0..m).map(|j| phi[j] * b[j] * b[j]).sum::<f64>();

        // X'_j + φ_j b_j r' = E_j (X_j + g_j);  r' - ½⟨b, X'⟩ = r - ½⟨b, X⟩
        let n = m + 1;
        let mut a = vec![vec![0.0; n + 1]; n];
        for j in 0..m {
            a[j][j] = 1.0;
            a[j][m] = phi[j] * b[j];
            a[j][n] = e[j] * (x[j] + g[j]);
            a[m][j] = -0.5 * b[j];
        }
        a[m][m] = 1.0;
        a[m][n] = r - 0.5 * (0..m).map(|j| b[j] * x[j]).sum::<f64>();
        let z = gauss(a);
        DenseStep { x: z[..m].to_vec(), r: z[m], b, gamma }
    }
}

/// Gaussian elimination with partial pivoting on an augmented matrix.
pub fn gauss(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for c in k..=n {
                a[i][c] -= f * a[k][c];
            }
        }
    }
    let mut z = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|c| a[k][c] * z[c]).sum();
        z[k] = (a[k][n] - s) / a[k][k];
    }
    z
}
